"""Gaussian-mixture PHD filter baseline with (extended) Kalman prediction/update.

State space is (distance, distance rate) in meters; delays convert through
the speed of light.  The dynamic and measurement models are linear, so the
EKF reduces to a Kalman filter; ``measurement_jacobian`` is the hook for a
nonlinear replacement.  Births are measurement-adaptive: one component per
measurement of the previous scan whose target likelihood did not exceed the
clutter intensity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import SPEED_OF_LIGHT, SounderConfig
from .tracker import Track, TrackState, with_doppler

__all__ = [
    "GmphdParams",
    "GaussianComponent",
    "GaussianMixture",
    "gmphd_predict",
    "gmphd_update",
    "prune_merge",
    "gmphd_track",
    "target_likelihood",
]


@dataclass(frozen=True)
class GmphdParams:
    """Filter parameters; the core seven follow the published configuration."""

    process_noise_std: float = 0.3          # m/s^2
    meas_noise_std: float = 3.0e-3          # m
    p_survival: float = 0.99
    p_detect: float = 0.95
    truncation_threshold: float = 1.0e-2
    merge_threshold: float = 1.0e-1
    min_weight: float = 0.2
    clutter_intensity: float = 1.0e-4       # per meter of measurement space
    birth_weight: float = 1.0e-3
    birth_pos_std: float = 0.1              # m
    birth_vel_std: float = 50.0             # m/s
    max_components: int = 100
    # track post-filter (unlikely per-snapshot changes) and coasting
    max_gain_change_db: float = 10.0
    max_delay_change_s: float = 1.0e-9
    max_coast_scans: int = 1

    def __post_init__(self):
        for name in ("p_survival", "p_detect"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1]")
        for name in ("process_noise_std", "meas_noise_std", "birth_pos_std", "birth_vel_std"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: np.ndarray
    cov: np.ndarray
    label: int

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=np.float64).reshape(2)
        p = np.asarray(self.cov, dtype=np.float64).reshape(2, 2)
        if self.weight < 0 or not np.isfinite(self.weight):
            raise ValueError("component weight must be finite and non-negative")
        np.linalg.cholesky(p)  # positive definiteness
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", p)


@dataclass(frozen=True)
class GaussianMixture:
    """Weighted Gaussian components carrying the PHD intensity."""

    components: tuple = ()
    next_label: int = 0

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))

    def __len__(self) -> int:
        return len(self.components)

    @property
    def total_weight(self) -> float:
        return sum(c.weight for c in self.components)


def _cv_matrices(dt: float, sigma_a: float):
    f = np.array([[1.0, dt], [0.0, 1.0]])
    g = np.array([[0.5 * dt * dt], [dt]])
    q = (sigma_a ** 2) * (g @ g.T)
    return f, q


def measurement_jacobian(mean: np.ndarray) -> np.ndarray:
    """H of the (linear) distance measurement model."""
    return np.array([[1.0, 0.0]])


def gmphd_predict(
    mixture: GaussianMixture,
    params: GmphdParams,
    dt_s: float,
    birth_candidates=(),
) -> GaussianMixture:
    """Survival-scaled constant-velocity prediction plus adaptive births.

    ``birth_candidates`` are measurement positions (m) from the previous
    scan that no existing target claimed; each spawns one birth component.
    """
    if dt_s <= 0:
        raise ValueError("dt_s must be positive")
    f, q = _cv_matrices(dt_s, params.process_noise_std)
    comps = [
        GaussianComponent(
            weight=params.p_survival * c.weight,
            mean=f @ c.mean,
            cov=f @ c.cov @ f.T + q,
            label=c.label,
        )
        for c in mixture.components
    ]
    label = mixture.next_label
    birth_cov = np.diag([params.birth_pos_std ** 2, params.birth_vel_std ** 2])
    for z in birth_candidates:
        comps.append(
            GaussianComponent(
                weight=params.birth_weight,
                mean=np.array([float(z), 0.0]),
                cov=birth_cov,
                label=label,
            )
        )
        label += 1
    return GaussianMixture(comps, next_label=label)


def _gauss(z: float, mu: float, s: float) -> float:
    return math.exp(-0.5 * (z - mu) ** 2 / s) / math.sqrt(2.0 * math.pi * s)


def target_likelihood(mixture: GaussianMixture, z: float, params: GmphdParams) -> float:
    """Sum of detection-weighted measurement likelihoods over all components."""
    total = 0.0
    for c in mixture.components:
        h = measurement_jacobian(c.mean)
        s = float(h @ c.cov @ h.T) + params.meas_noise_std ** 2
        total += params.p_detect * c.weight * _gauss(z, float(h @ c.mean), s)
    return total


def gmphd_update(mixture: GaussianMixture, measurements, params: GmphdParams) -> GaussianMixture:
    """Standard PHD update: missed-detection copies plus per-measurement Kalman copies."""
    r = params.meas_noise_std ** 2
    comps = [
        GaussianComponent((1.0 - params.p_detect) * c.weight, c.mean, c.cov, c.label)
        for c in mixture.components
        if (1.0 - params.p_detect) * c.weight > 0.0
    ]
    if mixture.components:
        updated = []
        for c in mixture.components:
            h = measurement_jacobian(c.mean)
            s = float(h @ c.cov @ h.T) + r
            k = (c.cov @ h.T) / s
            p = c.cov - k @ h @ c.cov
            p = 0.5 * (p + p.T)
            updated.append((c, float(h @ c.mean), s, k.reshape(2), p))
        for z in measurements:
            z = float(z)
            weights = [params.p_detect * c.weight * _gauss(z, mu, s) for c, mu, s, _, _ in updated]
            denom = params.clutter_intensity + sum(weights)
            if denom <= 0.0:
                continue
            for (c, mu, _, k, p), w in zip(updated, weights):
                wn = w / denom
                if wn <= 0.0:
                    continue
                comps.append(
                    GaussianComponent(wn, c.mean + k * (z - mu), p, c.label)
                )
    return GaussianMixture(comps, next_label=mixture.next_label)


def prune_merge(mixture: GaussianMixture, params: GmphdParams) -> GaussianMixture:
    """Drop light components, merge near-coincident ones, cap the count.

    Merging is greedy from the heaviest remaining component, pulling in every
    component within squared Mahalanobis distance ``merge_threshold`` of it
    (measured in each candidate's own covariance); the merge is
    moment-preserving and keeps the heaviest member's label.
    """
    alive = [c for c in mixture.components if c.weight >= params.truncation_threshold]
    merged = []
    while alive:
        i = max(range(len(alive)), key=lambda j: alive[j].weight)
        pick = alive[i]
        group = []
        rest = []
        for j, c in enumerate(alive):
            if j == i:
                group.append(c)
                continue
            d = c.mean - pick.mean
            dist = float(d @ np.linalg.solve(c.cov, d))
            (group if dist <= params.merge_threshold else rest).append(c)
        w = sum(c.weight for c in group)
        mean = sum(c.weight * c.mean for c in group) / w
        cov = np.zeros((2, 2))
        for c in group:
            d = (c.mean - mean).reshape(2, 1)
            cov += c.weight * (c.cov + d @ d.T)
        cov /= w
        merged.append(GaussianComponent(w, mean, 0.5 * (cov + cov.T), pick.label))
        alive = rest
    merged.sort(key=lambda c: -c.weight)
    return GaussianMixture(merged[: params.max_components], next_label=mixture.next_label)


def gmphd_track(
    detections,
    params: GmphdParams,
    config: SounderConfig,
    snapshot_offset: int = 0,
) -> list[Track]:
    """Full GM-PHD recursion over per-snapshot detections, returning tracks.

    Targets are extracted at weights above ``min_weight`` (one state per
    label and scan); a previously extracted label whose weight is consistent
    with a single missed detection coasts for up to ``max_coast_scans``
    scans on its predicted state.  Extracted states claim the nearest
    unclaimed detection within the delay-change limit for their magnitude;
    assembled tracks are then split wherever the per-scan delay or magnitude
    change exceeds the post-filter limits.
    """
    n_scans = len(detections)
    mixture = GaussianMixture()
    birth_candidates: list[float] = []
    coast_left: dict[int, int] = {}
    extracted_prev: set[int] = set()
    per_scan: list[dict] = []

    for n in range(n_scans):
        z = [d.delay_s * SPEED_OF_LIGHT for d in detections[n]]
        mixture = gmphd_predict(mixture, params, config.snapshot_period_s, birth_candidates)
        claim_levels = [target_likelihood(mixture, zi, params) for zi in z]
        mixture = gmphd_update(mixture, z, params)
        mixture = prune_merge(mixture, params)
        birth_candidates = [
            zi for zi, lam in zip(z, claim_levels) if lam <= params.clutter_intensity
        ]

        best: dict[int, GaussianComponent] = {}
        for c in mixture.components:
            if c.label not in best or c.weight > best[c.label].weight:
                best[c.label] = c
        scan_states: dict[int, tuple] = {}
        coast_floor = max(
            params.truncation_threshold,
            params.min_weight * (1.0 - params.p_detect) * params.p_survival,
        )
        for label, c in best.items():
            if c.weight > params.min_weight:
                scan_states[label] = (c.mean[0] / SPEED_OF_LIGHT, c.weight, False)
                coast_left[label] = params.max_coast_scans
            elif (
                label in extracted_prev
                and params.p_detect < 1.0
                and coast_left.get(label, 0) > 0
                and c.weight >= coast_floor
            ):
                scan_states[label] = (c.mean[0] / SPEED_OF_LIGHT, c.weight, True)
                coast_left[label] -= 1
        extracted_prev = set(scan_states)
        per_scan.append(scan_states)

    return _assemble_tracks(per_scan, detections, params, config, snapshot_offset)


def _assemble_tracks(per_scan, detections, params, config, snapshot_offset):
    # per scan: attach detections (exclusive, nearest within the delay gate)
    last_gain: dict[int, float] = {}
    attached: list[dict] = []
    for n, scan_states in enumerate(per_scan):
        dets = detections[n]
        taken: set[int] = set()
        scan_attach: dict[int, tuple] = {}
        order = sorted(scan_states.items(), key=lambda kv: (-kv[1][1], kv[0]))
        for label, (delay, weight, coasted) in order:
            best_i = None
            best_d = None
            if not coasted:
                for i, d in enumerate(dets):
                    if i in taken:
                        continue
                    dist = abs(d.delay_s - delay)
                    if dist <= params.max_delay_change_s and (best_d is None or dist < best_d):
                        best_i, best_d = i, dist
            if best_i is not None:
                taken.add(best_i)
                gain_db = dets[best_i].gain_db
                last_gain[label] = gain_db
                scan_attach[label] = (delay, gain_db, best_i)
            elif label in last_gain:
                scan_attach[label] = (delay, last_gain[label], None)
            # a label whose very first state has no attachable detection is dropped
        attached.append(scan_attach)

    # contiguous per-label segments
    segments: list[tuple[int, list]] = []
    open_seg: dict[int, list] = {}
    for n, scan_attach in enumerate(attached):
        for label in list(open_seg):
            if label not in scan_attach:
                segments.append((label, open_seg.pop(label)))
        for label, (delay, gain_db, ref) in scan_attach.items():
            open_seg.setdefault(label, []).append((n, delay, gain_db, ref))
    segments.extend((label, seg) for label, seg in open_seg.items())

    # post-filter: split at unlikely per-scan changes, keep lifetime >= 3
    pieces = []
    for _, seg in segments:
        cur = [seg[0]]
        for prev, nxt in zip(seg, seg[1:]):
            if (
                abs(nxt[1] - prev[1]) > params.max_delay_change_s
                or abs(nxt[2] - prev[2]) > params.max_gain_change_db
            ):
                pieces.append(cur)
                cur = [nxt]
            else:
                cur.append(nxt)
        pieces.append(cur)

    tracks = []
    for piece in pieces:
        if len(piece) < 3:
            continue
        tracks.append(
            Track(
                id=len(tracks),
                start_snapshot=snapshot_offset + piece[0][0],
                states=tuple(TrackState(gain_db=g, delay_s=d) for _, d, g, _ in piece),
                member_refs=tuple(r for _, _, _, r in piece),
            )
        )
    return with_doppler(tracks, config)
