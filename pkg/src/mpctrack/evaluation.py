"""Evaluation curves and run statistics.

Covers the artificial two-track performance sweep (track counts and delay
errors vs MPC power, with and without windowing), channel-gain capture and
loss series, power-std / MPC-count / birth-death CDFs, and the power-loss
ledger that combines the short-term dB loss with the two power fractions
excluded by the long-term stage.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import SounderConfig, power_db
from .detect import DetectConfig, channel_energy, detect_dataset
from .gmphd import GmphdParams, gmphd_track
from .longterm import Association, SetSummary
from .synth import Dataset, PulseModel, synth_pulse, two_track_scenario
from .tracker import ChangeGate, SearchTolerance, Track, track_snapshots, with_doppler

__all__ = [
    "Cdf",
    "EvalCurvePoint",
    "TwoTrackRun",
    "GainSeries",
    "PowerLossLedger",
    "RunStatistics",
    "TwoTrackProtocol",
    "run_two_track",
    "evaluate_artificial",
    "channel_gain_series",
    "power_std_cdf",
    "mpc_count_cdf",
    "birth_death_rate",
    "power_loss_ledger",
]


@dataclass(frozen=True)
class Cdf:
    """Empirical distribution: sorted values with cumulative probabilities."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        p = np.asarray(self.probs, dtype=np.float64)
        if v.shape != p.shape or v.ndim != 1:
            raise ValueError("values and probs must be matching 1-D vectors")
        if v.size:
            if np.any(np.diff(v) < 0) or np.any(np.diff(p) < 0):
                raise ValueError("CDF knots must be non-decreasing")
            if not math.isclose(float(p[-1]), 1.0, rel_tol=1e-12):
                raise ValueError("CDF must end at 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_samples(cls, samples) -> "Cdf":
        v = np.sort(np.asarray(samples, dtype=np.float64))
        if v.size == 0:
            return cls(np.empty(0), np.empty(0))
        return cls(v, np.arange(1, v.size + 1) / v.size)

    def evaluate(self, x: float) -> float:
        if self.values.size == 0:
            return 0.0
        return float(np.searchsorted(self.values, x, side="right")) / self.values.size


@dataclass(frozen=True)
class TwoTrackProtocol:
    """Geometry of the artificial two-track run used for the sweeps."""

    delay_gap_start_s: float = 10.0e-9
    delay_gap_stop_s: float = 0.0
    num_snapshots: int = 400
    noise_db: float = -140.0
    exclude_below_separation_s: float = 2.5e-9
    subbin_refine: bool = True
    truth_match_radius_s: float = 1.0e-9


@dataclass(frozen=True)
class TwoTrackRun:
    """Outcome of one artificial run for one tracker and windowing setting."""

    num_tracks: int
    region_state_counts: np.ndarray
    delay_errors_s: np.ndarray
    spurious_tracks: int
    elapsed_tracking_s: float

    @property
    def mean_delay_error_s(self) -> float:
        return float(np.mean(self.delay_errors_s)) if self.delay_errors_s.size else math.nan


@dataclass(frozen=True)
class EvalCurvePoint:
    """One point of the artificial-channel performance curves."""

    mpc_power_db: float
    windowing: bool
    algorithm: str
    num_tracks_mean: float
    mean_delay_error_s: float
    num_runs: int


def _track_for(algorithm: str, detections, config, gate, tol, gmphd_params):
    if algorithm == "proposed":
        return with_doppler(track_snapshots(detections, gate, tol), config)
    if algorithm == "gmphd":
        return gmphd_track(detections, gmphd_params, config)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def run_two_track(
    mpc_power_db: float,
    windowing: bool,
    algorithm: str,
    seed: int,
    config: SounderConfig,
    protocol: TwoTrackProtocol = TwoTrackProtocol(),
    gate: ChangeGate | None = None,
    tol: SearchTolerance | None = None,
    gmphd_params: GmphdParams | None = None,
    detections=None,
    dataset: Dataset | None = None,
) -> TwoTrackRun:
    """One artificial two-track run: synthesize, detect, track, compare to truth.

    Statistics are restricted to snapshots where the true separation exceeds
    the protocol's exclusion bound; tracks are matched to truth by nearest
    mean delay within the match radius and unmatched tracks count as
    spurious.
    """
    if dataset is None:
        dataset = two_track_scenario(
            mpc_power_db,
            protocol.noise_db,
            protocol.delay_gap_start_s,
            protocol.delay_gap_stop_s,
            protocol.num_snapshots,
            config,
            seed=seed,
        )
    cfg = DetectConfig(
        window_shape_a=6.0 if windowing else 0.0,
        subbin_refine=protocol.subbin_refine,
    )
    if detections is None:
        pulse = synth_pulse(dataset.config, 0.0)
        detections = detect_dataset(dataset, pulse, cfg)
    t0 = time.perf_counter()
    tracks = _track_for(
        algorithm, detections, dataset.config, gate, tol, gmphd_params or GmphdParams()
    )
    elapsed = time.perf_counter() - t0

    truth = dataset.truth
    n = len(dataset)
    sep = np.abs(truth[0].delays_s - truth[1].delays_s)
    region = sep > protocol.exclude_below_separation_s

    region_tracks = [
        t for t in tracks if any(region[m] for m in t.snapshots())
    ]
    counts = np.zeros(n, dtype=int)
    errors = []
    spurious = 0
    for t in region_tracks:
        snaps = np.array([m for m in t.snapshots() if region[m]])
        delays = np.array([s.delay_s for s, m in zip(t.states, t.snapshots()) if region[m]])
        counts[snaps] += 1
        best = None
        for g in truth:
            mask = (snaps >= g.birth_snapshot) & (snaps < g.death_snapshot)
            if not mask.any():
                continue
            err = np.abs(delays[mask] - g.delays_s[snaps[mask] - g.birth_snapshot])
            mean_err = float(np.mean(err))
            if best is None or mean_err < best[0]:
                best = (mean_err, err)
        if best is not None and best[0] <= protocol.truth_match_radius_s:
            errors.append(best[1])
        else:
            spurious += 1
    return TwoTrackRun(
        num_tracks=len(region_tracks),
        region_state_counts=counts[region],
        delay_errors_s=np.concatenate(errors) if errors else np.empty(0),
        spurious_tracks=spurious,
        elapsed_tracking_s=elapsed,
    )


def evaluate_artificial(
    power_sweep_db,
    windowing_settings,
    algorithms,
    seeds,
    config: SounderConfig,
    protocol: TwoTrackProtocol = TwoTrackProtocol(),
    gate: ChangeGate | None = None,
    tol: SearchTolerance | None = None,
    gmphd_params: GmphdParams | None = None,
) -> list[EvalCurvePoint]:
    """Sweep MPC power, windowing and algorithms over seeded artificial runs.

    Deterministic per seed; detection is shared between algorithms at the
    same sweep point.
    """
    power_sweep_db = list(power_sweep_db)
    if not power_sweep_db:
        raise ValueError("empty power sweep")
    points = []
    for power in power_sweep_db:
        for windowing in windowing_settings:
            runs: dict[str, list[TwoTrackRun]] = {a: [] for a in algorithms}
            for seed in seeds:
                dataset = two_track_scenario(
                    power,
                    protocol.noise_db,
                    protocol.delay_gap_start_s,
                    protocol.delay_gap_stop_s,
                    protocol.num_snapshots,
                    config,
                    seed=seed,
                )
                pulse = synth_pulse(dataset.config, 0.0)
                cfg = DetectConfig(
                    window_shape_a=6.0 if windowing else 0.0,
                    subbin_refine=protocol.subbin_refine,
                )
                detections = detect_dataset(dataset, pulse, cfg)
                for algorithm in algorithms:
                    runs[algorithm].append(
                        run_two_track(
                            power,
                            windowing,
                            algorithm,
                            seed,
                            config,
                            protocol,
                            gate,
                            tol,
                            gmphd_params,
                            detections=detections,
                            dataset=dataset,
                        )
                    )
            for algorithm in algorithms:
                rr = runs[algorithm]
                all_errors = np.concatenate([r.delay_errors_s for r in rr])
                points.append(
                    EvalCurvePoint(
                        mpc_power_db=power,
                        windowing=windowing,
                        algorithm=algorithm,
                        num_tracks_mean=float(np.mean([r.num_tracks for r in rr])),
                        mean_delay_error_s=(
                            float(np.mean(all_errors)) if all_errors.size else math.nan
                        ),
                        num_runs=len(rr),
                    )
                )
    return points


@dataclass(frozen=True)
class GainSeries:
    """Per-snapshot original, detected and tracked channel gain, all in dB."""

    original_db: np.ndarray
    detected_db: np.ndarray
    tracked_db: dict

    def loss_detected_db(self) -> np.ndarray:
        return self.original_db - self.detected_db

    def loss_tracked_db(self, algorithm: str) -> np.ndarray:
        return self.original_db - self.tracked_db[algorithm]

    def loss_mse_vs_detected(self, algorithm: str) -> float:
        """Mean-square difference between tracked and detected loss (dB^2)."""
        d = self.loss_tracked_db(algorithm) - self.loss_detected_db()
        d = d[np.isfinite(d)]
        return float(np.mean(d * d)) if d.size else math.nan


def channel_gain_series(
    dataset: Dataset,
    pulse: PulseModel,
    cfg: DetectConfig,
    detections,
    tracks_by_algorithm: dict,
) -> GainSeries:
    """Original / detected / tracked channel gain per snapshot.

    Original is the energy of the thresholded, windowed snapshot normalized
    to pulse energy; detected and tracked sum the squared magnitudes of the
    detections and of the track states present at each snapshot.
    """
    n = len(dataset)
    original = np.array(
        [channel_energy(s, pulse, cfg) for s in dataset.snapshots]
    )
    detected = np.zeros(n)
    for i, dets in enumerate(detections):
        detected[i] = sum(abs(d.gain) ** 2 for d in dets)
    tracked = {}
    for algo, tracks in tracks_by_algorithm.items():
        series = np.zeros(n)
        for t in tracks:
            for s, m in zip(t.states, t.snapshots()):
                series[m] += 10.0 ** (s.gain_db / 10.0)
        tracked[algo] = _to_db(series)
    return GainSeries(
        original_db=_to_db(original),
        detected_db=_to_db(detected),
        tracked_db=tracked,
    )


def _to_db(power_linear: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(power_linear)


def power_std_cdf(tracks, snapshots_per_set: int) -> tuple[Cdf, Cdf]:
    """CDF of per-track gain standard deviation, all tracks and full-lifetime only."""
    if not tracks:
        return Cdf.from_samples([]), Cdf.from_samples([])
    stds = []
    full = []
    for t in tracks:
        s = float(np.std(t.gains_db()))
        stds.append(s)
        if t.lifetime == snapshots_per_set and t.start_snapshot % snapshots_per_set == 0:
            full.append(s)
    return Cdf.from_samples(stds), Cdf.from_samples(full)


def mpc_count_cdf(summaries_by_set) -> Cdf:
    """CDF of the number of full-lifetime MPCs per set."""
    return Cdf.from_samples([len(s) for s in summaries_by_set])


def birth_death_rate(
    summaries_by_set,
    associations_by_boundary,
    displacement_m,
) -> tuple[Cdf, Cdf]:
    """Birth/death rate per meter of cumulative vehicle travel.

    A summary with no association from the previous set is a birth, one
    with no association into the next set is a death; both counts divide by
    the combined distance the two vehicles traveled over the set interval.
    """
    n_bounds = len(associations_by_boundary)
    if n_bounds != len(summaries_by_set) - 1:
        raise ValueError("need one association list per set boundary")
    disp = np.broadcast_to(np.asarray(displacement_m, dtype=np.float64), (n_bounds,))
    if np.any(disp <= 0):
        raise ValueError("displacement per set must be positive")
    births = []
    deaths = []
    for i, assocs in enumerate(associations_by_boundary):
        sources = {(a.from_summary.set_index, a.from_summary.source_track_id) for a in assocs}
        targets = {(a.to_summary.set_index, a.to_summary.source_track_id) for a in assocs}
        dead = sum(
            1
            for s in summaries_by_set[i]
            if (s.set_index, s.source_track_id) not in sources
        )
        born = sum(
            1
            for s in summaries_by_set[i + 1]
            if (s.set_index, s.source_track_id) not in targets
        )
        births.append(born / disp[i])
        deaths.append(dead / disp[i])
    return Cdf.from_samples(births), Cdf.from_samples(deaths)


@dataclass(frozen=True)
class PowerLossLedger:
    """Accounting of where channel power is lost along the pipeline."""

    detection_loss_db: float
    short_term_loss_db: float
    non_full_lifetime_fraction: float
    long_term_unassociated_fraction: float

    @property
    def total_db(self) -> float:
        return (
            self.short_term_loss_db
            - 10.0 * math.log10(1.0 - self.non_full_lifetime_fraction)
            - 10.0 * math.log10(1.0 - self.long_term_unassociated_fraction)
        )


def power_loss_ledger(
    gains: GainSeries,
    tracks,
    summaries_by_set,
    associations_by_boundary,
    snapshots_per_set: int,
    algorithm: str = "proposed",
) -> PowerLossLedger:
    """Combine per-stage losses into the total tracking power loss.

    The dB losses are means over snapshots; the two fractions are
    power-weighted over the whole run (non-full-lifetime tracked power, and
    full-lifetime summary power without any long-term association).
    """
    det_loss = gains.loss_detected_db()
    trk_loss = gains.loss_tracked_db(algorithm)
    finite = np.isfinite(det_loss) & np.isfinite(trk_loss)
    detection_loss_db = float(np.mean(det_loss[finite]))
    short_term_loss_db = float(np.mean(trk_loss[finite]))

    total_power = 0.0
    full_power = 0.0
    for t in tracks:
        p = float(np.sum(10.0 ** (t.gains_db() / 10.0)))
        total_power += p
        if t.lifetime == snapshots_per_set and t.start_snapshot % snapshots_per_set == 0:
            full_power += p
    nfl = 1.0 - full_power / total_power if total_power > 0 else 0.0

    associated = set()
    for assocs in associations_by_boundary:
        for a in assocs:
            associated.add((a.from_summary.set_index, a.from_summary.source_track_id))
            associated.add((a.to_summary.set_index, a.to_summary.source_track_id))
    summary_power = 0.0
    unassociated_power = 0.0
    for per_set in summaries_by_set:
        for s in per_set:
            summary_power += s.mean_power
            if (s.set_index, s.source_track_id) not in associated:
                unassociated_power += s.mean_power
    ltu = unassociated_power / summary_power if summary_power > 0 else 0.0

    return PowerLossLedger(
        detection_loss_db=detection_loss_db,
        short_term_loss_db=short_term_loss_db,
        non_full_lifetime_fraction=nfl,
        long_term_unassociated_fraction=ltu,
    )


@dataclass(frozen=True)
class RunStatistics:
    """Bundle of run-level distributions and the loss ledger."""

    power_std_all: Cdf
    power_std_full: Cdf
    mpc_count: Cdf
    birth_rate: Cdf | None = None
    death_rate: Cdf | None = None
    ledger: PowerLossLedger | None = None
