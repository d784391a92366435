"""Association of full-lifetime tracks across recording-set gaps.

Each full-lifetime short-term track collapses to one summary per set; tracks
in the next set are gated by maximum gain/delay change, the candidate
closest to the Doppler-predicted delay is selected and kept only when the
prediction errors in both directions stay within the tier threshold.

The per-set delay drift follows from the Doppler estimate as
``dtau = -(nu / f_c) * T_r`` (inverting ``nu = -m f_c``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import SounderConfig
from .tracker import Track

__all__ = [
    "SetSummary",
    "LongGate",
    "Association",
    "DEFAULT_TIERS",
    "summarize_set",
    "predict_forward",
    "predict_backward",
    "link_sets",
]

DEFAULT_TIERS = (0.1e-9, 0.2e-9, 0.5e-9, 1.0e-9)


@dataclass(frozen=True)
class SetSummary:
    """Mean gain/delay, lifetime and Doppler of one full-lifetime track."""

    mean_gain_db: float
    mean_delay_s: float
    lifetime: int
    doppler_hz: float
    set_index: int
    source_track_id: int

    @property
    def mean_power(self) -> float:
        return 10.0 ** (self.mean_gain_db / 10.0)


@dataclass(frozen=True)
class LongGate:
    """Maximum set-to-set delay and magnitude change for candidate gating."""

    max_delay_change_s: float = 1.0e-9
    max_gain_change_db: float = 5.0

    def __post_init__(self):
        if self.max_delay_change_s <= 0 or self.max_gain_change_db <= 0:
            raise ValueError("long-term gate bounds must be positive")

    def admits(self, a: SetSummary, b: SetSummary) -> bool:
        return (
            abs(a.mean_gain_db - b.mean_gain_db) <= self.max_gain_change_db
            and abs(a.mean_delay_s - b.mean_delay_s) <= self.max_delay_change_s
        )


@dataclass(frozen=True)
class Association:
    """Two-way accepted link between summaries of adjacent sets."""

    from_summary: SetSummary
    to_summary: SetSummary
    tier_s: float
    forward_error_s: float
    backward_error_s: float


def summarize_set(tracks, config: SounderConfig, set_index: int | None = None) -> list[SetSummary]:
    """Summaries of the full-lifetime tracks of one set.

    Only tracks spanning every snapshot of the set qualify; gains average in
    dB, delays in seconds, and the Doppler estimate carries over from the
    short-term regression.
    """
    n_snap = config.snapshots_per_set
    out = []
    for t in tracks:
        if t.lifetime != n_snap:
            continue
        if t.start_snapshot % n_snap != 0:
            continue
        idx = set_index if set_index is not None else t.start_snapshot // n_snap
        out.append(
            SetSummary(
                mean_gain_db=float(np.mean(t.gains_db())),
                mean_delay_s=float(np.mean(t.delays())),
                lifetime=t.lifetime,
                doppler_hz=t.doppler_hz,
                set_index=idx,
                source_track_id=t.id,
            )
        )
    return out


def predict_forward(summary: SetSummary, config: SounderConfig) -> float:
    """Delay predicted one set period ahead from the summary's Doppler."""
    return summary.mean_delay_s - (summary.doppler_hz / config.carrier_hz) * config.set_period_s


def predict_backward(summary: SetSummary, config: SounderConfig) -> float:
    """Delay predicted one set period back from the summary's Doppler."""
    return summary.mean_delay_s + (summary.doppler_hz / config.carrier_hz) * config.set_period_s


def link_sets(
    curr,
    nxt,
    gate: LongGate,
    config: SounderConfig,
    tiers=DEFAULT_TIERS,
) -> list[Association]:
    """Greedy strongest-first two-way association between adjacent sets.

    For each current summary (descending mean gain) the gated candidates in
    the next set are narrowed to the one closest to the forward-predicted
    delay; the link is accepted only if the forward error and the error of
    the candidate's own backward prediction both stay within the largest
    tier.  Accepted candidates are claimed exclusively.
    """
    tiers = tuple(sorted(tiers))
    if not tiers:
        raise ValueError("need at least one tier")
    out: list[Association] = []
    taken: set[int] = set()
    order = sorted(range(len(curr)), key=lambda i: (-curr[i].mean_gain_db, curr[i].mean_delay_s))
    for i in order:
        q = curr[i]
        cands = [
            j
            for j in range(len(nxt))
            if j not in taken and gate.admits(q, nxt[j])
        ]
        if not cands:
            continue
        forward = predict_forward(q, config)
        eta = min(
            cands,
            key=lambda j: (abs(forward - nxt[j].mean_delay_s), nxt[j].mean_delay_s, j),
        )
        cand = nxt[eta]
        d_forward = abs(forward - cand.mean_delay_s)
        d_backward = abs(predict_backward(cand, config) - q.mean_delay_s)
        if d_forward <= tiers[-1] and d_backward <= tiers[-1]:
            tier = next(t for t in tiers if d_forward <= t and d_backward <= t)
            taken.add(eta)
            out.append(
                Association(
                    from_summary=q,
                    to_summary=cand,
                    tier_s=tier,
                    forward_error_s=d_forward,
                    backward_error_s=d_backward,
                )
            )
    return out
