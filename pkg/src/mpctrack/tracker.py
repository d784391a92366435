"""Low-complexity snapshot-to-snapshot MPC tracking.

Tracks are grown greedily: start from the strongest unclaimed detection,
gate direction candidates in the next snapshot by maximum physical change,
confirm with a linear prediction into the third snapshot, then extend with
prediction-centered search boxes until no detection falls inside.  Claims
are exclusive and permanent; a confirmed track is never bridged across a
missing detection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import SounderConfig, power_db

__all__ = [
    "TrackState",
    "ChangeGate",
    "SearchTolerance",
    "Track",
    "candidate_gate",
    "predict_next",
    "select_candidate",
    "track_snapshots",
    "doppler_estimate",
]


@dataclass(frozen=True)
class TrackState:
    """Per-snapshot track state: magnitude in dB and delay in seconds."""

    gain_db: float
    delay_s: float

    def __post_init__(self):
        if not (math.isfinite(self.gain_db) and math.isfinite(self.delay_s)):
            raise ValueError("track state must be finite")


@dataclass(frozen=True)
class ChangeGate:
    """Maximum per-snapshot magnitude and delay change for starting a track.

    Bounds follow from the physical limits of the moving objects; the two
    components are compared independently (dB and seconds do not mix).
    """

    max_gain_change_db: float = 10.0
    max_delay_change_s: float = 1.0e-9

    def __post_init__(self):
        if self.max_gain_change_db <= 0 or self.max_delay_change_s <= 0:
            raise ValueError("gate bounds must be positive")

    def admits(self, a: TrackState, b: TrackState) -> bool:
        return (
            abs(a.gain_db - b.gain_db) <= self.max_gain_change_db
            and abs(a.delay_s - b.delay_s) <= self.max_delay_change_s
        )


@dataclass(frozen=True)
class SearchTolerance:
    """Half-widths of the prediction-centered search box."""

    gain_tol_db: float = 10.0
    delay_tol_s: float = 0.5e-9

    def __post_init__(self):
        if self.gain_tol_db <= 0 or self.delay_tol_s <= 0:
            raise ValueError("search tolerances must be positive")

    def admits(self, predicted: TrackState, candidate: TrackState) -> bool:
        return (
            abs(predicted.gain_db - candidate.gain_db) <= self.gain_tol_db
            and abs(predicted.delay_s - candidate.delay_s) <= self.delay_tol_s
        )


@dataclass(frozen=True)
class Track:
    """A confirmed MPC track.

    ``states`` are contiguous in snapshot index starting at
    ``start_snapshot``; ``member_refs`` holds, per state, the index of the
    claimed detection within its snapshot's detection list (None for states
    carried without a supporting detection, which the proposed tracker never
    produces).  Lifetime is the number of states.
    """

    id: int
    start_snapshot: int
    states: tuple
    member_refs: tuple
    doppler_hz: float = 0.0

    def __post_init__(self):
        if len(self.states) < 3:
            raise ValueError("a track needs at least three states")
        if len(self.states) != len(self.member_refs):
            raise ValueError("one member reference per state required")
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "member_refs", tuple(self.member_refs))

    @property
    def lifetime(self) -> int:
        return len(self.states)

    @property
    def last_snapshot(self) -> int:
        return self.start_snapshot + self.lifetime - 1

    def snapshots(self) -> range:
        return range(self.start_snapshot, self.start_snapshot + self.lifetime)

    def delays(self) -> np.ndarray:
        return np.array([s.delay_s for s in self.states])

    def gains_db(self) -> np.ndarray:
        return np.array([s.gain_db for s in self.states])


def _to_state(det) -> TrackState:
    return TrackState(gain_db=power_db(det.gain), delay_s=det.delay_s)


def candidate_gate(anchor: TrackState, next_mpcs, gate: ChangeGate) -> list:
    """All next-snapshot detections within the per-step change gate."""
    return [m for m in next_mpcs if gate.admits(anchor, _to_state(m))]


def predict_next(prev: TrackState, curr: TrackState) -> TrackState:
    """Linear prediction: extrapolate the last observed change."""
    return TrackState(
        gain_db=2.0 * curr.gain_db - prev.gain_db,
        delay_s=2.0 * curr.delay_s - prev.delay_s,
    )


def select_candidate(predicted: TrackState, in_range):
    """Pick the candidate closest to the predicted delay (ties: smaller delay).

    ``in_range`` must already be filtered to the search box.  Returns None
    when the list is empty, which ends the track.
    """
    best = None
    best_key = None
    for m in in_range:
        key = (abs(predicted.delay_s - m.delay_s), m.delay_s)
        if best_key is None or key < best_key:
            best, best_key = m, key
    return best


def track_snapshots(
    detections,
    gate: ChangeGate | None = None,
    tol: SearchTolerance | None = None,
    snapshot_offset: int = 0,
) -> list[Track]:
    """Track detections across consecutive snapshots.

    ``detections`` is one list of DetectedMpc per snapshot.  Start snapshots
    are visited in ascending order; within one, anchors by descending
    magnitude.  Direction candidates are tried nearest-delay-first until a
    third-snapshot confirmation succeeds.  Only tracks of lifetime >= 3 are
    returned.
    """
    gate = gate or ChangeGate()
    tol = tol or SearchTolerance()
    n_snap = len(detections)
    if n_snap < 3:
        raise ValueError("tracking needs at least 3 snapshots")
    states = [[_to_state(m) for m in per_snap] for per_snap in detections]
    claimed = [set() for _ in range(n_snap)]
    tracks: list[Track] = []

    def unclaimed(n):
        return [i for i in range(len(states[n])) if i not in claimed[n]]

    def in_search_box(n, predicted):
        return [i for i in unclaimed(n) if tol.admits(predicted, states[n][i])]

    def pick(n, predicted, indices):
        best, best_key = None, None
        for i in indices:
            s = states[n][i]
            key = (abs(predicted.delay_s - s.delay_s), s.delay_s, i)
            if best_key is None or key < best_key:
                best, best_key = i, key
        return best

    for n0 in range(n_snap - 2):
        anchor_order = sorted(
            unclaimed(n0), key=lambda i: (-states[n0][i].gain_db, states[n0][i].delay_s, i)
        )
        for a_idx in anchor_order:
            if a_idx in claimed[n0]:
                continue
            anchor = states[n0][a_idx]
            cand_idx = [
                i for i in unclaimed(n0 + 1) if gate.admits(anchor, states[n0 + 1][i])
            ]
            cand_idx.sort(
                key=lambda i: (
                    abs(states[n0 + 1][i].delay_s - anchor.delay_s),
                    states[n0 + 1][i].delay_s,
                    i,
                )
            )
            for c_idx in cand_idx:
                cand = states[n0 + 1][c_idx]
                predicted = predict_next(anchor, cand)
                third = pick(n0 + 2, predicted, in_search_box(n0 + 2, predicted))
                if third is None:
                    continue
                # confirmed: claim and extend greedily
                chain = [(n0, a_idx), (n0 + 1, c_idx), (n0 + 2, third)]
                m = n0 + 3
                while m < n_snap:
                    prev = states[chain[-2][0]][chain[-2][1]]
                    curr = states[chain[-1][0]][chain[-1][1]]
                    predicted = predict_next(prev, curr)
                    nxt = pick(m, predicted, in_search_box(m, predicted))
                    if nxt is None:
                        break
                    chain.append((m, nxt))
                    m += 1
                for sn, di in chain:
                    claimed[sn].add(di)
                tracks.append(
                    Track(
                        id=len(tracks),
                        start_snapshot=snapshot_offset + n0,
                        states=tuple(states[sn][di] for sn, di in chain),
                        member_refs=tuple(di for _, di in chain),
                    )
                )
                break
    return tracks


def doppler_estimate(track: Track, config: SounderConfig) -> float:
    """Doppler of one track: minus the regression slope of delay over time times f_c."""
    if track.lifetime < 2:
        raise ValueError("doppler needs at least two states")
    t = np.arange(track.lifetime) * config.snapshot_period_s
    slope = np.polyfit(t, track.delays(), 1)[0]
    return -float(slope) * config.carrier_hz


def with_doppler(tracks, config: SounderConfig) -> list[Track]:
    """Attach Doppler estimates to a list of tracks."""
    out = []
    for t in tracks:
        out.append(
            Track(
                id=t.id,
                start_snapshot=t.start_snapshot,
                states=t.states,
                member_refs=t.member_refs,
                doppler_hz=doppler_estimate(t, config),
            )
        )
    return out
