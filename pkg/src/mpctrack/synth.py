"""Synthetic channel-sounder data with exact ground truth.

The sounding pulse is modeled as the inverse DFT of an all-ones band of
width B shaped by a Kaiser window; delays of a rendered multipath component
refer to the position of the pulse peak on the delay axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    SPEED_OF_LIGHT,
    CirSnapshot,
    SounderConfig,
    db_to_amplitude,
    db_to_power,
    kaiser_window,
    power_db,
)

__all__ = [
    "PulseModel",
    "GroundTruthMpc",
    "Dataset",
    "Scatterer",
    "Body",
    "synth_pulse",
    "load_pulse",
    "save_pulse",
    "render_snapshot",
    "two_track_scenario",
    "geometry_scenario",
]


@dataclass(frozen=True)
class PulseModel:
    """The isolated sounding pulse and its derived widths.

    ``samples`` holds the peak-normalized complex pulse on the delay grid;
    ``peak_index`` is the sample the pulse peaks at, and an MPC rendered at
    delay tau puts that sample at bin round(tau / T_b).  ``width_10db_s`` is
    the delay offset from the peak at which the (band-limited, oversampled)
    magnitude first stays 10 dB below the peak.
    """

    samples: np.ndarray
    delay_bin_s: float
    width_10db_s: float
    peak_index: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.complex128)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("pulse samples must be a non-empty 1-D vector")
        if not math.isclose(float(np.abs(arr).max()), 1.0, rel_tol=1e-9):
            raise ValueError("pulse must be peak-normalized")
        if not 0 <= self.peak_index < arr.size:
            raise ValueError("peak_index outside pulse")
        if not self.width_10db_s < self.duration_for(arr):
            raise ValueError("width_10db_s must be smaller than the pulse duration")
        object.__setattr__(self, "samples", arr)

    def duration_for(self, arr) -> float:
        return arr.size * self.delay_bin_s

    @property
    def duration_s(self) -> float:
        return self.samples.size * self.delay_bin_s

    @property
    def length(self) -> int:
        return self.samples.size

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2))

    def placed(self, delay_s: float, seq_len: int, fractional: bool = False) -> np.ndarray:
        """Pulse vector of length ``seq_len`` with the peak at ``delay_s``.

        On-grid placement writes the sample vector directly, truncating
        whatever falls outside [0, seq_len).  Fractional placement applies an
        exact band-limited sub-bin shift via a spectral phase ramp (circular;
        intended for delays away from the window edges).
        """
        if self.length > seq_len:
            raise ValueError("pulse longer than the delay window")
        bins = delay_s / self.delay_bin_s
        if not fractional:
            d = int(round(bins))
            if not 0 <= d < seq_len:
                raise ValueError(f"delay {delay_s!r} outside the delay window")
            out = np.zeros(seq_len, dtype=np.complex128)
            start = d - self.peak_index
            lo = max(0, start)
            hi = min(seq_len, start + self.length)
            if hi > lo:
                out[lo:hi] = self.samples[lo - start : hi - start]
            return out
        if not 0 <= bins < seq_len:
            raise ValueError(f"delay {delay_s!r} outside the delay window")
        # signed frequencies: the band is laid out at baseband, so the ramp
        # only jumps at the Nyquist row where shaped spectra vanish
        spec = self.spectrum(seq_len)
        k = np.fft.fftfreq(seq_len) * seq_len
        return np.fft.ifft(spec * np.exp(-2j * np.pi * k * bins / seq_len))

    def spectrum(self, seq_len: int) -> np.ndarray:
        """DFT of the pulse zero-padded to ``seq_len`` with its peak at bin 0."""
        key = (self.samples.tobytes(), self.peak_index, seq_len)
        hit = _SPECTRUM_CACHE.get(key)
        if hit is not None:
            return hit
        padded = np.zeros(seq_len, dtype=np.complex128)
        padded[: self.length] = self.samples
        spec = np.fft.fft(np.roll(padded, -self.peak_index))
        spec.setflags(write=False)
        if len(_SPECTRUM_CACHE) > 32:
            _SPECTRUM_CACHE.clear()
        _SPECTRUM_CACHE[key] = spec
        return spec


def _measure_width_10db(spectrum: np.ndarray, delay_bin_s: float, oversample: int = 32) -> float:
    """Half-width at -10 dB of the band-limited pulse, measured oversampled.

    The spectrum is recentered on its strongest bin before zero-padding so
    the measurement is independent of where the band sits in the DFT.
    """
    u = spectrum.size
    spectrum = np.roll(spectrum, -int(np.argmax(np.abs(spectrum))))
    big = np.zeros(u * oversample, dtype=np.complex128)
    half = u // 2
    big[:half] = spectrum[:half]
    big[-(u - half):] = spectrum[half:]
    t = np.fft.ifft(big)
    mag = np.abs(np.fft.fftshift(t))
    peak = int(np.argmax(mag))
    floor = mag[peak] * db_to_amplitude(-10.0)
    above = mag > floor
    right = peak
    while right + 1 < mag.size and above[right + 1]:
        right += 1
    return (right - peak + 0.5) / oversample * delay_bin_s


def synth_pulse(config: SounderConfig, window_shape: float, length: int | None = None) -> PulseModel:
    """Band-limited sounding pulse: all-ones band of width B shaped by a Kaiser window.

    ``window_shape`` 0 gives the rectangular-spectrum pulse (a delta on the
    critically sampled grid, a sinc off it); larger values trade main-lobe
    width against side lobes.
    """
    u = config.seq_len
    spectrum = (
        np.fft.ifftshift(kaiser_window(u, window_shape)) if window_shape > 0 else np.ones(u)
    )
    kernel = np.fft.ifft(spectrum.astype(np.complex128))
    z = min(u, length if length is not None else 129)
    half = z // 2
    centered = np.roll(kernel, half)[:z]
    peak = int(np.argmax(np.abs(centered)))
    centered = centered / centered[peak]
    width = _measure_width_10db(np.fft.fft(np.roll(np.pad(centered, (0, u - z)), -peak)), config.delay_bin_s)
    return PulseModel(
        samples=centered,
        delay_bin_s=config.delay_bin_s,
        width_10db_s=width,
        peak_index=peak,
    )


def save_pulse(pulse: PulseModel, path) -> None:
    """Write a pulse in the WPLS text format."""
    lines = [f"wpls 1", f"z {pulse.length}", f"tb {pulse.delay_bin_s!r}"]
    for c in pulse.samples:
        lines.append(f"{c.real!r} {c.imag!r}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


class PulseParseError(ValueError):
    """Malformed WPLS file; carries the offending line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def load_pulse(path) -> PulseModel:
    """Read a WPLS pulse file; the pulse is peak-normalized on load."""
    with open(path, "r", encoding="ascii") as fh:
        raw = fh.read().splitlines()
    if not raw or raw[0].split() != ["wpls", "1"]:
        raise PulseParseError("expected header 'wpls 1'", 1)
    if len(raw) < 3:
        raise PulseParseError("truncated header", len(raw))
    try:
        key, val = raw[1].split()
        if key != "z":
            raise ValueError
        z = int(val)
    except ValueError:
        raise PulseParseError("expected 'z <count>'", 2) from None
    try:
        key, val = raw[2].split()
        if key != "tb":
            raise ValueError
        tb = float(val)
    except ValueError:
        raise PulseParseError("expected 'tb <seconds>'", 3) from None
    if z < 1 or tb <= 0:
        raise PulseParseError("non-positive pulse length or bin spacing", 2)
    if len(raw) < 3 + z:
        raise PulseParseError(f"expected {z} sample lines, file ends early", len(raw) + 1)
    samples = np.empty(z, dtype=np.complex128)
    for i in range(z):
        parts = raw[3 + i].split()
        try:
            re, im = (float(p) for p in parts)
        except ValueError:
            raise PulseParseError("expected 're im' floats", 4 + i) from None
        samples[i] = complex(re, im)
    peak = int(np.argmax(np.abs(samples)))
    if samples[peak] == 0:
        raise PulseParseError("all-zero pulse", 4)
    samples = samples / samples[peak]
    u = max(4 * z, 256)
    spec = np.fft.fft(np.roll(np.pad(samples, (0, u - z)), -peak))
    width = _measure_width_10db(spec, tb)
    return PulseModel(samples=samples, delay_bin_s=tb, width_10db_s=width, peak_index=peak)


@dataclass(frozen=True)
class GroundTruthMpc:
    """True per-snapshot delay and complex gain of one scatterer path.

    Alive over snapshots [birth_snapshot, death_snapshot); arrays cover
    exactly that span.  ``delays_s`` records what was rendered (rounded to
    the grid when rendering is on-grid).
    """

    delays_s: np.ndarray
    gains: np.ndarray
    birth_snapshot: int = 0
    track_id: int = 0

    def __post_init__(self):
        d = np.asarray(self.delays_s, dtype=np.float64)
        g = np.asarray(self.gains, dtype=np.complex128)
        if d.shape != g.shape or d.ndim != 1:
            raise ValueError("delays and gains must be matching 1-D vectors")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(g.view(np.float64)))):
            raise ValueError("truth delays and gains must be finite")
        object.__setattr__(self, "delays_s", d)
        object.__setattr__(self, "gains", g)

    @property
    def death_snapshot(self) -> int:
        return self.birth_snapshot + self.delays_s.size

    def alive_at(self, n: int) -> bool:
        return self.birth_snapshot <= n < self.death_snapshot

    def delay_at(self, n: int) -> float:
        return float(self.delays_s[n - self.birth_snapshot])

    def gain_at(self, n: int) -> complex:
        return complex(self.gains[n - self.birth_snapshot])


@dataclass(frozen=True)
class Dataset:
    """Snapshots grouped into sets, optionally carrying ground truth."""

    config: SounderConfig
    snapshots: tuple
    truth: tuple | None = None

    def __post_init__(self):
        snaps = tuple(self.snapshots)
        if len(snaps) != self.config.num_snapshots:
            raise ValueError(
                f"dataset holds {len(snaps)} snapshots, config promises {self.config.num_snapshots}"
            )
        times = [s.timestamp_s for s in snaps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("snapshot timestamps must be strictly increasing")
        for s in snaps:
            if len(s) != self.config.seq_len:
                raise ValueError("snapshot length does not match config.seq_len")
        object.__setattr__(self, "snapshots", snaps)
        if self.truth is not None:
            object.__setattr__(self, "truth", tuple(self.truth))

    def __len__(self) -> int:
        return len(self.snapshots)

    def snapshots_of_set(self, set_index: int):
        n = self.config.snapshots_per_set
        return self.snapshots[set_index * n : (set_index + 1) * n]


def render_snapshot(
    truth,
    n: int,
    pulse: PulseModel,
    noise_floor_db: float | None,
    config: SounderConfig,
    seed: int = 0,
    round_delays: bool = True,
) -> CirSnapshot:
    """Render one CIR: sum of delayed, scaled pulses plus a flat noise floor.

    Noise is i.i.d. circularly-symmetric complex Gaussian per bin with mean
    power ``noise_floor_db``; the generator is keyed by (seed, n) so parallel
    and sequential renders are bit-identical.  ``round_delays`` snaps true
    delays to the T_b grid; when off, pulses are placed with an exact
    band-limited fractional shift.
    """
    u = config.seq_len
    h = np.zeros(u, dtype=np.complex128)
    for mpc in truth:
        if not mpc.alive_at(n):
            continue
        tau = mpc.delay_at(n)
        if not 0 <= tau < u * config.delay_bin_s:
            raise ValueError(f"truth delay {tau!r} outside the delay window")
        if round_delays:
            tau = round(tau / config.delay_bin_s) * config.delay_bin_s
        h += mpc.gain_at(n) * pulse.placed(tau, u, fractional=not round_delays)
    if noise_floor_db is not None and noise_floor_db != -math.inf:
        rng = np.random.default_rng((seed, n))
        sigma = math.sqrt(db_to_power(noise_floor_db) / 2.0)
        h += sigma * (rng.standard_normal(u) + 1j * rng.standard_normal(u))
    return CirSnapshot(h, snapshot_index=n, timestamp_s=config.snapshot_time(n))


def _single_set_config(config: SounderConfig, num_snapshots: int) -> SounderConfig:
    """Config for a continuous recording treated as one long set."""
    return replace(
        config,
        snapshots_per_set=num_snapshots,
        num_sets=1,
        set_period_s=num_snapshots * config.snapshot_period_s,
    )


def two_track_scenario(
    mpc_power_db: float,
    noise_db: float | None,
    delay_gap_start_s: float,
    delay_gap_stop_s: float,
    num_snapshots: int,
    config: SounderConfig,
    seed: int = 0,
    fixed_delay_s: float | None = None,
    pulse: PulseModel | None = None,
    round_delays: bool = False,
) -> Dataset:
    """Two equal-power tracks, one fixed, one approaching linearly.

    The worst-case two-MPC separation scenario: delays start
    ``delay_gap_start_s`` apart and close to ``delay_gap_stop_s`` over the
    run.  By default the approach is continuous (sub-bin motion); phases are
    random per track and advance with the physical -2*pi*f_c*dtau rule.
    """
    if not delay_gap_start_s > delay_gap_stop_s >= 0:
        raise ValueError("need delay_gap_start_s > delay_gap_stop_s >= 0")
    if num_snapshots < 3:
        raise ValueError("need at least 3 snapshots")
    cfg = _single_set_config(config, num_snapshots)
    if pulse is None:
        pulse = synth_pulse(cfg, 0.0)
    if fixed_delay_s is None:
        fixed_delay_s = 0.25 * cfg.delay_span_s
    n = np.arange(num_snapshots)
    gaps = delay_gap_start_s + (delay_gap_stop_s - delay_gap_start_s) * n / (num_snapshots - 1)
    amp = db_to_amplitude(mpc_power_db)
    rng = np.random.default_rng((seed, 0xA11CE))
    truth = []
    for tid, delays in enumerate((np.full(num_snapshots, fixed_delay_s), fixed_delay_s + gaps)):
        phi0 = rng.uniform(0.0, 2.0 * np.pi)
        phases = phi0 - 2.0 * np.pi * cfg.carrier_hz * (delays - delays[0])
        truth.append(
            GroundTruthMpc(delays_s=delays, gains=amp * np.exp(1j * phases), track_id=tid)
        )
    snaps = [
        render_snapshot(truth, i, pulse, noise_db, cfg, seed=seed, round_delays=round_delays)
        for i in range(num_snapshots)
    ]
    return Dataset(config=cfg, snapshots=snaps, truth=truth)


@dataclass(frozen=True)
class Scatterer:
    """Point scatterer with a reference gain and optional birth/death times."""

    position_m: tuple
    gain_db: float
    birth_s: float = 0.0
    death_s: float = math.inf
    direct_path: bool = False


@dataclass(frozen=True)
class Body:
    """Constant-velocity transmitter or receiver."""

    position_m: tuple
    velocity_mps: tuple = (0.0, 0.0)

    def at(self, t: float) -> np.ndarray:
        return np.asarray(self.position_m, float) + t * np.asarray(self.velocity_mps, float)


def geometry_scenario(
    scatterers,
    tx: Body,
    rx: Body,
    config: SounderConfig,
    seed: int = 0,
    noise_floor_db: float | None = -140.0,
    decay_exponent: float = 0.0,
    reference_distance_m: float = 1.0,
    fading_std_db: float = 0.0,
    pulse: PulseModel | None = None,
    round_delays: bool = False,
) -> Dataset:
    """Desk-scale geometric scenario: delays from path lengths, Doppler from motion.

    Each scatterer contributes a single-bounce path tx -> scatterer -> rx
    (or the direct tx -> rx path when ``direct_path`` is set); gains decay
    with total path distance as (reference/d)**decay_exponent and may carry
    slow log-normal fading.  Scatterer birth/death times clip the path to
    whole snapshots.
    """
    if pulse is None:
        pulse = synth_pulse(config, 0.0)
    m = config.num_snapshots
    times = np.array([config.snapshot_time(n) for n in range(m)])
    rng = np.random.default_rng((seed, 0x9E0))
    truth = []
    for sid, sc in enumerate(scatterers):
        alive = (times >= sc.birth_s) & (times < sc.death_s)
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            continue
        t = times[idx[0] : idx[-1] + 1]
        txp = tx.at(0)[None, :] + t[:, None] * np.asarray(tx.velocity_mps, float)[None, :]
        rxp = rx.at(0)[None, :] + t[:, None] * np.asarray(rx.velocity_mps, float)[None, :]
        if sc.direct_path:
            dist = np.linalg.norm(txp - rxp, axis=1)
        else:
            p = np.asarray(sc.position_m, float)[None, :]
            dist = np.linalg.norm(txp - p, axis=1) + np.linalg.norm(p - rxp, axis=1)
        delays = dist / SPEED_OF_LIGHT
        if np.any(delays < 0) or np.any(delays >= config.delay_span_s):
            raise ValueError(f"scatterer {sid} delay leaves the window")
        amp = db_to_amplitude(sc.gain_db) * (reference_distance_m / dist) ** decay_exponent
        if fading_std_db > 0:
            amp = amp * 10.0 ** (fading_std_db * rng.standard_normal(delays.size) / 20.0)
        phi0 = rng.uniform(0.0, 2.0 * np.pi)
        phases = phi0 - 2.0 * np.pi * config.carrier_hz * (delays - delays[0])
        truth.append(
            GroundTruthMpc(
                delays_s=delays,
                gains=amp * np.exp(1j * phases),
                birth_snapshot=int(idx[0]),
                track_id=sid,
            )
        )
    snaps = [
        render_snapshot(truth, n, pulse, noise_floor_db, config, seed=seed, round_delays=round_delays)
        for n in range(m)
    ]
    return Dataset(config=config, snapshots=snaps, truth=truth)
