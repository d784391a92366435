"""Per-snapshot MPC detection by iterative strongest-peak search and subtraction.

The detector preprocesses a snapshot (noise-floor threshold, zeroing,
frequency-domain Kaiser windowing), then loops: find the strongest
matched-filter peak outside blocked delay ranges, block the range around it,
subtract the pulse, until no unblocked bin exceeds the noise threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import CirSnapshot, db_to_amplitude, kaiser_window, power_db
from .synth import PulseModel, _measure_width_10db

__all__ = [
    "DetectedMpc",
    "DetectConfig",
    "estimate_noise_floor",
    "strongest_peak",
    "subtract_pulse",
    "detect_mpcs",
    "detect_dataset",
    "channel_energy",
]


@dataclass(frozen=True)
class DetectedMpc:
    """One detected multipath component of one snapshot."""

    gain: complex
    delay_s: float
    snapshot_index: int = 0

    def __post_init__(self):
        if self.gain == 0 or not (math.isfinite(self.gain.real) and math.isfinite(self.gain.imag)):
            raise ValueError("detected gain must be finite and nonzero")
        if self.delay_s < 0:
            raise ValueError("detected delay must be non-negative")

    @property
    def phase_rad(self) -> float:
        return math.atan2(self.gain.imag, self.gain.real)

    @property
    def gain_db(self) -> float:
        return power_db(self.gain)


@dataclass(frozen=True)
class DetectConfig:
    """Detection parameters.

    ``block_width_s`` of None uses the 10-dB width of the effective
    (windowed) pulse; blocking excludes all delays strictly closer than the
    block width to an earlier detection.  ``subbin_refine`` enables a
    parabolic sub-bin interpolation of the correlation peak (off by default;
    the plain search is grid-only).
    """

    noise_margin_db: float = 6.0
    block_width_s: float | None = None
    window_shape_a: float = 6.0
    max_peaks: int = 100
    tail_fraction: float = 0.25
    subbin_refine: bool = False
    refine_cycles: int = 3
    zero_after_windowing: bool = False

    def __post_init__(self):
        if not 0.0 < self.tail_fraction <= 0.5:
            raise ValueError("tail_fraction must be in (0, 0.5]")
        if self.noise_margin_db <= 0 or self.max_peaks <= 0:
            raise ValueError("noise_margin_db and max_peaks must be positive")
        if self.block_width_s is not None and self.block_width_s <= 0:
            raise ValueError("block_width_s must be positive")
        if self.window_shape_a < 0:
            raise ValueError("window_shape_a must be non-negative")


def estimate_noise_floor(cir: CirSnapshot, cfg: DetectConfig) -> float:
    """Noise threshold in dB: mean tail bin power plus the noise margin.

    The trailing ``tail_fraction`` of the delay axis is assumed free of
    MPCs; a strong pulse there biases the threshold high (mitigated by tail
    placement, not detected here).  An all-zero tail yields -inf, which
    passes everything.
    """
    u = len(cir)
    tail = int(round(u * cfg.tail_fraction))
    if tail < 32:
        raise ValueError(f"tail window has {tail} bins, need >= 32")
    mean_power = float(np.mean(np.abs(cir.samples[u - tail :]) ** 2))
    if mean_power == 0.0:
        return -math.inf
    return 10.0 * math.log10(mean_power) + cfg.noise_margin_db


_TEMPLATE_CACHE: dict = {}


def _template(pulse: PulseModel, window_shape_a: float, seq_len: int):
    """Effective correlation template after frequency-domain windowing.

    The Kaiser window is rescaled to unit DC gain so pulse peak levels (and
    with them the noise threshold from the unwindowed snapshot) keep their
    meaning after windowing.  Returns (samples, peak_index, energy, width_s).
    """
    key = (pulse.samples.tobytes(), pulse.peak_index, round(window_shape_a, 12), seq_len)
    hit = _TEMPLATE_CACHE.get(key)
    if hit is not None:
        return hit
    spec = pulse.spectrum(seq_len)
    if window_shape_a > 0:
        win = _arranged_window(seq_len, window_shape_a)
        spec = spec * win
    kernel = np.fft.ifft(spec)
    margin = min(64, (seq_len - pulse.length) // 2)
    half = pulse.length // 2 + margin
    z = min(seq_len, 2 * half + 1)
    centered = np.roll(kernel, half)[:z]
    peak = int(np.argmax(np.abs(centered)))
    energy = float(np.sum(np.abs(centered) ** 2))
    width = _measure_template_width(centered, peak, pulse.delay_bin_s, seq_len)
    result = (centered, peak, energy, width)
    if len(_TEMPLATE_CACHE) > 32:
        _TEMPLATE_CACHE.clear()
    _TEMPLATE_CACHE[key] = result
    return result


def _arranged_window(seq_len: int, window_shape_a: float) -> np.ndarray:
    """Kaiser window laid onto the baseband spectrum, rescaled to unit DC gain.

    The window peak lands on the DC row and the taper edges meet at Nyquist,
    matching where the rendered band sits; unit DC gain keeps pulse peak
    levels (and the noise threshold) meaningful after windowing.
    """
    win = kaiser_window(seq_len, window_shape_a)
    return np.fft.ifftshift(win * (seq_len / win.sum()))


def _window_cir(samples: np.ndarray, window_shape_a: float) -> np.ndarray:
    if window_shape_a <= 0:
        return samples.copy()
    return np.fft.ifft(np.fft.fft(samples) * _arranged_window(samples.size, window_shape_a))


def _preprocess(cir: CirSnapshot, cfg: DetectConfig):
    """Threshold, zero and window one snapshot; returns (work vector, floor amplitude)."""
    if cfg.zero_after_windowing:
        work = _window_cir(cir.samples, cfg.window_shape_a)
        threshold_db = estimate_noise_floor(
            CirSnapshot(work, cir.snapshot_index, cir.timestamp_s), cfg
        )
        floor_amp = db_to_amplitude(threshold_db) if threshold_db > -math.inf else 0.0
        work[np.abs(work) < floor_amp] = 0.0
        return work, floor_amp
    threshold_db = estimate_noise_floor(cir, cfg)
    floor_amp = db_to_amplitude(threshold_db) if threshold_db > -math.inf else 0.0
    zeroed = np.where(np.abs(cir.samples) < floor_amp, 0.0, cir.samples)
    return _window_cir(zeroed, cfg.window_shape_a), floor_amp


def channel_energy(cir: CirSnapshot, pulse: PulseModel, cfg: DetectConfig) -> float:
    """Original channel gain of one snapshot (linear power).

    Energy of the thresholded, windowed snapshot normalized by the effective
    pulse energy, so a single unit-gain MPC yields 1.0.  This is the
    reference every detected/tracked gain capture is compared against.
    """
    work, _ = _preprocess(cir, cfg)
    _, _, t_energy, _ = _template(pulse, cfg.window_shape_a, len(cir))
    return float(np.sum(np.abs(work) ** 2)) / t_energy


def _correlate(residual: np.ndarray, template: np.ndarray, peak_index: int) -> np.ndarray:
    """Linear cross-correlation c[d] = sum conj(w[k]) h[d - peak + k] for d in [0, U)."""
    u = residual.size
    z = template.size
    pad = u + z
    c = np.fft.ifft(np.fft.fft(residual, pad) * np.conj(np.fft.fft(template, pad)))
    # start positions s = d - peak_index run from -peak_index to u - 1 - peak_index
    return np.roll(c, peak_index)[:u]


def strongest_peak(
    residual,
    pulse: PulseModel,
    blocked: np.ndarray | None = None,
    subbin: bool = False,
):
    """Maximum-likelihood delay and gain of the strongest unblocked peak.

    ``tau = argmax |w(tau)^H h|`` over the delay grid, ``alpha =
    w(tau)^H h / w^H w`` with the unshifted pulse energy in the denominator
    (shifts near the edge use a truncated pulse and carry a small bias).
    Ties break toward the smaller delay.  Returns None when every bin is
    blocked.
    """
    samples = residual.samples if isinstance(residual, CirSnapshot) else np.asarray(residual)
    if samples.size == 0:
        raise ValueError("empty residual")
    hit = _strongest_peak_arrays(
        samples, pulse.samples, pulse.peak_index, pulse.energy, pulse.delay_bin_s, blocked
    )
    if hit is None or not subbin:
        return hit
    return _local_refine(samples, pulse, hit[0] / pulse.delay_bin_s, halfspan=1)


def _strongest_peak_arrays(samples, template, peak_index, energy, delay_bin_s, blocked):
    """Grid argmax of the matched-filter correlation over unblocked delays."""
    corr = _correlate(samples, template, peak_index)
    mag = np.abs(corr)
    if blocked is not None:
        if blocked.all():
            return None
        mag = np.where(blocked, -1.0, mag)
    d = int(np.argmax(mag))
    return d * delay_bin_s, complex(corr[d] / energy)


_REFINE_CACHE: dict = {}
_CAND_OFFSETS = (-1.0 / 3.0, 0.0, 1.0 / 3.0)


def _refine_ctx(pulse: PulseModel, seq_len: int):
    """Cached spectral machinery for sub-bin refinement of one pulse at one length."""
    key = (pulse.samples.tobytes(), pulse.peak_index, seq_len)
    hit = _REFINE_CACHE.get(key)
    if hit is not None:
        return hit
    padded = np.zeros(seq_len, dtype=np.complex128)
    padded[: pulse.length] = pulse.samples
    spec_conj = np.conj(np.fft.fft(np.roll(padded, -pulse.peak_index)))
    omega = 2.0 * np.pi * np.fft.fftfreq(seq_len)
    offset_ph = [np.exp(1j * omega * off) for off in _CAND_OFFSETS]
    ctx = (spec_conj, omega, offset_ph)
    if len(_REFINE_CACHE) > 32:
        _REFINE_CACHE.clear()
    _REFINE_CACHE[key] = ctx
    return ctx


def _ascend(coef, omega, offset_ph, x0: float, steps: int = 4):
    """Maximize |c(x)|^2 by bracketed, backtracked Newton ascent.

    ``c(x) = sum coef * exp(j omega x)`` is the continuous matched-filter
    output; ascent starts from the best of a small bracket around ``x0`` so
    a poor initial guess cannot lock in a wrong sub-bin position.  Returns
    (x, c(x)).
    """
    base = float(round(x0))
    base_ph = np.exp(1j * omega * base)
    best_val, x, ph = -1.0, base, base_ph
    for off, oph in zip(_CAND_OFFSETS, offset_ph):
        cand_ph = base_ph * oph
        val = abs(coef @ cand_ph) ** 2
        if val > best_val:
            best_val, x, ph = val, base + off, cand_ph
    c = coef @ ph
    for _ in range(steps):
        c1 = (coef * (1j * omega)) @ ph
        c2 = (coef * -(omega ** 2)) @ ph
        val = abs(c) ** 2
        g = 2.0 * np.real(np.conj(c) * c1)
        h = 2.0 * (abs(c1) ** 2 + np.real(np.conj(c) * c2))
        step = -g / h if h < 0 else (0.25 if g > 0 else -0.25)
        step = float(np.clip(step, -0.5, 0.5))
        accepted = None
        for _ in range(4):
            ph_try = np.exp(1j * omega * (x + step))
            c_try = coef @ ph_try
            if abs(c_try) ** 2 >= val:
                accepted = (x + step, ph_try, c_try)
                break
            step *= 0.5
        if accepted is None:
            break
        x, ph, c = accepted
        if abs(step) < 1e-4:
            break
    return float(x), complex(c)


def _fractional_template(template, peak_index, seq_len, peak_bins):
    # same signed-frequency phase-ramp convention as PulseModel.placed
    padded = np.zeros(seq_len, dtype=np.complex128)
    padded[: template.size] = template
    spec = np.fft.fft(np.roll(padded, -peak_index))
    k = np.fft.fftfreq(seq_len) * seq_len
    return np.fft.ifft(spec * np.exp(-2j * np.pi * k * peak_bins / seq_len))


def subtract_pulse(residual, mpc: DetectedMpc, pulse: PulseModel):
    """Subtract the shifted, scaled pulse from the residual (delay domain)."""
    samples = residual.samples if isinstance(residual, CirSnapshot) else np.asarray(residual)
    u = samples.size
    bins = mpc.delay_s / pulse.delay_bin_s
    fractional = abs(bins - round(bins)) > 1e-9
    out = samples - mpc.gain * pulse.placed(mpc.delay_s, u, fractional=fractional)
    if isinstance(residual, CirSnapshot):
        return CirSnapshot(out, residual.snapshot_index, residual.timestamp_s)
    return out


def detect_mpcs(cir: CirSnapshot, pulse: PulseModel, cfg: DetectConfig) -> list[DetectedMpc]:
    """Full search-and-subtract pass over one snapshot.

    Steps: noise threshold and zeroing of sub-threshold bins, Kaiser
    windowing of the transfer function, then the peak/block/subtract loop
    until no unblocked bin exceeds the threshold (or max_peaks).  Detections
    come back sorted by descending gain magnitude.
    """
    u = len(cir)
    work, floor_amp = _preprocess(cir, cfg)
    # sub-bin refinement polishes on the raw (full-band, unthresholded)
    # residual: the windowed vector only decides which peaks exist, since
    # windowing narrows the band and costs delay accuracy
    raw_res = cir.samples.copy() if cfg.subbin_refine else None
    template, t_peak, t_energy, t_width = _template(pulse, cfg.window_shape_a, u)
    block_width = cfg.block_width_s if cfg.block_width_s is not None else t_width
    block_bins = block_width / pulse.delay_bin_s

    blocked = np.zeros(u, dtype=bool)
    grid = np.arange(u, dtype=np.float64)
    # numerical floor: truncated-template subtraction leaves ~1e-10 tails that
    # must not be re-detected when the estimated threshold is -inf
    floor_amp = max(floor_amp, 1e-9 * float(np.abs(work).max(initial=0.0)))
    found: list[DetectedMpc] = []
    while len(found) < cfg.max_peaks:
        above = (np.abs(work) > floor_amp) & ~blocked
        if not above.any():
            break
        hit = _strongest_peak_arrays(
            work, template, t_peak, t_energy, pulse.delay_bin_s, blocked
        )
        if hit is None:
            break
        delay, gain = hit
        if raw_res is not None:
            delay, gain = _local_refine(raw_res, pulse, delay / pulse.delay_bin_s)
        if gain == 0:
            break
        mpc = DetectedMpc(gain=gain, delay_s=delay, snapshot_index=cir.snapshot_index)
        found.append(mpc)
        blocked |= np.abs(grid - delay / pulse.delay_bin_s) < block_bins
        work = work - gain * _effective_pulse(template, t_peak, u, delay / pulse.delay_bin_s)
        if raw_res is not None:
            raw_res = raw_res - gain * _raw_shape(pulse, delay, u)
    if raw_res is not None and len(found) > 1:
        found = _refit_cycles(found, raw_res, pulse, cfg, cir.snapshot_index)
    found.sort(key=lambda m: (-abs(m.gain), m.delay_s))
    return found


def _raw_shape(pulse: PulseModel, delay_s: float, seq_len: int) -> np.ndarray:
    bins = delay_s / pulse.delay_bin_s
    return pulse.placed(delay_s, seq_len, fractional=abs(bins - round(bins)) > 1e-9)


def _local_refine(residual: np.ndarray, pulse: PulseModel, center_bins: float, halfspan: int = 3):
    """Raw-band peak fit near ``center_bins``: local grid argmax, then ascent.

    The local re-argmax jumps the ascent into the correct basin when the
    coarse (windowed) position is off by more than the raw mainlobe width,
    which happens for overlapping pulses.
    """
    u = residual.size
    spec_conj, omega, offset_ph = _refine_ctx(pulse, u)
    prod = np.fft.fft(residual) * spec_conj
    corr = np.fft.ifft(prod)
    lo = max(0, int(round(center_bins)) - halfspan)
    hi = min(u, int(round(center_bins)) + halfspan + 1)
    d = lo + int(np.argmax(np.abs(corr[lo:hi])))
    x, c = _ascend(prod / u, omega, offset_ph, float(d))
    x = float(np.clip(x, 0.0, u - 1.0))
    return x * pulse.delay_bin_s, complex(c / pulse.energy)


def _refit_cycles(found, raw_res, pulse, cfg, snapshot_index):
    """Cyclic re-estimation: re-fit each pulse with all others subtracted.

    The greedy pass estimates early pulses with later ones still in the
    residual; a few alternating polish cycles remove that mutual bias for
    separations down to a few bins.
    """
    u = raw_res.size
    params = [(m.delay_s, m.gain) for m in found]
    for _ in range(cfg.refine_cycles):
        for i, (delay, gain) in enumerate(params):
            back = raw_res + gain * _raw_shape(pulse, delay, u)
            new_delay, new_gain = _local_refine(back, pulse, delay / pulse.delay_bin_s)
            raw_res = back - new_gain * _raw_shape(pulse, new_delay, u)
            params[i] = (new_delay, new_gain)
    return [
        DetectedMpc(gain=g, delay_s=d, snapshot_index=snapshot_index)
        for d, g in params
        if g != 0
    ]


def _effective_pulse(template, peak_index, seq_len, peak_bins):
    if abs(peak_bins - round(peak_bins)) > 1e-9:
        return _fractional_template(template, peak_index, seq_len, peak_bins)
    out = np.zeros(seq_len, dtype=np.complex128)
    start = int(round(peak_bins)) - peak_index
    lo = max(0, start)
    hi = min(seq_len, start + template.size)
    if hi > lo:
        out[lo:hi] = template[lo - start : hi - start]
    return out


def _measure_template_width(template, peak_index, delay_bin_s, seq_len) -> float:
    padded = np.zeros(seq_len, dtype=np.complex128)
    padded[: template.size] = template
    spec = np.fft.fft(np.roll(padded, -peak_index))
    return _measure_width_10db(spec, delay_bin_s)


def detect_dataset(dataset, pulse: PulseModel, cfg: DetectConfig) -> list[list[DetectedMpc]]:
    """Run detection over every snapshot of a dataset."""
    return [detect_mpcs(s, pulse, cfg) for s in dataset.snapshots]
