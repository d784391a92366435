"""Complex-sample containers, dB conversions, DFT pair and frequency-domain windowing.

All power levels in this package are dB relative to unit linear amplitude,
``power_db(a) = 20 log10 |a|``, so the "power" of a bin is ``|a|**2`` and dB
differences are what every downstream algorithm consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SounderConfig",
    "CirSnapshot",
    "TransferFunction",
    "bessel_i0",
    "kaiser_window",
    "apply_frequency_window",
    "to_transfer_function",
    "to_impulse_response",
    "power_db",
    "db_to_amplitude",
    "db_to_power",
]

SPEED_OF_LIGHT = 299_792_458.0  # m/s


@dataclass(frozen=True)
class SounderConfig:
    """Global acquisition constants of the (emulated) channel sounder.

    Snapshots are grouped into sets: ``snapshots_per_set`` snapshots spaced
    ``snapshot_period_s`` apart, sets starting every ``set_period_s``.
    """

    carrier_hz: float = 5.7e9
    bandwidth_hz: float = 1.0e9
    delay_bin_s: float = 1.0e-9
    seq_len: int = 2048
    snapshot_period_s: float = 0.717e-3
    snapshots_per_set: int = 6
    set_period_s: float = 10.0e-3
    num_sets: int = 16

    def __post_init__(self):
        if not math.isclose(self.delay_bin_s * self.bandwidth_hz, 1.0, rel_tol=1e-12):
            raise ValueError(
                f"delay_bin_s * bandwidth_hz must be 1, got "
                f"{self.delay_bin_s * self.bandwidth_hz!r}"
            )
        if self.snapshots_per_set < 3:
            raise ValueError("snapshots_per_set must be >= 3 (tracker needs three consecutive snapshots)")
        if self.set_period_s < self.snapshots_per_set * self.snapshot_period_s:
            raise ValueError("set_period_s shorter than one burst of snapshots")
        if self.seq_len < 2:
            raise ValueError("seq_len must be >= 2")
        if self.num_sets < 1:
            raise ValueError("num_sets must be >= 1")

    @property
    def num_snapshots(self) -> int:
        return self.num_sets * self.snapshots_per_set

    @property
    def delay_span_s(self) -> float:
        return self.seq_len * self.delay_bin_s

    def snapshot_time(self, n: int) -> float:
        """Absolute timestamp of global snapshot index ``n``."""
        s, j = divmod(n, self.snapshots_per_set)
        return s * self.set_period_s + j * self.snapshot_period_s


@dataclass(frozen=True)
class CirSnapshot:
    """One channel impulse response: complex amplitude per delay bin."""

    samples: np.ndarray
    snapshot_index: int = 0
    timestamp_s: float = 0.0

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.complex128)
        if arr.ndim != 1:
            raise ValueError("CIR samples must be a 1-D vector")
        if not np.all(np.isfinite(arr.view(np.float64))):
            raise ValueError("CIR samples must be finite")
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class TransferFunction:
    """Frequency-domain counterpart of a CirSnapshot (same bin indexing)."""

    bins: np.ndarray
    snapshot_index: int = 0

    def __post_init__(self):
        arr = np.asarray(self.bins, dtype=np.complex128)
        if arr.ndim != 1:
            raise ValueError("transfer function bins must be a 1-D vector")
        object.__setattr__(self, "bins", arr)

    def __len__(self) -> int:
        return self.bins.shape[0]


def bessel_i0(x):
    """Modified Bessel function of the first kind, order zero.

    Power series with terms cut off once their relative contribution drops
    below 1e-16; exact enough for window shaping and dependency-free.
    """
    x = np.asarray(x, dtype=np.float64)
    q = x * x / 4.0
    total = np.ones_like(q)
    term = np.ones_like(q)
    k = 0
    while True:
        k += 1
        term = term * q / (k * k)
        total = total + term
        if np.all(term <= 1e-16 * total):
            break
    return total if total.ndim else float(total)


def kaiser_window(length: int, shape: float) -> np.ndarray:
    """Kaiser window of the given length and non-negative shape parameter.

    ``z[u] = I0(pi*a*sqrt(1 - (2u/(U-1) - 1)^2)) / I0(pi*a)`` for
    ``0 <= u <= U-1``; symmetric and peak-normalized to 1.
    """
    if length < 2:
        raise ValueError(f"window length must be >= 2, got {length}")
    if shape < 0:
        raise ValueError(f"window shape must be non-negative, got {shape}")
    u = np.arange(length, dtype=np.float64)
    x = 2.0 * u / (length - 1) - 1.0
    arg = np.pi * shape * np.sqrt(np.maximum(0.0, 1.0 - x * x))
    return bessel_i0(arg) / bessel_i0(np.pi * shape)


def apply_frequency_window(tf: TransferFunction, window: np.ndarray) -> TransferFunction:
    """Element-wise product of a transfer function with a weight vector."""
    window = np.asarray(window, dtype=np.float64)
    if window.shape != tf.bins.shape:
        raise ValueError(f"window length {window.shape} does not match transfer function {tf.bins.shape}")
    return TransferFunction(tf.bins * window, snapshot_index=tf.snapshot_index)


def to_transfer_function(cir: CirSnapshot) -> TransferFunction:
    """Forward DFT (unscaled); inverse is scaled by 1/U so the pair round-trips."""
    return TransferFunction(np.fft.fft(cir.samples), snapshot_index=cir.snapshot_index)


def to_impulse_response(tf: TransferFunction, timestamp_s: float = 0.0) -> CirSnapshot:
    """Inverse DFT, scaled by 1/U (round-trip identity with to_transfer_function)."""
    return CirSnapshot(np.fft.ifft(tf.bins), snapshot_index=tf.snapshot_index, timestamp_s=timestamp_s)


def power_db(amplitude) -> float | np.ndarray:
    """20*log10(|amplitude|); zero amplitude maps to -inf."""
    mag = np.abs(amplitude)
    with np.errstate(divide="ignore"):
        out = 20.0 * np.log10(mag)
    if np.ndim(out) == 0:
        return float(out)
    return out


def db_to_amplitude(level_db: float) -> float:
    return 10.0 ** (level_db / 20.0)


def db_to_power(level_db: float) -> float:
    return 10.0 ** (level_db / 10.0)
