"""Signal containers, low-pass filtering, resampling and framing."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy import signal as sps

from .errors import ConfigurationError, DataError

FRAME_FS = 8.0
FRAME_SECONDS = 180
FRAME_LEN = int(FRAME_SECONDS * FRAME_FS)  # 1440


def _as_samples(samples) -> np.ndarray:
    arr = np.array(samples, dtype=np.float64)
    if arr.ndim != 1:
        raise DataError(f"samples must be one-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class EdaSignal:
    """Uniformly sampled skin conductance in microsiemens.

    Attributes
    ----------
    samples : ndarray
        Conductance values (uS). Stored read-only.
    fs : float
        Sampling rate (Hz).
    origin : float, optional
        Start time in seconds since the epoch.
    """

    samples: np.ndarray
    fs: float
    origin: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "samples", _as_samples(self.samples))
        if not (np.isfinite(self.fs) and self.fs > 0):
            raise ConfigurationError(f"sampling rate must be positive, got {self.fs}")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.fs

    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.fs

    def validate(self) -> "EdaSignal":
        """Raise DataError unless the signal is non-empty and finite."""
        if self.samples.size == 0:
            raise DataError("signal is empty")
        if not np.all(np.isfinite(self.samples)):
            bad = int(np.flatnonzero(~np.isfinite(self.samples))[0])
            raise DataError(f"non-finite sample at index {bad}")
        return self


@dataclass(frozen=True)
class Frame:
    """One 3-minute window at 8 Hz (exactly 1440 samples)."""

    samples: np.ndarray
    index: int = 0
    fs: float = FRAME_FS

    def __post_init__(self):
        object.__setattr__(self, "samples", _as_samples(self.samples))
        if self.fs != FRAME_FS:
            raise ConfigurationError(f"frames are fixed at {FRAME_FS} Hz, got {self.fs}")
        if self.samples.size != FRAME_LEN:
            raise DataError(f"frame must hold {FRAME_LEN} samples, got {self.samples.size}")

    def times(self) -> np.ndarray:
        return np.arange(FRAME_LEN) / FRAME_FS


@dataclass(frozen=True)
class FilterSpec:
    cutoff_hz: float = 3.0
    order: int = 4

    def __post_init__(self):
        if not self.cutoff_hz > 0:
            raise ConfigurationError(f"cutoff must be positive, got {self.cutoff_hz}")
        if int(self.order) != self.order or self.order < 1:
            raise ConfigurationError(f"order must be a positive integer, got {self.order}")


def butterworth_sos(spec: FilterSpec, fs: float) -> np.ndarray:
    """Digital Butterworth low-pass as second-order sections (bilinear design)."""
    nyq = fs / 2.0
    if spec.cutoff_hz >= nyq:
        raise ConfigurationError(
            f"cutoff {spec.cutoff_hz} Hz is not below Nyquist ({nyq} Hz)")
    return sps.butter(int(spec.order), spec.cutoff_hz, btype="lowpass", fs=fs, output="sos")


def _sos_pass(sos: np.ndarray, x: np.ndarray) -> np.ndarray:
    # steady-state initial conditions so a constant input passes unchanged
    zi = sps.sosfilt_zi(sos) * x[0]
    y, _ = sps.sosfilt(sos, x, zi=zi)
    return y


def butterworth_lowpass(sig: EdaSignal, spec: FilterSpec = FilterSpec(),
                        zero_phase: bool = True) -> EdaSignal:
    """Low-pass filter an EDA signal.

    With ``zero_phase`` (the default) the cascade runs forward then backward
    over a reflect-padded copy (``3 * order`` samples each side), which
    squares the magnitude response and removes group delay. ``zero_phase=False``
    applies the filter once, which is what the gain measurements use.
    """
    sig.validate()
    sos = butterworth_sos(spec, sig.fs)
    x = sig.samples
    if not zero_phase:
        return EdaSignal(_sos_pass(sos, x), sig.fs, sig.origin)
    pad = 3 * int(spec.order)
    if x.size <= pad:
        raise DataError(f"need more than {pad} samples for zero-phase filtering, got {x.size}")
    xp = np.pad(x, pad, mode="reflect")
    y = _sos_pass(sos, xp)
    y = _sos_pass(sos, y[::-1])[::-1]
    return EdaSignal(y[pad:-pad].copy(), sig.fs, sig.origin)


def resample(sig: EdaSignal, target_hz: float) -> EdaSignal:
    """Linear-interpolation resampling onto a uniform ``target_hz`` grid.

    The output grid starts at the first sample and spans the original time
    range. Interpolation happens in source-index coordinates so integer
    rate ratios land exactly on source samples.
    """
    if not (np.isfinite(target_hz) and target_hz > 0):
        raise ConfigurationError(f"target rate must be positive, got {target_hz}")
    n = sig.samples.size
    if n < 2:
        raise DataError(f"resampling needs at least 2 samples, got {n}")
    if target_hz == sig.fs:
        return EdaSignal(sig.samples.copy(), sig.fs, sig.origin)
    step = sig.fs / target_hz  # source samples per output sample
    n_out = int(np.floor((n - 1) / step + 1e-9)) + 1
    pos = np.arange(n_out) * step
    out = np.interp(pos, np.arange(n, dtype=np.float64), sig.samples)
    return EdaSignal(out, float(target_hz), sig.origin)


def frame_signal(sig: EdaSignal) -> List[Frame]:
    """Cut a signal into consecutive non-overlapping 1440-sample frames.

    A trailing partial window is dropped.
    """
    if sig.fs != FRAME_FS:
        raise ConfigurationError(f"framing requires {FRAME_FS} Hz input, got {sig.fs}")
    k = sig.samples.size // FRAME_LEN
    return [Frame(sig.samples[i * FRAME_LEN:(i + 1) * FRAME_LEN], index=i) for i in range(k)]
