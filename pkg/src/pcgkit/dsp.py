"""Recording preprocessing: resampling, band-pass filtering, standardization.

The pipeline applied to every recording is fixed: resample to 1000 Hz,
zero-phase Butterworth band-pass 25-400 Hz (order 4, two biquad sections),
then standardize to zero mean and unit variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, sosfilt

from .core import Signal
from .errors import ValidationError

TARGET_RATE_HZ = 1000
BAND_HZ = (25.0, 400.0)
BANDPASS_ORDER = 4

ANTI_ALIAS_TAPS = 31
# FIR cutoff as a fraction of the target rate; 0.9 of the target Nyquist
# keeps the full 25-400 Hz analysis band intact while suppressing aliases.
ANTI_ALIAS_CUTOFF = 0.45


@dataclass(frozen=True)
class FilterSpec:
    """Band-pass design request. ``order`` is the overall band-pass order."""

    order: int
    low_cut_hz: float
    high_cut_hz: float
    sample_rate_hz: int

    def __post_init__(self):
        if self.order <= 0 or self.order % 2 != 0:
            raise ValidationError(f"band-pass order must be a positive even integer, got {self.order}")
        if not 0.0 < self.low_cut_hz < self.high_cut_hz < self.sample_rate_hz / 2:
            raise ValidationError(
                f"cutoffs must satisfy 0 < {self.low_cut_hz} < {self.high_cut_hz} "
                f"< Nyquist ({self.sample_rate_hz / 2})"
            )


@dataclass(frozen=True)
class BiquadChain:
    """Cascade of second-order sections, rows (b0, b1, b2, 1, a1, a2)."""

    sections: np.ndarray

    def __post_init__(self):
        sections = np.asarray(self.sections, dtype=np.float64)
        object.__setattr__(self, "sections", sections)
        if sections.ndim != 2 or sections.shape[1] != 6:
            raise ValidationError(f"sections must be (n, 6), got {sections.shape}")
        for i, row in enumerate(sections):
            poles = np.roots(row[3:])
            if np.any(np.abs(poles) >= 1.0):
                raise ValidationError(f"section {i} is unstable (pole magnitude >= 1)")

    @property
    def n_sections(self) -> int:
        return self.sections.shape[0]

    @property
    def effective_order(self) -> int:
        return 2 * self.n_sections


def design_butterworth_bandpass(spec: FilterSpec) -> BiquadChain:
    """Design a maximally-flat band-pass with -3 dB points at the cutoffs."""
    sos = butter(
        spec.order // 2,
        [spec.low_cut_hz, spec.high_cut_hz],
        btype="band",
        output="sos",
        fs=spec.sample_rate_hz,
    )
    return BiquadChain(sos)


def filter_zero_phase(signal: Signal, chain: BiquadChain) -> Signal:
    """Apply the chain forward then time-reversed, cancelling all phase."""
    min_len = 3 * chain.effective_order
    if len(signal) <= min_len:
        raise ValidationError(
            f"signal too short for zero-phase filtering: need more than "
            f"{min_len} samples, got {len(signal)}"
        )
    forward = sosfilt(chain.sections, signal.samples)
    backward = sosfilt(chain.sections, forward[::-1])[::-1]
    return Signal(backward, signal.sample_rate_hz)


def fir_lowpass(cutoff_per_sample: float, taps: int = ANTI_ALIAS_TAPS) -> np.ndarray:
    """Hamming-windowed sinc low-pass; cutoff in cycles per input sample."""
    n = np.arange(taps) - (taps - 1) / 2
    h = 2.0 * cutoff_per_sample * np.sinc(2.0 * cutoff_per_sample * n)
    h *= np.hamming(taps)
    return h / h.sum()


def fir_apply(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Same-length FIR filtering with edge-value padding (no zero transients)."""
    half = len(h) // 2
    padded = np.pad(x, half, mode="edge")
    return np.convolve(padded, h, mode="valid")


def interp_fractional(x: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Linear interpolation at fractional sample positions.

    One linearly extrapolated sample is appended so positions slightly past
    the final sample (as produced by length-ratio mappings) stay exact for
    linear signals.
    """
    extended = np.concatenate([x, [2.0 * x[-1] - x[-2]]]) if len(x) >= 2 else x
    return np.interp(positions, np.arange(len(extended)), extended)


def resample(signal: Signal, target_rate_hz: int) -> Signal:
    """Downsample via anti-alias FIR plus linear interpolation."""
    if target_rate_hz > signal.sample_rate_hz:
        raise ValidationError(
            f"upsampling not supported: {signal.sample_rate_hz} Hz -> {target_rate_hz} Hz"
        )
    if target_rate_hz == signal.sample_rate_hz:
        return signal
    ratio = target_rate_hz / signal.sample_rate_hz
    filtered = fir_apply(signal.samples, fir_lowpass(ANTI_ALIAS_CUTOFF * ratio))
    n_out = int(round(len(signal) * ratio))
    positions = np.arange(n_out) / ratio
    return Signal(interp_fractional(filtered, positions), target_rate_hz)


def standardize(signal: Signal) -> Signal:
    """Subtract the mean and divide by the population standard deviation."""
    if len(signal) < 2:
        raise ValidationError("standardize needs at least 2 samples")
    mean = signal.samples.mean()
    std = signal.samples.std()
    if std == 0.0 or not np.isfinite(std):
        raise ValidationError("degenerate signal: zero variance")
    return Signal((signal.samples - mean) / std, signal.sample_rate_hz)


def preprocess(
    signal: Signal,
    target_rate_hz: int = TARGET_RATE_HZ,
    band_hz: tuple[float, float] = BAND_HZ,
    order: int = BANDPASS_ORDER,
) -> Signal:
    """Full preprocessing chain: resample, band-pass, standardize."""
    if signal.sample_rate_hz < target_rate_hz:
        raise ValidationError(
            f"recordings below {target_rate_hz} Hz are not supported "
            f"(got {signal.sample_rate_hz} Hz)"
        )
    resampled = resample(signal, target_rate_hz)
    chain = design_butterworth_bandpass(
        FilterSpec(order, band_hz[0], band_hz[1], target_rate_hz)
    )
    return standardize(filter_zero_phase(resampled, chain))
