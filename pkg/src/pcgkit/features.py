"""Time-frequency feature maps for duration-normalized beats.

Two map kinds feed the 2-D classifier and the HMM baseline:

* MFCC: per frame, magnitude-squared 64-point FFT, 26 triangular mel filters
  spanning 25-400 Hz, floored log, orthonormal DCT-II, coefficients 1..12
  (c0 carries overall gain and is dropped by default).
* TVAR: per frame, biased autocorrelation to lag 12 and a Levinson-Durbin
  solve for the order-12 linear-prediction coefficients.

With the default framing (50-sample frames, hop 10) a 1000-sample beat
yields a 96 x 12 map.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .beats import Beat, LengthPolicy
from .core import Label
from .errors import FormatError, NumericError, ValidationError

N_COEFFS = 12
N_FFT = 64
N_MEL_FILTERS = 26
MEL_BAND_HZ = (25.0, 400.0)
LOG_FLOOR = 1e-10
TVAR_ORDER = 12
# relative ridge on r0 keeps Levinson stable on nearly noiseless frames
AUTOCORR_RIDGE = 1e-10

KIND_MFCC = "mfcc"
KIND_TVAR = "tvar"


@dataclass(frozen=True)
class FrameConfig:
    frame_len: int = 50
    hop: int = 10
    window: str = "hamming"

    def __post_init__(self):
        if not 0 < self.hop <= self.frame_len:
            raise ValidationError(f"need 0 < hop <= frame_len, got hop={self.hop}, frame_len={self.frame_len}")
        if self.window != "hamming":
            raise ValidationError(f"unsupported window {self.window!r}")

    def n_frames(self, n_samples: int) -> int:
        return (n_samples - self.frame_len) // self.hop + 1


@dataclass(frozen=True)
class FeatureMap:
    """T x D matrix of per-frame coefficients."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 2:
            raise ValidationError(f"feature map must be 2-D, got shape {values.shape}")
        if self.kind not in (KIND_MFCC, KIND_TVAR):
            raise ValidationError(f"unknown feature kind {self.kind!r}")
        if values.shape[1] != N_COEFFS:
            raise ValidationError(
                f"{self.kind} maps carry {N_COEFFS} coefficients per frame, got {values.shape[1]}"
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError("feature map contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_coeffs(self) -> int:
        return self.values.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterbank:
    """Triangular filters, evenly spaced on the mel scale, sampled at FFT bins."""

    weights: np.ndarray  # (n_filters, n_fft // 2 + 1)
    center_hz: np.ndarray
    sample_rate_hz: int
    n_fft: int = N_FFT

    def __post_init__(self):
        row_sums = self.weights.sum(axis=1)
        if np.any(row_sums <= 0):
            empty = np.where(row_sums <= 0)[0]
            raise ValidationError(f"mel filters with no FFT bin support: {empty.tolist()}")

    @property
    def n_filters(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def make(
        cls,
        n_filters: int = N_MEL_FILTERS,
        n_fft: int = N_FFT,
        sample_rate_hz: int = 1000,
        fmin_hz: float = MEL_BAND_HZ[0],
        fmax_hz: float = MEL_BAND_HZ[1],
    ) -> "MelFilterbank":
        if not 0 < fmin_hz < fmax_hz <= sample_rate_hz / 2:
            raise ValidationError("mel band must satisfy 0 < fmin < fmax <= Nyquist")
        bin_hz = np.arange(n_fft // 2 + 1) * sample_rate_hz / n_fft
        edges = mel_to_hz(np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), n_filters + 2))
        weights = np.zeros((n_filters, bin_hz.size))
        for i in range(n_filters):
            lo, center, hi = edges[i], edges[i + 1], edges[i + 2]
            rising = (bin_hz - lo) / (center - lo)
            falling = (hi - bin_hz) / (hi - center)
            weights[i] = np.maximum(0.0, np.minimum(rising, falling))
        return cls(weights=weights, center_hz=edges[1:-1], sample_rate_hz=sample_rate_hz, n_fft=n_fft)


def frame_signal(samples: np.ndarray | Beat, cfg: FrameConfig = FrameConfig()) -> np.ndarray:
    """Slice into overlapping frames and apply the window; returns (T, frame_len)."""
    x = samples.samples if isinstance(samples, Beat) else np.asarray(samples, dtype=np.float64)
    if x.size < cfg.frame_len:
        raise ValidationError(f"signal of {x.size} samples is shorter than one {cfg.frame_len}-sample frame")
    n_frames = cfg.n_frames(x.size)
    idx = np.arange(cfg.frame_len)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    return x[idx] * np.hamming(cfg.frame_len)[None, :]


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix: C @ C.T == I."""
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    mat = np.sqrt(2.0 / n) * np.cos(np.pi * k * (2 * m + 1) / (2 * n))
    mat[0] /= np.sqrt(2.0)
    return mat


def _require_norm1000(beat: Beat, op: str) -> None:
    if beat.length_policy is not LengthPolicy.NORM_1000:
        raise ValidationError(f"{op} expects a NORM_1000 beat, got {beat.length_policy.name}")


def mfcc_map(
    beat: Beat,
    cfg: FrameConfig = FrameConfig(),
    fb: MelFilterbank | None = None,
    include_c0: bool = False,
) -> FeatureMap:
    """Short-time MFCC trajectory of a duration-normalized beat.

    By default coefficients 1..12 are kept; ``include_c0`` keeps 0..11
    instead, re-admitting overall gain.
    """
    _require_norm1000(beat, "mfcc_map")
    if fb is None:
        fb = MelFilterbank.make()
    frames = frame_signal(beat, cfg)
    spectra = np.abs(np.fft.rfft(frames, n=fb.n_fft, axis=1)) ** 2
    energies = spectra @ fb.weights.T
    log_energies = np.log(np.maximum(energies, LOG_FLOOR))
    dct = dct_matrix(fb.n_filters)
    rows = slice(0, N_COEFFS) if include_c0 else slice(1, N_COEFFS + 1)
    coeffs = log_energies @ dct[rows].T
    return FeatureMap(coeffs, KIND_MFCC)


def biased_autocorr(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased (1/N) autocorrelation estimate, lags 0..max_lag."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    return np.array([np.dot(x[: n - k], x[k:]) for k in range(max_lag + 1)]) / n


def levinson_durbin(autocorr: np.ndarray, order: int) -> tuple[np.ndarray, float]:
    """Solve the Toeplitz normal equations for prediction coefficients.

    Returns (a, residual) where a[0..order-1] are the forward-prediction
    coefficients (x̂[n] = sum_i a_i x[n-i]) and residual is the final
    prediction error energy.
    """
    r = np.asarray(autocorr, dtype=np.float64)
    if r.size < order + 1:
        raise ValidationError(f"need {order + 1} autocorrelation lags, got {r.size}")
    if r[0] <= 0:
        raise ValidationError(f"autocorrelation at lag 0 must be positive, got {r[0]}")
    a = np.zeros(order)
    error = r[0]
    for m in range(1, order + 1):
        k = (r[m] - np.dot(a[: m - 1], r[m - 1 : 0 : -1])) / error
        if not np.isfinite(k) or abs(k) > 1.0 + 1e-12:
            raise NumericError(
                f"autocorrelation sequence is not positive definite at order {m} "
                f"(reflection coefficient {k})"
            )
        a[: m - 1] -= k * a[: m - 1][::-1]
        a[m - 1] = k
        error *= 1.0 - k * k
        if error <= 0:
            raise NumericError(f"prediction error collapsed to {error} at order {m}")
    return a, float(error)


def tvar_map(beat: Beat, cfg: FrameConfig = FrameConfig(), order: int = TVAR_ORDER) -> FeatureMap:
    """Per-frame linear-prediction coefficients (time-varying AR trajectory).

    Frames with no energy produce all-zero rows rather than an error.
    """
    _require_norm1000(beat, "tvar_map")
    frames = frame_signal(beat, cfg)
    coeffs = np.zeros((frames.shape[0], order))
    for t, frame in enumerate(frames):
        r = biased_autocorr(frame, order)
        if r[0] <= 0.0:
            continue  # silent frame: documented all-zero convention
        r[0] *= 1.0 + AUTOCORR_RIDGE
        coeffs[t], _ = levinson_durbin(r, order)
    return FeatureMap(coeffs, KIND_TVAR)


def feature_map_for(beat: Beat, kind: str, cfg: FrameConfig = FrameConfig(),
                    fb: MelFilterbank | None = None) -> FeatureMap:
    if kind == KIND_MFCC:
        return mfcc_map(beat, cfg, fb)
    if kind == KIND_TVAR:
        return tvar_map(beat, cfg)
    raise ValidationError(f"unknown feature kind {kind!r}")


# Binary feature dump: per record, header
#   u8 kind (0 = MFCC, 1 = TVAR), u32 T, u32 D, u8 label, u16 id length, id
# followed by row-major little-endian float32 values.

_KIND_CODE = {KIND_MFCC: 0, KIND_TVAR: 1}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}
_FEAT_HEADER = struct.Struct("<BIIBH")


def write_feature_maps(
    path: str | Path, records: list[tuple[FeatureMap, Label, str]]
) -> None:
    with open(path, "wb") as fh:
        for fmap, label, rec_id in records:
            ident = rec_id.encode("utf-8")
            fh.write(_FEAT_HEADER.pack(_KIND_CODE[fmap.kind], fmap.n_frames,
                                       fmap.n_coeffs, int(label), len(ident)))
            fh.write(ident)
            fh.write(fmap.values.astype("<f4").tobytes())


def read_feature_maps(path: str | Path) -> list[tuple[FeatureMap, Label, str]]:
    data = Path(path).read_bytes()
    records = []
    offset = 0
    while offset < len(data):
        if offset + _FEAT_HEADER.size > len(data):
            raise FormatError(f"{path}: truncated feature header")
        kind_code, n_frames, n_coeffs, label, id_len = _FEAT_HEADER.unpack_from(data, offset)
        offset += _FEAT_HEADER.size
        if kind_code not in _CODE_KIND:
            raise FormatError(f"{path}: unknown feature kind byte {kind_code}")
        ident = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        count = n_frames * n_coeffs
        if offset + 4 * count > len(data):
            raise FormatError(f"{path}: truncated feature values")
        values = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        records.append(
            (
                FeatureMap(values.astype(np.float64).reshape(n_frames, n_coeffs), _CODE_KIND[kind_code]),
                Label(label),
                ident,
            )
        )
    return records
