"""Synthetic phonocardiogram generator for desk-scale experiments.

Each heartbeat is an S1 burst (Gaussian-windowed 40 Hz tone) followed by an
S2 burst (60 Hz); abnormal recordings add a band-limited 100-300 Hz systolic
murmur. The murmur noise is always drawn and then scaled, so with amplitude 0
the two classes are generated by the identical process.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Label, Signal, State, StateSequence
from .dsp import FilterSpec, design_butterworth_bandpass, filter_zero_phase
from .errors import ValidationError
from .io import (
    DatasetManifest,
    build_manifest,
    save_annotations,
    save_manifest,
    save_wav,
)

S1_DURATION_S = 0.10
SYSTOLE_DURATION_S = 0.18
S2_DURATION_S = 0.08
S1_TONE_HZ = 40.0
S2_TONE_HZ = 60.0
S1_PEAK = 0.5
S2_PEAK = 0.4
MURMUR_BAND_HZ = (100.0, 300.0)

_SEED_STREAM = 0x5C  # domain tag so synth draws never collide with other stages


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings; ``n_recordings`` counts recordings per class."""

    n_recordings: int = 60
    beats_per_recording: int = 8
    heart_rate_bpm_range: tuple[float, float] = (55.0, 80.0)
    murmur_amplitude: float = 0.2
    noise_std: float = 0.02
    seed: int = 0
    sample_rate_hz: int = 2000

    def __post_init__(self):
        lo, hi = self.heart_rate_bpm_range
        if self.n_recordings <= 0:
            raise ValidationError(f"n_recordings must be positive, got {self.n_recordings}")
        if self.beats_per_recording <= 0:
            raise ValidationError("beats_per_recording must be positive")
        if not 0 < lo <= hi:
            raise ValidationError(f"heart rate range must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        if hi > 150:
            raise ValidationError(
                "heart rates above 150 bpm leave no room for the fixed S1/systole/S2 timings"
            )
        if self.murmur_amplitude < 0:
            raise ValidationError("murmur_amplitude must be >= 0")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be >= 0")
        if self.sample_rate_hz < 1000:
            raise ValidationError("synthetic sample rate must be at least 1000 Hz")


def _tone_burst(n: int, fs: int, tone_hz: float, peak: float, phase: float) -> np.ndarray:
    """Gaussian-windowed tone spanning n samples, envelope std = n/6."""
    t = np.arange(n)
    center = (n - 1) / 2.0
    envelope = np.exp(-0.5 * ((t - center) / (n / 6.0)) ** 2)
    return peak * envelope * np.sin(2.0 * np.pi * tone_hz * t / fs + phase)


def _murmur_mask(starts: np.ndarray, stops: np.ndarray, total: int, fs: int) -> np.ndarray:
    """Unit-height systolic windows with 10 ms raised-cosine edges."""
    ramp = max(2, int(round(0.010 * fs)))
    mask = np.zeros(total)
    for start, stop in zip(starts, stops):
        width = stop - start
        if width <= 2 * ramp:
            continue
        window = np.ones(width)
        edge = 0.5 * (1.0 - np.cos(np.pi * np.arange(ramp) / ramp))
        window[:ramp] = edge
        window[-ramp:] = edge[::-1]
        mask[start:stop] = window
    return mask


def _synth_recording(
    rng: np.random.Generator, config: SynthConfig, abnormal: bool
) -> tuple[Signal, StateSequence]:
    fs = config.sample_rate_hz
    n_cycles = config.beats_per_recording + 1  # final cycle closes the last beat
    heart_rate = rng.uniform(*config.heart_rate_bpm_range)
    jitter = rng.uniform(-0.02, 0.02, size=n_cycles)
    cycle_lens = np.round(fs * 60.0 / heart_rate * (1.0 + jitter)).astype(int)
    total = int(cycle_lens.sum())

    s1_len = int(round(S1_DURATION_S * fs))
    sys_len = int(round(SYSTOLE_DURATION_S * fs))
    s2_len = int(round(S2_DURATION_S * fs))

    samples = np.zeros(total)
    entries: list[tuple[int, State]] = []
    sys_starts, sys_stops = [], []
    cursor = 0
    for cycle_len in cycle_lens:
        s1_start = cursor
        sys_start = s1_start + s1_len
        s2_start = sys_start + sys_len
        dia_start = s2_start + s2_len
        if dia_start >= cursor + cycle_len:
            raise ValidationError("cycle too short for the fixed state durations")
        entries += [
            (s1_start, State.S1),
            (sys_start, State.SYSTOLE),
            (s2_start, State.S2),
            (dia_start, State.DIASTOLE),
        ]
        samples[s1_start:sys_start] += _tone_burst(
            s1_len, fs, S1_TONE_HZ, S1_PEAK, rng.uniform(0.0, 2.0 * np.pi)
        )
        samples[s2_start:dia_start] += _tone_burst(
            s2_len, fs, S2_TONE_HZ, S2_PEAK, rng.uniform(0.0, 2.0 * np.pi)
        )
        sys_starts.append(sys_start)
        sys_stops.append(s2_start)
        cursor += int(cycle_len)

    # Murmur noise is drawn unconditionally so that murmur_amplitude == 0
    # makes the abnormal generator identical to the normal one.
    raw_noise = rng.standard_normal(total)
    chain = design_butterworth_bandpass(
        FilterSpec(4, MURMUR_BAND_HZ[0], MURMUR_BAND_HZ[1], fs)
    )
    band_noise = filter_zero_phase(Signal(raw_noise, fs), chain).samples
    mask = _murmur_mask(np.asarray(sys_starts), np.asarray(sys_stops), total, fs)
    murmur = band_noise * mask
    inside = mask > 0
    rms = np.sqrt(np.mean(murmur[inside] ** 2)) if inside.any() else 0.0
    amplitude = config.murmur_amplitude if abnormal else 0.0
    if rms > 0:
        samples += murmur * (amplitude / rms)

    if config.noise_std > 0:
        samples += config.noise_std * rng.standard_normal(total)

    return Signal(samples, fs), StateSequence(tuple(entries))


def synth_pcg(config: SynthConfig) -> list[tuple[str, Signal, StateSequence, Label]]:
    """Generate ``2 * n_recordings`` recordings: normals first, abnormals second.

    Every recording draws from its own seed substream, so outputs are
    reproducible recording-by-recording.
    """
    out = []
    for k in range(2 * config.n_recordings):
        abnormal = k >= config.n_recordings
        label = Label.ABNORMAL if abnormal else Label.NORMAL
        idx = k % config.n_recordings
        rec_id = f"{'abn' if abnormal else 'norm'}{idx:03d}"
        rng = np.random.default_rng(
            np.random.SeedSequence((config.seed, _SEED_STREAM, k))
        )
        signal, states = _synth_recording(rng, config, abnormal)
        out.append((rec_id, signal, states, label))
    return out


def write_synth_dataset(
    config: SynthConfig,
    out_dir: str | Path,
    split_seed: int,
    test_fraction: float = 0.5,
) -> DatasetManifest:
    """Materialize a synthetic dataset directory loadable by build_manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["id,label,subject_id"]
    for rec_id, signal, states, label in synth_pcg(config):
        save_wav(signal, out / f"{rec_id}.wav")
        save_annotations(states, out / f"{rec_id}.csv")
        rows.append(f"{rec_id},{label.name},{rec_id}")
    (out / "labels.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    manifest = build_manifest(out, split_seed, test_fraction)
    save_manifest(manifest, out / "manifest.tsv")
    return manifest
