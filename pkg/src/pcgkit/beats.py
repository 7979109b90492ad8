"""Heartbeat segmentation and length normalization.

A beat spans one full cardiac cycle, from an S1 onset to the next S1 onset;
incomplete leading or trailing cycles are dropped. Fixed-length variants are
produced either by anti-aliased interpolation to 1000 samples or by zero-
padding to 1200 samples (longer beats are discarded).
"""

from __future__ import annotations

import enum
import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import Label, Signal, State, StateSequence
from .dsp import ANTI_ALIAS_CUTOFF, fir_apply, fir_lowpass, interp_fractional
from .errors import FormatError, ValidationError

log = logging.getLogger(__name__)

NORM_LEN = 1000
ZPAD_LEN = 1200


class LengthPolicy(enum.IntEnum):
    RAW = 0
    NORM_1000 = 1
    ZPAD_1200 = 2


_POLICY_LEN = {LengthPolicy.NORM_1000: NORM_LEN, LengthPolicy.ZPAD_1200: ZPAD_LEN}


@dataclass(frozen=True)
class Beat:
    samples: np.ndarray
    label: Label
    recording_id: str
    beat_index: int
    length_policy: LengthPolicy = LengthPolicy.RAW

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        expected = _POLICY_LEN.get(self.length_policy)
        if expected is not None and samples.size != expected:
            raise ValidationError(
                f"{self.length_policy.name} beat must have {expected} samples, "
                f"got {samples.size}"
            )
        if samples.size == 0:
            raise ValidationError("beat has no samples")

    def __len__(self) -> int:
        return self.samples.size


def rescale_states(states: StateSequence, src_rate_hz: int, dst_rate_hz: int) -> StateSequence:
    """Map annotation sample indices between sampling rates."""
    if src_rate_hz == dst_rate_hz:
        return states
    ratio = dst_rate_hz / src_rate_hz
    entries = tuple((int(round(start * ratio)), state) for start, state in states.entries)
    return StateSequence(entries)


def segment_beats(
    signal: Signal, states: StateSequence, label: Label, recording_id: str = ""
) -> list[Beat]:
    """Cut a recording into complete single-beat segments.

    Each beat spans [S1 start, next S1 start); a cycle whose closing S1 is
    missing, or whose span runs past the end of the signal, is dropped.
    """
    s1_starts = [start for start, state in states.entries if state is State.S1]
    beats = []
    for begin, end in zip(s1_starts, s1_starts[1:]):
        if end > len(signal):
            break
        beats.append(
            Beat(
                samples=signal.samples[begin:end].copy(),
                label=label,
                recording_id=recording_id,
                beat_index=len(beats),
            )
        )
    return beats


def normalize_duration(beat: Beat, target_len: int = NORM_LEN) -> Beat:
    """Rescale a raw beat to ``target_len`` samples.

    Positions map by the length ratio (sample k reads source position
    k * len / target_len), so a tone at frequency f becomes one at
    f * len / target_len. An anti-alias low-pass runs first only when the
    beat shrinks.
    """
    if beat.length_policy is not LengthPolicy.RAW:
        raise ValidationError(f"normalize_duration needs a RAW beat, got {beat.length_policy.name}")
    if len(beat) < 2:
        raise ValidationError("cannot normalize a single-sample beat")
    policy = LengthPolicy.NORM_1000 if target_len == NORM_LEN else LengthPolicy.RAW
    if len(beat) == target_len:
        return replace(beat, length_policy=policy)
    samples = beat.samples
    if len(beat) > target_len:
        samples = fir_apply(samples, fir_lowpass(ANTI_ALIAS_CUTOFF * target_len / len(beat)))
    positions = np.arange(target_len) * (len(beat) / target_len)
    return replace(beat, samples=interp_fractional(samples, positions), length_policy=policy)


def zero_pad(beat: Beat, max_len: int = ZPAD_LEN) -> Beat | None:
    """Right-pad with zeros to ``max_len``; beats longer than that are
    discarded (returns None)."""
    if beat.length_policy is not LengthPolicy.RAW:
        raise ValidationError(f"zero_pad needs a RAW beat, got {beat.length_policy.name}")
    if len(beat) > max_len:
        log.debug("discarding %s beat %d: %d samples > %d",
                  beat.recording_id, beat.beat_index, len(beat), max_len)
        return None
    padded = np.zeros(max_len)
    padded[: len(beat)] = beat.samples
    policy = LengthPolicy.ZPAD_1200 if max_len == ZPAD_LEN else LengthPolicy.RAW
    return replace(beat, samples=padded, length_policy=policy)


def apply_length_policy(beats: list[Beat], policy: LengthPolicy) -> tuple[list[Beat], int]:
    """Apply NORM_1000 or ZPAD_1200 to raw beats; returns (kept, n_discarded)."""
    kept = []
    discarded = 0
    for beat in beats:
        if policy is LengthPolicy.NORM_1000:
            kept.append(normalize_duration(beat))
        elif policy is LengthPolicy.ZPAD_1200:
            padded = zero_pad(beat)
            if padded is None:
                discarded += 1
            else:
                kept.append(padded)
        else:
            kept.append(beat)
    if discarded:
        log.info(
            "discarded %d of %d beats longer than %d samples (%.2f%%)",
            discarded, len(beats), ZPAD_LEN, 100.0 * discarded / len(beats),
        )
    return kept, discarded


# Binary beat dump: per record, header
#   u16 id length, id bytes, u32 beat_index, u8 label, u8 policy, u32 length
# followed by little-endian float32 samples.

_BEAT_HEADER = struct.Struct("<IBBI")


def write_beats(path: str | Path, beats: list[Beat]) -> None:
    with open(path, "wb") as fh:
        for beat in beats:
            ident = beat.recording_id.encode("utf-8")
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
            fh.write(_BEAT_HEADER.pack(beat.beat_index, int(beat.label),
                                       int(beat.length_policy), len(beat)))
            fh.write(beat.samples.astype("<f4").tobytes())


def read_beats(path: str | Path) -> list[Beat]:
    data = Path(path).read_bytes()
    beats = []
    offset = 0
    while offset < len(data):
        if offset + 2 > len(data):
            raise FormatError(f"{path}: truncated beat record header")
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        end = offset + id_len + _BEAT_HEADER.size
        if end > len(data):
            raise FormatError(f"{path}: truncated beat record")
        ident = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        beat_index, label, policy, length = _BEAT_HEADER.unpack_from(data, offset)
        offset += _BEAT_HEADER.size
        nbytes = 4 * length
        if offset + nbytes > len(data):
            raise FormatError(f"{path}: truncated beat samples")
        samples = np.frombuffer(data, dtype="<f4", count=length, offset=offset).astype(np.float64)
        offset += nbytes
        beats.append(Beat(samples, Label(label), ident, beat_index, LengthPolicy(policy)))
    return beats
