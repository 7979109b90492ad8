"""Core domain values: class labels, cardiac states, signals, and state sequences."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


class Label(enum.IntEnum):
    NORMAL = 0
    ABNORMAL = 1

    @classmethod
    def parse(cls, text: str) -> "Label":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValidationError(f"unknown label {text!r} (expected NORMAL or ABNORMAL)") from None


class State(enum.IntEnum):
    """The four cardiac states, in their fixed cyclic order."""

    S1 = 0
    SYSTOLE = 1
    S2 = 2
    DIASTOLE = 3

    @property
    def successor(self) -> "State":
        return State((self + 1) % 4)

    @classmethod
    def parse(cls, text: str) -> "State":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValidationError(
                f"unknown state {text!r} (expected S1, systole, S2, or diastole)"
            ) from None


@dataclass(frozen=True)
class Signal:
    """A 1-D sampled waveform.

    Samples are dimensionless; treat instances as immutable after construction.
    """

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size == 0:
            raise ValidationError("signal must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise ValidationError("signal contains non-finite samples")
        if int(self.sample_rate_hz) <= 0:
            raise ValidationError(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class StateSequence:
    """Ordered (start_sample, state) annotations for one recording.

    Start samples are strictly increasing and states follow the cardiac cycle
    S1 -> systole -> S2 -> diastole -> S1; a sequence may begin or end
    mid-cycle.
    """

    entries: tuple[tuple[int, State], ...] = field(default_factory=tuple)

    def __post_init__(self):
        entries = tuple((int(s), State(st)) for s, st in self.entries)
        object.__setattr__(self, "entries", entries)
        for i, (start, _) in enumerate(entries):
            if start < 0:
                raise ValidationError(f"entry {i}: negative start sample {start}")
            if i > 0 and start <= entries[i - 1][0]:
                raise ValidationError(
                    f"entry {i}: start samples must be strictly increasing "
                    f"({entries[i - 1][0]} then {start})"
                )
            if i > 0 and entries[i - 1][1].successor is not entries[i][1]:
                raise ValidationError(
                    f"entry {i}: state {entries[i][1].name} cannot follow "
                    f"{entries[i - 1][1].name} in the cardiac cycle"
                )

    def __len__(self) -> int:
        return len(self.entries)

    def starts_of(self, state: State) -> list[int]:
        return [s for s, st in self.entries if st is state]
