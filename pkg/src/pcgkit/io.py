"""Dataset ingestion: WAV files, state annotations, label indexes, and manifests.

File formats
------------
WAV           RIFF/WAVE, PCM code 1, 16-bit, mono, little-endian.
Annotations   UTF-8 CSV with header ``start_sample,state``; states are
              S1 / systole / S2 / diastole, case-insensitive.
Label index   UTF-8 CSV with header ``id,label,subject_id``; an empty
              subject_id falls back to the recording id.
Manifest      Tab-separated text, one recording per line:
              id, split, label, subject, wav path, annotation path.
"""

from __future__ import annotations

import csv
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Label, Signal, State, StateSequence
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    UnsupportedFormatError,
    ValidationError,
)

PCM_FULL_SCALE = 32768  # divisor mapping int16 PCM onto [-1, 1)


class Split:
    TRAIN = "TRAIN"
    TEST = "TEST"


def load_wav(path: str | Path) -> Signal:
    """Read a 16-bit mono PCM WAV file into a Signal scaled to [-1, 1)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wav:
            n_channels = wav.getnchannels()
            sample_width = wav.getsampwidth()
            rate = wav.getframerate()
            n_frames = wav.getnframes()
            raw = wav.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: not a readable RIFF/WAVE file ({exc})") from exc
    if n_channels != 1:
        raise UnsupportedFormatError(f"{path}: expected mono, got {n_channels} channels")
    if sample_width != 2:
        raise UnsupportedFormatError(
            f"{path}: expected 16-bit PCM, got {8 * sample_width}-bit"
        )
    pcm = np.frombuffer(raw, dtype="<i2")
    if pcm.size == 0:
        raise FormatError(f"{path}: file contains no samples")
    return Signal(pcm.astype(np.float64) / PCM_FULL_SCALE, rate)


def save_wav(signal: Signal, path: str | Path) -> None:
    """Write a Signal as 16-bit mono PCM, clipping to the representable range."""
    quantized = np.round(signal.samples * PCM_FULL_SCALE)
    pcm = np.clip(quantized, -PCM_FULL_SCALE, PCM_FULL_SCALE - 1).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(signal.sample_rate_hz)
        wav.writeframes(pcm.tobytes())


def load_annotations(path: str | Path) -> StateSequence:
    """Parse a ``start_sample,state`` CSV into a validated StateSequence."""
    path = Path(path)
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["start_sample", "state"]:
            raise FormatError(f"{path}: expected header 'start_sample,state', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 2:
                raise FormatError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                start = int(row[0])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad start sample {row[0]!r}") from None
            entries.append((start, State.parse(row[1])))
    try:
        return StateSequence(tuple(entries))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


_STATE_SPELLING = {
    State.S1: "S1",
    State.SYSTOLE: "systole",
    State.S2: "S2",
    State.DIASTOLE: "diastole",
}


def save_annotations(states: StateSequence, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start_sample", "state"])
        for start, state in states.entries:
            writer.writerow([start, _STATE_SPELLING[state]])


def load_label_index(path: str | Path) -> dict[str, tuple[Label, str]]:
    """Read the ``id,label,subject_id`` index; subject defaults to the id."""
    path = Path(path)
    index: dict[str, tuple[Label, str]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["id", "label"]:
            raise FormatError(f"{path}: expected header 'id,label,subject_id', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or not row[0].strip():
                continue
            if len(row) < 2:
                raise FormatError(f"{path}:{lineno}: expected at least 2 columns")
            rec_id = row[0].strip()
            if rec_id in index:
                raise ValidationError(f"{path}:{lineno}: duplicate id {rec_id!r}")
            subject = row[2].strip() if len(row) > 2 and row[2].strip() else rec_id
            index[rec_id] = (Label.parse(row[1]), subject)
    return index


@dataclass(frozen=True)
class RecordingEntry:
    id: str
    wav_path: Path
    annotation_path: Path
    label: Label
    subject_id: str


@dataclass
class DatasetManifest:
    """Recordings plus a train/test split; subjects never straddle splits."""

    entries: list[RecordingEntry]
    split_assignment: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        ids = {e.id for e in self.entries}
        if len(ids) != len(self.entries):
            raise ValidationError("duplicate recording ids in manifest")
        if set(self.split_assignment) != ids:
            raise ValidationError("split assignment must cover exactly the manifest ids")
        subjects_by_split: dict[str, set[str]] = {Split.TRAIN: set(), Split.TEST: set()}
        for entry in self.entries:
            split = self.split_assignment[entry.id]
            if split not in subjects_by_split:
                raise ValidationError(f"{entry.id}: unknown split {split!r}")
            subjects_by_split[split].add(entry.subject_id)
        overlap = subjects_by_split[Split.TRAIN] & subjects_by_split[Split.TEST]
        if overlap:
            raise ValidationError(f"subjects present in both splits: {sorted(overlap)}")

    def subset(self, split: str) -> list[RecordingEntry]:
        return [e for e in self.entries if self.split_assignment[e.id] == split]

    def validate_paths(self) -> None:
        missing = [
            e.id
            for e in self.entries
            if not e.wav_path.is_file() or not e.annotation_path.is_file()
        ]
        if missing:
            raise DataError(f"recordings with unresolvable files: {missing}")


def assign_splits(
    labeled_subjects: list[tuple[str, str, Label]],
    split_seed: int,
    test_fraction: float,
) -> dict[str, str]:
    """Assign recording ids to TRAIN/TEST, keeping each subject whole.

    ``labeled_subjects`` holds (recording id, subject id, label) triples.
    Subjects are visited in a seed-shuffled order; each goes to TEST when
    that moves the per-class test counts closer to ``test_fraction`` of the
    class totals, so counts land within one recording of the target wherever
    the subject grouping permits.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    by_subject: dict[str, list[tuple[str, Label]]] = {}
    for rec_id, subject, label in labeled_subjects:
        by_subject.setdefault(subject, []).append((rec_id, label))

    totals = {lab: 0 for lab in Label}
    for _, subject, label in labeled_subjects:
        totals[label] += 1
    targets = {lab: totals[lab] * test_fraction for lab in Label}

    rng = np.random.default_rng(split_seed)
    order = sorted(by_subject)
    rng.shuffle(order)

    assignment: dict[str, str] = {}
    test_counts = {lab: 0.0 for lab in Label}
    for subject in order:
        counts = {lab: 0 for lab in Label}
        for _, label in by_subject[subject]:
            counts[label] += 1
        dev_now = sum(abs(test_counts[lab] - targets[lab]) for lab in Label)
        dev_if_test = sum(abs(test_counts[lab] + counts[lab] - targets[lab]) for lab in Label)
        split = Split.TEST if dev_if_test < dev_now else Split.TRAIN
        if split == Split.TEST:
            for lab in Label:
                test_counts[lab] += counts[lab]
        for rec_id, _ in by_subject[subject]:
            assignment[rec_id] = split
    return assignment


def build_manifest(
    root_dir: str | Path, split_seed: int, test_fraction: float
) -> DatasetManifest:
    """Scan a dataset directory and build a subject-disjoint split manifest.

    The directory must contain ``labels.csv`` plus ``<id>.wav`` and
    ``<id>.csv`` for every indexed recording.
    """
    root = Path(root_dir)
    label_path = root / "labels.csv"
    if not label_path.is_file():
        raise DataError(f"{root}: missing labels.csv")
    index = load_label_index(label_path)

    wav_ids = sorted(p.stem for p in root.glob("*.wav"))
    unlabeled = [rec_id for rec_id in wav_ids if rec_id not in index]
    if unlabeled:
        raise DataError(f"{root}: recordings without a label entry: {unlabeled}")

    entries = []
    for rec_id in sorted(index):
        label, subject = index[rec_id]
        entries.append(
            RecordingEntry(
                id=rec_id,
                wav_path=root / f"{rec_id}.wav",
                annotation_path=root / f"{rec_id}.csv",
                label=label,
                subject_id=subject,
            )
        )
    assignment = assign_splits(
        [(e.id, e.subject_id, e.label) for e in entries], split_seed, test_fraction
    )
    manifest = DatasetManifest(entries, assignment)
    manifest.validate_paths()
    return manifest


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    lines = ["# id\tsplit\tlabel\tsubject\twav\tannotation"]
    for entry in sorted(manifest.entries, key=lambda e: e.id):
        lines.append(
            "\t".join(
                [
                    entry.id,
                    manifest.split_assignment[entry.id],
                    entry.label.name,
                    entry.subject_id,
                    entry.wav_path.name,
                    entry.annotation_path.name,
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a manifest written by :func:`save_manifest`; paths resolve
    relative to the manifest's directory."""
    path = Path(path)
    root = path.parent
    entries = []
    assignment = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise FormatError(f"{path}:{lineno}: expected 6 tab-separated fields")
        rec_id, split, label, subject, wav_name, ann_name = parts
        entries.append(
            RecordingEntry(
                id=rec_id,
                wav_path=root / wav_name,
                annotation_path=root / ann_name,
                label=Label.parse(label),
                subject_id=subject,
            )
        )
        assignment[rec_id] = split
    return DatasetManifest(entries, assignment)
