"""Ingestion tests: WAV round trips, annotation parsing, manifest splits."""

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcgkit.core import Label, Signal, State, StateSequence
from pcgkit.errors import (
    ConfigError,
    DataError,
    FormatError,
    UnsupportedFormatError,
    ValidationError,
)
from pcgkit.io import (
    DatasetManifest,
    RecordingEntry,
    Split,
    assign_splits,
    build_manifest,
    load_annotations,
    load_label_index,
    load_manifest,
    load_wav,
    save_annotations,
    save_manifest,
    save_wav,
)


def write_pcm_wav(path, pcm, rate=2000):
    import wave

    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(np.asarray(pcm, dtype="<i2").tobytes())


class TestLoadWav:
    def test_two_second_mono_2000hz(self, tmp_path):
        path = tmp_path / "two.wav"
        write_pcm_wav(path, np.zeros(4000, dtype=np.int16), rate=2000)
        signal = load_wav(path)
        assert len(signal) == 4000
        assert signal.sample_rate_hz == 2000

    def test_all_zero_pcm_maps_to_zero(self, tmp_path):
        path = tmp_path / "zero.wav"
        write_pcm_wav(path, np.zeros(100, dtype=np.int16))
        assert np.all(load_wav(path).samples == 0.0)

    def test_full_scale_values(self, tmp_path):
        # -32768 -> -1.0 and +32767 -> 32767/32768 = 0.999969482421875
        path = tmp_path / "fs.wav"
        write_pcm_wav(path, np.array([-32768, 32767], dtype=np.int16))
        samples = load_wav(path).samples
        assert samples[0] == -1.0
        assert samples[1] == 32767.0 / 32768.0

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"RIFFgarbage-that-is-not-wave")
        with pytest.raises(FormatError):
            load_wav(path)

    def test_stereo_rejected(self, tmp_path):
        import wave

        path = tmp_path / "stereo.wav"
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(2)
            fh.setsampwidth(2)
            fh.setframerate(2000)
            fh.writeframes(np.zeros(200, dtype="<i2").tobytes())
        with pytest.raises(UnsupportedFormatError):
            load_wav(path)

    def test_8bit_rejected(self, tmp_path):
        import wave

        path = tmp_path / "eight.wav"
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(1)
            fh.setframerate(2000)
            fh.writeframes(bytes(100))
        with pytest.raises(UnsupportedFormatError):
            load_wav(path)

    def test_roundtrip_within_quantization(self, tmp_path):
        path = tmp_path / "rt.wav"
        for seed in range(25):
            rng = np.random.default_rng(seed)
            signal = Signal(rng.uniform(-0.99, 0.99, size=256), 1000)
            save_wav(signal, path)
            recovered = load_wav(path)
            assert recovered.sample_rate_hz == 1000
            assert np.max(np.abs(recovered.samples - signal.samples)) <= 1.0 / 32768.0


class TestAnnotations:
    def test_direct_parse(self, tmp_path):
        path = tmp_path / "ann.csv"
        path.write_text("start_sample,state\n0,S1\n120,systole\n400,S2\n520,diastole\n")
        states = load_annotations(path)
        assert len(states) == 4
        assert states.entries[0] == (0, State.S1)
        assert states.entries[3] == (520, State.DIASTOLE)

    def test_s1_then_s2_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("start_sample,state\n0,S1\n120,S2\n")
        with pytest.raises(ValidationError):
            load_annotations(path)

    def test_three_full_cycles(self, tmp_path):
        rows = ["start_sample,state"]
        start = 0
        for _ in range(3):
            for state in ("S1", "systole", "S2", "diastole"):
                rows.append(f"{start},{state}")
                start += 100
        path = tmp_path / "cycles.csv"
        path.write_text("\n".join(rows) + "\n")
        states = load_annotations(path)
        assert len(states) == 12
        starts = [s for s, _ in states.entries]
        assert starts == sorted(starts)
        assert len(set(starts)) == 12

    def test_unknown_state_token(self, tmp_path):
        path = tmp_path / "tok.csv"
        path.write_text("start_sample,state\n0,S3\n")
        with pytest.raises(ValidationError):
            load_annotations(path)

    def test_non_monotone_rejected(self, tmp_path):
        path = tmp_path / "mono.csv"
        path.write_text("start_sample,state\n100,S1\n50,systole\n")
        with pytest.raises(ValidationError):
            load_annotations(path)

    def test_save_load_roundtrip(self, tmp_path):
        states = StateSequence(
            ((5, State.SYSTOLE), (40, State.S2), (80, State.DIASTOLE), (200, State.S1))
        )
        path = tmp_path / "rt.csv"
        save_annotations(states, path)
        assert load_annotations(path) == states


@st.composite
def cycle_orders(draw):
    """Random state lists, valid or not; validity decided by the cycle rule."""
    n = draw(st.integers(2, 10))
    states = [draw(st.sampled_from(list(State))) for _ in range(n)]
    return states


class TestStateSequenceInvariants:
    @given(cycle_orders())
    @settings(max_examples=200, deadline=None)
    def test_invalid_orders_never_construct(self, states):
        entries = tuple((10 * i, s) for i, s in enumerate(states))
        valid = all(states[i].successor is states[i + 1] for i in range(len(states) - 1))
        if valid:
            StateSequence(entries)
        else:
            with pytest.raises(ValidationError):
                StateSequence(entries)

    def test_partial_leading_cycle_allowed(self):
        StateSequence(((0, State.DIASTOLE), (50, State.S1), (80, State.SYSTOLE)))


@st.composite
def subject_groupings(draw):
    n_subjects = draw(st.integers(2, 20))
    triples = []
    for s in range(n_subjects):
        n_recs = draw(st.integers(1, 4))
        for r in range(n_recs):
            label = draw(st.sampled_from([Label.NORMAL, Label.ABNORMAL]))
            triples.append((f"rec{s}_{r}", f"subj{s}", label))
    return triples


class TestAssignSplits:
    @given(subject_groupings(), st.integers(0, 2**31), st.floats(0.1, 0.9))
    @settings(max_examples=150, deadline=None)
    def test_partition_and_subject_disjointness(self, triples, seed, fraction):
        assignment = assign_splits(triples, seed, fraction)
        assert set(assignment) == {rec_id for rec_id, _, _ in triples}
        split_of_subject = {}
        for rec_id, subject, _ in triples:
            split = assignment[rec_id]
            assert split in (Split.TRAIN, Split.TEST)
            assert split_of_subject.setdefault(subject, split) == split

    @given(st.integers(0, 2**31), st.floats(0.2, 0.8))
    @settings(max_examples=50, deadline=None)
    def test_singleton_subjects_hit_targets_within_one(self, seed, fraction):
        triples = [(f"r{i}", f"s{i}", Label.NORMAL if i % 3 else Label.ABNORMAL) for i in range(40)]
        assignment = assign_splits(triples, seed, fraction)
        for label in Label:
            total = sum(1 for _, _, lab in triples if lab is label)
            in_test = sum(
                1 for rec, _, lab in triples if lab is label and assignment[rec] == Split.TEST
            )
            assert abs(in_test - total * fraction) <= 1.0

    def test_deterministic_given_seed(self):
        triples = [(f"r{i}", f"s{i // 2}", Label.NORMAL) for i in range(10)]
        first = assign_splits(triples, 42, 0.5)
        second = assign_splits(triples, 42, 0.5)
        assert first == second

    def test_single_subject_owns_all_abnormal(self):
        triples = [(f"n{i}", f"subj{i}", Label.NORMAL) for i in range(8)]
        triples += [(f"a{i}", "subj_abn", Label.ABNORMAL) for i in range(4)]
        assignment = assign_splits(triples, 7, 0.5)
        abn_splits = {assignment[f"a{i}"] for i in range(4)}
        assert len(abn_splits) == 1

    def test_bad_fraction(self):
        with pytest.raises(ConfigError):
            assign_splits([("r", "s", Label.NORMAL)], 0, 1.5)


def make_dataset_dir(tmp_path, ids_labels):
    for rec_id, _ in ids_labels:
        write_pcm_wav(tmp_path / f"{rec_id}.wav", np.zeros(64, dtype=np.int16))
        (tmp_path / f"{rec_id}.csv").write_text("start_sample,state\n0,S1\n")
    rows = ["id,label,subject_id"] + [f"{rec_id},{label},{rec_id}" for rec_id, label in ids_labels]
    (tmp_path / "labels.csv").write_text("\n".join(rows) + "\n")


class TestManifest:
    def test_build_and_roundtrip(self, tmp_path):
        make_dataset_dir(
            tmp_path, [("a", "NORMAL"), ("b", "ABNORMAL"), ("c", "NORMAL"), ("d", "ABNORMAL")]
        )
        manifest = build_manifest(tmp_path, split_seed=3, test_fraction=0.5)
        assert len(manifest.entries) == 4
        save_manifest(manifest, tmp_path / "manifest.tsv")
        loaded = load_manifest(tmp_path / "manifest.tsv")
        assert loaded.split_assignment == manifest.split_assignment
        assert {e.id for e in loaded.entries} == {"a", "b", "c", "d"}
        loaded.validate_paths()

    def test_unlabeled_recording_listed(self, tmp_path):
        make_dataset_dir(tmp_path, [("a", "NORMAL")])
        write_pcm_wav(tmp_path / "orphan.wav", np.zeros(32, dtype=np.int16))
        with pytest.raises(DataError, match="orphan"):
            build_manifest(tmp_path, split_seed=0, test_fraction=0.5)

    def test_subject_straddling_rejected(self):
        entries = [
            RecordingEntry("a", Path("a.wav"), Path("a.csv"), Label.NORMAL, "s1"),
            RecordingEntry("b", Path("b.wav"), Path("b.csv"), Label.NORMAL, "s1"),
        ]
        with pytest.raises(ValidationError):
            DatasetManifest(entries, {"a": Split.TRAIN, "b": Split.TEST})

    def test_label_index_subject_default(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("id,label,subject_id\nx,NORMAL,\ny,abnormal,patient9\n")
        index = load_label_index(path)
        assert index["x"] == (Label.NORMAL, "x")
        assert index["y"] == (Label.ABNORMAL, "patient9")
