"""Segmentation and length-normalization tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcgkit.beats import (
    Beat,
    LengthPolicy,
    apply_length_policy,
    normalize_duration,
    read_beats,
    rescale_states,
    segment_beats,
    write_beats,
    zero_pad,
)
from pcgkit.core import Label, Signal, State, StateSequence
from pcgkit.errors import ValidationError
from pcgkit.synth import SynthConfig, synth_pcg


def cycle_states(starts):
    """Full cycles beginning at each start; last entry list may be partial."""
    entries = []
    order = [State.S1, State.SYSTOLE, State.S2, State.DIASTOLE]
    for start, length in zip(starts, np.diff(starts + [starts[-1] + 400])):
        step = length // 4
        for j, state in enumerate(order):
            entries.append((start + j * step, state))
    return StateSequence(tuple(entries))


class TestSegmentBeats:
    def test_three_complete_cycles(self):
        states = cycle_states([0, 400, 800, 1200])
        signal = Signal(np.arange(1600, dtype=float), 1000)
        beats = segment_beats(signal, states, Label.NORMAL, "r")
        assert len(beats) == 3
        assert [b.beat_index for b in beats] == [0, 1, 2]
        assert all(b.length_policy is LengthPolicy.RAW for b in beats)

    def test_leading_partial_cycle_dropped(self):
        entries = ((0, State.SYSTOLE), (100, State.S2), (200, State.DIASTOLE),
                   (300, State.S1), (400, State.SYSTOLE), (500, State.S2),
                   (600, State.DIASTOLE), (700, State.S1))
        states = StateSequence(entries)
        signal = Signal(np.ones(900), 1000)
        beats = segment_beats(signal, states, Label.NORMAL)
        assert len(beats) == 1
        assert len(beats[0]) == 400  # [300, 700)

    def test_no_complete_cycle_gives_empty_list(self):
        states = StateSequence(((0, State.S1), (100, State.SYSTOLE)))
        beats = segment_beats(Signal(np.ones(300), 1000), states, Label.NORMAL)
        assert beats == []

    def test_spans_match_generator_ground_truth(self):
        cfg = SynthConfig(n_recordings=1, beats_per_recording=5, seed=13, sample_rate_hz=1000)
        _, signal, states, label = synth_pcg(cfg)[0]
        beats = segment_beats(signal, states, label, "gt")
        s1_starts = states.starts_of(State.S1)
        assert len(beats) == 5
        for i, beat in enumerate(beats):
            span = s1_starts[i + 1] - s1_starts[i]
            assert len(beat) == span
            assert np.array_equal(beat.samples, signal.samples[s1_starts[i] : s1_starts[i + 1]])

    def test_cycle_past_signal_end_dropped(self):
        states = cycle_states([0, 400, 800])
        signal = Signal(np.ones(700), 1000)  # second cycle needs samples up to 800
        beats = segment_beats(signal, states, Label.ABNORMAL)
        assert len(beats) == 1

    @given(st.integers(0, 2**32 - 1), st.integers(1, 6))
    @settings(max_examples=40, deadline=None)
    def test_beat_count_equals_complete_cycles(self, seed, n_beats):
        cfg = SynthConfig(
            n_recordings=1, beats_per_recording=n_beats, seed=seed % 10_000, sample_rate_hz=1000
        )
        _, signal, states, label = synth_pcg(cfg)[0]
        beats = segment_beats(signal, states, label)
        n_s1 = len(states.starts_of(State.S1))
        assert len(beats) == n_s1 - 1 == n_beats


class TestNormalizeDuration:
    def test_identity_when_lengths_match(self):
        beat = Beat(np.sin(np.arange(1000) * 0.01), Label.NORMAL, "r", 0)
        out = normalize_duration(beat)
        assert out.length_policy is LengthPolicy.NORM_1000
        assert np.array_equal(out.samples, beat.samples)

    def test_ramp_expands_exactly(self):
        beat = Beat(np.arange(500, dtype=float), Label.NORMAL, "r", 0)
        out = normalize_duration(beat)
        expected = np.arange(1000) * 0.5
        assert np.max(np.abs(out.samples - expected)) < 1e-6

    def test_sine_rescales_to_equivalent_frequency(self):
        # 800 samples of 50 Hz at 1 kHz stretch to 1000 samples of 40 Hz
        n = np.arange(800)
        beat = Beat(np.sin(2 * np.pi * 50.0 * n / 1000.0), Label.NORMAL, "r", 0)
        out = normalize_duration(beat)
        expected = np.sin(2 * np.pi * 40.0 * np.arange(1000) / 1000.0)
        assert np.max(np.abs(out.samples - expected)) < 0.02

    def test_single_sample_rejected(self):
        with pytest.raises(ValidationError):
            normalize_duration(Beat(np.array([1.0]), Label.NORMAL, "r", 0))

    def test_non_raw_rejected(self):
        beat = normalize_duration(Beat(np.ones(900), Label.NORMAL, "r", 0))
        with pytest.raises(ValidationError):
            normalize_duration(beat)

    @given(st.integers(0, 2**32 - 1), st.integers(300, 1500))
    @settings(max_examples=60, deadline=None)
    def test_argmax_position_maps_by_length_ratio(self, seed, length):
        rng = np.random.default_rng(seed)
        samples = rng.standard_normal(length) * 0.1
        peak = rng.integers(10, length - 10)
        samples[peak] = 50.0
        out = normalize_duration(Beat(samples, Label.NORMAL, "r", 0))
        mapped = int(np.argmax(out.samples))
        assert abs(mapped - peak * 1000 / length) <= 2


class TestZeroPad:
    def test_overlong_beat_discarded(self):
        assert zero_pad(Beat(np.ones(1250), Label.NORMAL, "r", 0)) is None

    def test_exact_length_unchanged(self):
        samples = np.random.default_rng(0).standard_normal(1200)
        out = zero_pad(Beat(samples, Label.NORMAL, "r", 0))
        assert out.length_policy is LengthPolicy.ZPAD_1200
        assert np.array_equal(out.samples, samples)

    def test_padding_is_zero_and_content_intact(self):
        samples = np.random.default_rng(1).standard_normal(900)
        out = zero_pad(Beat(samples, Label.ABNORMAL, "r", 3))
        assert len(out) == 1200
        assert np.array_equal(out.samples[:900], samples)
        assert np.all(out.samples[900:] == 0.0)

    @given(st.integers(2, 1400))
    @settings(max_examples=80, deadline=None)
    def test_never_alters_original_samples(self, length):
        samples = np.random.default_rng(length).standard_normal(length)
        out = zero_pad(Beat(samples, Label.NORMAL, "r", 0))
        if length > 1200:
            assert out is None
        else:
            assert np.array_equal(out.samples[:length], samples)

    def test_apply_policy_counts_discards(self):
        beats = [
            Beat(np.ones(900), Label.NORMAL, "r", 0),
            Beat(np.ones(1300), Label.NORMAL, "r", 1),
            Beat(np.ones(1100), Label.NORMAL, "r", 2),
        ]
        kept, discarded = apply_length_policy(beats, LengthPolicy.ZPAD_1200)
        assert len(kept) == 2
        assert discarded == 1


class TestRescaleStates:
    def test_two_to_one(self):
        states = StateSequence(((0, State.S1), (240, State.SYSTOLE), (800, State.S2), (1040, State.DIASTOLE)))
        out = rescale_states(states, 2000, 1000)
        assert [s for s, _ in out.entries] == [0, 120, 400, 520]

    def test_identity(self):
        states = StateSequence(((0, State.S1),))
        assert rescale_states(states, 1000, 1000) is states


class TestBeatDump:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        beats = [
            zero_pad(Beat(rng.standard_normal(800), Label.NORMAL, "rec-a", 0)),
            normalize_duration(Beat(rng.standard_normal(900), Label.ABNORMAL, "rec-b", 1)),
        ]
        path = tmp_path / "beats.bin"
        write_beats(path, beats)
        loaded = read_beats(path)
        assert len(loaded) == 2
        for orig, back in zip(beats, loaded):
            assert back.recording_id == orig.recording_id
            assert back.beat_index == orig.beat_index
            assert back.label is orig.label
            assert back.length_policy is orig.length_policy
            assert np.allclose(back.samples, orig.samples, atol=1e-6)
