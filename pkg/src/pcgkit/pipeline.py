"""End-to-end orchestration: manifests to beats, feature batches, trained
classifiers, and evaluation reports. Used by the CLI and experiment scripts."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass

import numpy as np

from .beats import Beat, LengthPolicy, apply_length_policy, rescale_states, segment_beats
from .core import Label, Signal, StateSequence
from .dsp import preprocess
from .ensemble import (
    SOURCE_CNN1D,
    SOURCE_CNN2D,
    Classifier,
    CnnClassifier,
    EnsembleClassifier,
    HmmClassifier,
    INPUT_SHAPE_1D,
    INPUT_SHAPE_2D,
    build_1dcnn,
    build_2dcnn,
)
from .errors import ConfigError, ValidationError
from .features import KIND_MFCC, KIND_TVAR, FeatureMap, feature_map_for
from .hmm import baum_welch, init_hmm
from .io import DatasetManifest, RecordingEntry, Split, load_annotations, load_wav
from .metrics import EvalReport, evaluate
from .nn import TrainConfig, train

log = logging.getLogger(__name__)

# tuned member learning rates; batch size 128 for both networks
LEARNING_RATE_1D = 0.001031
LEARNING_RATE_2D = 0.000496
BATCH_SIZE = 128

FEATURE_RAW = "raw"
MODEL_NAMES = ("cnn1d", "cnn2d", "ecnn", "hmm")

_INIT_STREAM_1D = 11
_INIT_STREAM_2D = 12
_HMM_STREAM = 13


def manifest_digest(manifest: DatasetManifest) -> int:
    """CRC32 over the canonical id/split/label/subject listing."""
    lines = [
        f"{e.id},{manifest.split_assignment[e.id]},{e.label.name},{e.subject_id}"
        for e in sorted(manifest.entries, key=lambda e: e.id)
    ]
    return zlib.crc32("\n".join(lines).encode("utf-8"))


def prepare_recording(entry: RecordingEntry) -> tuple[Signal, StateSequence]:
    """Load, preprocess to 1000 Hz, and rescale the annotations to match."""
    raw = load_wav(entry.wav_path)
    states = load_annotations(entry.annotation_path)
    processed = preprocess(raw)
    return processed, rescale_states(states, raw.sample_rate_hz, processed.sample_rate_hz)


def collect_beats(
    manifest: DatasetManifest, split: str, policy: LengthPolicy
) -> tuple[list[Beat], int, int]:
    """Segment every recording of a split; returns (beats, n_complete, n_discarded)."""
    raw_beats: list[Beat] = []
    for entry in manifest.subset(split):
        signal, states = prepare_recording(entry)
        raw_beats.extend(segment_beats(signal, states, entry.label, entry.id))
    kept, discarded = apply_length_policy(raw_beats, policy)
    log.info(
        "%s: %d complete beats, %d kept under %s (%d discarded)",
        split, len(raw_beats), len(kept), policy.name, discarded,
    )
    return kept, len(raw_beats), discarded


def beats_to_maps(beats: list[Beat], kind: str) -> list[FeatureMap]:
    return [feature_map_for(beat, kind) for beat in beats]


def raw_batch(beats: list[Beat]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([b.samples for b in beats]).astype(np.float32)[:, :, None]
    y = np.array([int(b.label) for b in beats], dtype=np.int64)
    return x, y


def map_batch(maps: list[FeatureMap], beats: list[Beat]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([m.values for m in maps]).astype(np.float32)[:, :, :, None]
    y = np.array([int(b.label) for b in beats], dtype=np.int64)
    return x, y


def batched_probs(network, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    parts = [
        network.forward(x[start : start + batch_size], train=False)
        for start in range(0, len(x), batch_size)
    ]
    return np.concatenate(parts, axis=0)


def _member_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence((seed, stream)).generate_state(1)[0])


@dataclass
class TrainResult:
    model: Classifier
    history: list[dict]


def _history_rows(tag: str, rows: list[dict]) -> list[dict]:
    return [{"model": tag, **row} for row in rows]


def _train_cnn1d(
    beats: list[Beat], policy: LengthPolicy, cfg: TrainConfig, digest: int
) -> TrainResult:
    x, y = raw_batch(beats)
    net = build_1dcnn(policy)
    net.initialize(
        INPUT_SHAPE_1D[policy],
        np.random.default_rng(np.random.SeedSequence((cfg.seed, _INIT_STREAM_1D))),
    )
    history = train(net, x, y, cfg)
    model = CnnClassifier(net, SOURCE_CNN1D, policy, None, digest)
    return TrainResult(model, _history_rows("cnn1d", history))


def _train_cnn2d(
    beats: list[Beat], maps: list[FeatureMap], feature_kind: str,
    cfg: TrainConfig, digest: int
) -> TrainResult:
    x, y = map_batch(maps, beats)
    net = build_2dcnn()
    net.initialize(
        INPUT_SHAPE_2D,
        np.random.default_rng(np.random.SeedSequence((cfg.seed, _INIT_STREAM_2D))),
    )
    history = train(net, x, y, cfg)
    model = CnnClassifier(net, SOURCE_CNN2D, LengthPolicy.NORM_1000, feature_kind, digest)
    return TrainResult(model, _history_rows("cnn2d", history))


def _train_hmm(
    beats: list[Beat], maps: list[FeatureMap], feature_kind: str,
    seed: int, digest: int, max_iters: int, tol: float
) -> TrainResult:
    history: list[dict] = []
    per_class: dict[Label, object] = {}
    for label in (Label.NORMAL, Label.ABNORMAL):
        seqs = [m for m, b in zip(maps, beats) if b.label is label]
        if not seqs:
            raise ValidationError(f"no training beats for class {label.name}")
        model = init_hmm(seqs, label, seed=_member_seed(seed, _HMM_STREAM + int(label)))
        model, loglik = baum_welch(model, seqs, max_iters=max_iters, tol=tol)
        per_class[label] = model.quantized()
        history.extend(
            {"model": f"hmm-{label.name.lower()}", "epoch": i, "loglik": ll}
            for i, ll in enumerate(loglik)
        )
    model = HmmClassifier(per_class[Label.NORMAL], per_class[Label.ABNORMAL], feature_kind, digest)
    return TrainResult(model, history)


def train_classifier(
    model_name: str,
    manifest: DatasetManifest,
    beat_policy: LengthPolicy = LengthPolicy.NORM_1000,
    feature_kind: str = KIND_MFCC,
    seed: int = 0,
    epochs: int = 50,
    batch_size: int = BATCH_SIZE,
    learning_rate: float | None = None,
    class_weights: tuple[float, float] | None = None,
    val_fraction: float = 0.1,
    patience: int = 10,
    hmm_iters: int = 50,
    hmm_tol: float = 1e-5,
) -> TrainResult:
    """Train one classifier on the manifest's TRAIN split."""
    if model_name not in MODEL_NAMES:
        raise ConfigError(f"unknown model {model_name!r}, expected one of {MODEL_NAMES}")
    needs_features = model_name in ("cnn2d", "ecnn", "hmm")
    if needs_features and feature_kind not in (KIND_MFCC, KIND_TVAR):
        raise ConfigError(f"{model_name} needs mfcc or tvar features, got {feature_kind!r}")
    if model_name != "cnn1d" and beat_policy is not LengthPolicy.NORM_1000:
        raise ConfigError(f"{model_name} requires the norm1000 beat policy")

    digest = manifest_digest(manifest)
    beats, _, _ = collect_beats(manifest, Split.TRAIN, beat_policy)
    if not beats:
        raise ValidationError("TRAIN split produced no beats")

    def cnn_cfg(lr_default: float, stream: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=learning_rate if learning_rate is not None else lr_default,
            batch_size=batch_size,
            epochs=epochs,
            class_weights=class_weights,
            seed=_member_seed(seed, stream),
            val_fraction=val_fraction,
            patience=patience,
        )

    if model_name == "cnn1d":
        return _train_cnn1d(beats, beat_policy, cnn_cfg(LEARNING_RATE_1D, 1), digest)

    maps = beats_to_maps(beats, feature_kind)
    if model_name == "cnn2d":
        return _train_cnn2d(beats, maps, feature_kind, cnn_cfg(LEARNING_RATE_2D, 2), digest)
    if model_name == "hmm":
        return _train_hmm(beats, maps, feature_kind, seed, digest, hmm_iters, hmm_tol)

    # ecnn: both members trained independently on the same beats
    res_1d = _train_cnn1d(beats, beat_policy, cnn_cfg(LEARNING_RATE_1D, 1), digest)
    res_2d = _train_cnn2d(beats, maps, feature_kind, cnn_cfg(LEARNING_RATE_2D, 2), digest)
    model = EnsembleClassifier(res_1d.model, res_2d.model, digest)
    return TrainResult(model, res_1d.history + res_2d.history)


def _model_feature_kind(model: Classifier) -> str | None:
    if isinstance(model, CnnClassifier):
        return model.feature_kind
    if isinstance(model, EnsembleClassifier):
        return model.member_2d.feature_kind
    return model.feature_kind


def _model_beat_policy(model: Classifier) -> LengthPolicy:
    if isinstance(model, CnnClassifier):
        return model.beat_policy
    if isinstance(model, EnsembleClassifier):
        return model.member_1d.beat_policy
    return LengthPolicy.NORM_1000


def score_beats(
    model: Classifier, beats: list[Beat], maps: list[FeatureMap] | None
) -> np.ndarray:
    """Class scores for a batch of beats, one (p_normal, p_abnormal) row each.

    CNN rows sum to 1, fused ensemble rows to 2; the argmax (ties to
    ABNORMAL) is the predicted label either way.
    """
    if isinstance(model, CnnClassifier) and model.kind == SOURCE_CNN1D:
        x, _ = raw_batch(beats)
        return batched_probs(model.network, x)
    if isinstance(model, CnnClassifier):
        x, _ = map_batch(maps, beats)
        return batched_probs(model.network, x)
    if isinstance(model, EnsembleClassifier):
        return score_beats(model.member_1d, beats, None) + score_beats(
            model.member_2d, beats, maps
        )
    from .hmm import forward_loglik  # local import keeps module deps one-way

    scores = np.zeros((len(beats), 2))
    for i, fmap in enumerate(maps):
        ll = np.array(
            [forward_loglik(model.normal, fmap), forward_loglik(model.abnormal, fmap)]
        )
        e = np.exp(ll - ll.max())
        scores[i] = e / e.sum()
    return scores


@dataclass
class Evaluation:
    report: EvalReport
    rows: list[dict]  # per-beat: recording_id, beat_index, p_normal, p_abnormal, labels


def evaluate_classifier(
    model: Classifier, manifest: DatasetManifest, split: str = Split.TEST
) -> Evaluation:
    """Score every beat of a split and fold the predictions into a report."""
    digest = manifest_digest(manifest)
    model_digest = getattr(model, "manifest_digest", 0)
    if model_digest and model_digest != digest:
        log.warning(
            "model was trained under a different manifest (digest %08x vs %08x); "
            "train/test subject disjointness cannot be verified",
            model_digest, digest,
        )
    policy = _model_beat_policy(model)
    beats, _, _ = collect_beats(manifest, split, policy)
    if not beats:
        raise ValidationError(f"{split} split produced no beats")
    feature_kind = _model_feature_kind(model)
    maps = beats_to_maps(beats, feature_kind) if feature_kind else None

    scores = score_beats(model, beats, maps)
    predicted = np.where(scores[:, 1] >= scores[:, 0], int(Label.ABNORMAL), int(Label.NORMAL))
    truth = np.array([int(b.label) for b in beats])
    report = evaluate(list(zip(truth.tolist(), predicted.tolist())))

    normalized = scores / scores.sum(axis=1, keepdims=True)
    rows = [
        {
            "recording_id": beat.recording_id,
            "beat_index": beat.beat_index,
            "p_normal": float(normalized[i, 0]),
            "p_abnormal": float(normalized[i, 1]),
            "label_true": Label(int(truth[i])).name,
            "label_pred": Label(int(predicted[i])).name,
        }
        for i, beat in enumerate(beats)
    ]
    return Evaluation(report, rows)
