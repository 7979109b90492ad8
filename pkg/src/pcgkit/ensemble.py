"""Classifier assembly: the 1-D and 2-D network architectures, score-level
fusion, per-beat prediction, and model persistence.

The two member networks share the container with the fused ensemble; HMM
pairs (one model per class) use the same format.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container
from .beats import Beat, LengthPolicy
from .core import Label
from .errors import ValidationError
from .features import KIND_MFCC, KIND_TVAR, FeatureMap
from .hmm import HmmModel, forward_loglik
from .nn import (
    BatchNorm,
    Conv1D,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    MaxPool1D,
    MaxPool2D,
    Network,
    ReLU,
    Softmax,
)

SOURCE_CNN1D = "cnn1d"
SOURCE_CNN2D = "cnn2d"
SOURCE_ECNN = "ecnn"
SOURCE_HMM = "hmm"

CNN1D_KERNEL = 6
CNN1D_FILTERS = 8
CNN1D_DENSE = 512
CNN1D_CONV_DROPOUT = {LengthPolicy.NORM_1000: 0.4, LengthPolicy.ZPAD_1200: 0.8}
CNN2D_KERNEL = 4
CNN2D_FILTERS = 16
CNN2D_DENSE = 256
CNN2D_CONV_DROPOUT = 0.5
DENSE_DROPOUT = 0.5

INPUT_SHAPE_1D = {LengthPolicy.NORM_1000: (1000, 1), LengthPolicy.ZPAD_1200: (1200, 1)}
INPUT_SHAPE_2D = (96, 12, 1)

_SCORE_ATOL = 1e-6


@dataclass(frozen=True)
class ClassScores:
    """Per-class scores from one classifier (probabilities, or their sum for
    the fused ensemble)."""

    p_normal: float
    p_abnormal: float
    source: str

    def __post_init__(self):
        total = self.p_normal + self.p_abnormal
        if min(self.p_normal, self.p_abnormal) < -_SCORE_ATOL:
            raise ValidationError("class scores must be non-negative")
        if self.source in (SOURCE_CNN1D, SOURCE_CNN2D, SOURCE_HMM):
            if abs(total - 1.0) > _SCORE_ATOL:
                raise ValidationError(f"{self.source} scores must sum to 1, got {total}")
        elif self.source == SOURCE_ECNN:
            if abs(total - 2.0) > _SCORE_ATOL and abs(total - 1.0) > _SCORE_ATOL:
                raise ValidationError(f"fused scores must sum to 2 (or 1 renormalized), got {total}")
        else:
            raise ValidationError(f"unknown score source {self.source!r}")

    @property
    def predicted(self) -> Label:
        # ties resolve to ABNORMAL: a screening miss costs more than a false alarm
        return Label.ABNORMAL if self.p_abnormal >= self.p_normal else Label.NORMAL

    def normalized(self) -> "ClassScores":
        total = self.p_normal + self.p_abnormal
        return ClassScores(self.p_normal / total, self.p_abnormal / total, self.source)


def fuse_scores(first: ClassScores, second: ClassScores) -> ClassScores:
    """Element-wise sum of the two member probability vectors."""
    for scores in (first, second):
        if scores.source not in (SOURCE_CNN1D, SOURCE_CNN2D):
            raise ValidationError(f"fusion expects CNN member scores, got {scores.source!r}")
    return ClassScores(
        first.p_normal + second.p_normal,
        first.p_abnormal + second.p_abnormal,
        SOURCE_ECNN,
    )


def build_1dcnn(variant: LengthPolicy = LengthPolicy.NORM_1000,
                dense_dropout: float = DENSE_DROPOUT) -> Network:
    """Raw-waveform classifier: three conv/pool blocks, 512-unit dense head.

    The zero-pad variant runs the identical stack on 1200-sample inputs with
    the heavier 0.8 convolution dropout.
    """
    if variant not in CNN1D_CONV_DROPOUT:
        raise ValidationError(f"1D variant must be NORM_1000 or ZPAD_1200, got {variant}")
    conv_dropout = CNN1D_CONV_DROPOUT[variant]
    return Network(
        [
            Conv1D(CNN1D_KERNEL, CNN1D_FILTERS, "conv1"),
            BatchNorm("bn1"),
            ReLU("relu1"),
            MaxPool1D("pool1"),
            Conv1D(CNN1D_KERNEL, CNN1D_FILTERS, "conv2"),
            ReLU("relu2"),
            Dropout(conv_dropout, "drop2"),
            MaxPool1D("pool2"),
            Conv1D(CNN1D_KERNEL, CNN1D_FILTERS, "conv3"),
            ReLU("relu3"),
            Dropout(conv_dropout, "drop3"),
            MaxPool1D("pool3"),
            Flatten("flatten"),
            Dense(CNN1D_DENSE, "dense1"),
            ReLU("relu4"),
            Dropout(dense_dropout, "drop4"),
            Dense(2, "logits"),
            Softmax("output"),
        ]
    )


def build_2dcnn(dense_dropout: float = DENSE_DROPOUT) -> Network:
    """Feature-map classifier over 96 x 12 inputs, 256-unit dense head."""
    return Network(
        [
            Conv2D(CNN2D_KERNEL, CNN2D_FILTERS, "conv1"),
            BatchNorm("bn1"),
            ReLU("relu1"),
            MaxPool2D("pool1"),
            Conv2D(CNN2D_KERNEL, CNN2D_FILTERS, "conv2"),
            ReLU("relu2"),
            Dropout(CNN2D_CONV_DROPOUT, "drop2"),
            MaxPool2D("pool2"),
            Conv2D(CNN2D_KERNEL, CNN2D_FILTERS, "conv3"),
            ReLU("relu3"),
            Dropout(CNN2D_CONV_DROPOUT, "drop3"),
            MaxPool2D("pool3"),
            Flatten("flatten"),
            Dense(CNN2D_DENSE, "dense1"),
            ReLU("relu5"),
            Dropout(dense_dropout, "drop5"),
            Dense(2, "logits"),
            Softmax("output"),
        ]
    )


# the ten architecture rows whose output shapes define each stack
TABLE_ROW_NAMES = [
    "conv1", "bn1", "pool1", "conv2", "pool2", "conv3", "pool3",
    "flatten", "dense1", "output",
]


def table_shapes(net: Network, input_shape: tuple) -> list[tuple]:
    walk = dict(net.shape_walk(input_shape))
    return [walk[name] for name in TABLE_ROW_NAMES]


@dataclass
class CnnClassifier:
    network: Network
    kind: str  # SOURCE_CNN1D or SOURCE_CNN2D
    beat_policy: LengthPolicy
    feature_kind: str | None = None  # None = raw waveform input
    manifest_digest: int = 0


@dataclass
class HmmClassifier:
    normal: HmmModel
    abnormal: HmmModel
    feature_kind: str = KIND_MFCC
    manifest_digest: int = 0


@dataclass
class EnsembleClassifier:
    member_1d: CnnClassifier
    member_2d: CnnClassifier
    manifest_digest: int = 0


Classifier = CnnClassifier | HmmClassifier | EnsembleClassifier


def _cnn_scores(model: CnnClassifier, x: np.ndarray) -> ClassScores:
    probs = model.network.forward(x, train=False)[0]
    return ClassScores(float(probs[0]), float(probs[1]), model.kind)


def predict(model: Classifier, beat: Beat, features: FeatureMap | None = None) -> ClassScores:
    """Score one beat; the ensemble needs both the raw beat and its feature map."""
    if isinstance(model, CnnClassifier) and model.kind == SOURCE_CNN1D:
        if beat.length_policy is not model.beat_policy:
            raise ValidationError(
                f"1D model expects {model.beat_policy.name} beats, got {beat.length_policy.name}"
            )
        return _cnn_scores(model, beat.samples[None, :, None])
    if isinstance(model, CnnClassifier):
        if features is None:
            raise ValidationError("2D model needs a feature map")
        if features.kind != model.feature_kind:
            raise ValidationError(
                f"2D model was trained on {model.feature_kind}, got {features.kind}"
            )
        return _cnn_scores(model, features.values[None, :, :, None])
    if isinstance(model, EnsembleClassifier):
        if features is None:
            raise ValidationError("ensemble prediction needs a feature map")
        return fuse_scores(
            predict(model.member_1d, beat),
            predict(model.member_2d, beat, features),
        )
    if isinstance(model, HmmClassifier):
        if features is None:
            raise ValidationError("HMM prediction needs a feature map")
        if features.kind != model.feature_kind:
            raise ValidationError(
                f"HMM was trained on {model.feature_kind}, got {features.kind}"
            )
        ll_normal = forward_loglik(model.normal, features)
        ll_abnormal = forward_loglik(model.abnormal, features)
        peak = max(ll_normal, ll_abnormal)
        e = np.exp([ll_normal - peak, ll_abnormal - peak])
        p = e / e.sum()
        return ClassScores(float(p[0]), float(p[1]), SOURCE_HMM)
    raise ValidationError(f"unknown model type {type(model).__name__}")


# --- persistence -----------------------------------------------------------

_FEATURE_CODE = {None: 0, KIND_MFCC: 1, KIND_TVAR: 2}
_CODE_FEATURE = {v: k for k, v in _FEATURE_CODE.items()}


def _meta_block(policy: LengthPolicy, feature_kind: str | None, digest: int) -> np.ndarray:
    return np.array(
        [int(policy), _FEATURE_CODE[feature_kind], digest >> 16, digest & 0xFFFF],
        dtype=np.float32,
    )


def _parse_meta(block: np.ndarray) -> tuple[LengthPolicy, str | None, int]:
    policy = LengthPolicy(int(block[0]))
    feature = _CODE_FEATURE[int(block[1])]
    digest = (int(block[2]) << 16) | int(block[3])
    return policy, feature, digest


def _cnn_blocks(model: CnnClassifier, prefix: str = "") -> dict[str, np.ndarray]:
    blocks = {f"{prefix}meta": _meta_block(model.beat_policy, model.feature_kind, model.manifest_digest)}
    for name, value in model.network.state().items():
        blocks[f"{prefix}net/{name}"] = value
    return blocks


def _hmm_blocks(model: HmmModel, prefix: str) -> dict[str, np.ndarray]:
    return {
        f"{prefix}/transition": model.transition,
        f"{prefix}/initial": model.initial,
        f"{prefix}/weights": model.weights,
        f"{prefix}/means": model.means,
        f"{prefix}/variances": model.variances,
    }


def save_model(model: Classifier, path) -> None:
    """Serialize a trained classifier; the round trip is bit-exact."""
    if isinstance(model, CnnClassifier):
        kind = container.KIND_CNN1D if model.kind == SOURCE_CNN1D else container.KIND_CNN2D
        container.save_blocks(path, kind, _cnn_blocks(model))
    elif isinstance(model, EnsembleClassifier):
        blocks = {"meta": _meta_block(LengthPolicy.NORM_1000, None, model.manifest_digest)}
        blocks.update(_cnn_blocks(model.member_1d, "m1/"))
        blocks.update(_cnn_blocks(model.member_2d, "m2/"))
        container.save_blocks(path, container.KIND_ECNN, blocks)
    elif isinstance(model, HmmClassifier):
        blocks = {"meta": _meta_block(LengthPolicy.NORM_1000, model.feature_kind, model.manifest_digest)}
        blocks.update(_hmm_blocks(model.normal, "normal"))
        blocks.update(_hmm_blocks(model.abnormal, "abnormal"))
        container.save_blocks(path, container.KIND_HMM, blocks)
    else:
        raise ValidationError(f"cannot save model of type {type(model).__name__}")


def _load_cnn(blocks: dict[str, np.ndarray], source: str, prefix: str = "") -> CnnClassifier:
    policy, feature, digest = _parse_meta(blocks[f"{prefix}meta"])
    if source == SOURCE_CNN1D:
        net = build_1dcnn(policy).initialize(INPUT_SHAPE_1D[policy])
    else:
        net = build_2dcnn().initialize(INPUT_SHAPE_2D)
    state = {
        name[len(prefix) + 4 :]: value
        for name, value in blocks.items()
        if name.startswith(f"{prefix}net/")
    }
    net.load_state(state)
    return CnnClassifier(net, source, policy, feature, digest)


def _load_hmm_model(blocks: dict[str, np.ndarray], prefix: str, label: Label) -> HmmModel:
    def get(key):
        return blocks[f"{prefix}/{key}"].astype(np.float64)

    return HmmModel(
        transition=get("transition"),
        initial=get("initial"),
        weights=get("weights"),
        means=get("means"),
        variances=np.maximum(get("variances"), 1e-4),
        class_label=label,
    )


def load_model(path) -> Classifier:
    kind, blocks = container.load_blocks(path)
    if kind == container.KIND_CNN1D:
        return _load_cnn(blocks, SOURCE_CNN1D)
    if kind == container.KIND_CNN2D:
        return _load_cnn(blocks, SOURCE_CNN2D)
    if kind == container.KIND_ECNN:
        _, _, digest = _parse_meta(blocks["meta"])
        return EnsembleClassifier(
            member_1d=_load_cnn(blocks, SOURCE_CNN1D, "m1/"),
            member_2d=_load_cnn(blocks, SOURCE_CNN2D, "m2/"),
            manifest_digest=digest,
        )
    _, feature, digest = _parse_meta(blocks["meta"])
    return HmmClassifier(
        normal=_load_hmm_model(blocks, "normal", Label.NORMAL),
        abnormal=_load_hmm_model(blocks, "abnormal", Label.ABNORMAL),
        feature_kind=feature,
        manifest_digest=digest,
    )
