"""Deterministic training loop: seeded shuffling/init/dropout, Adam updates,
class-weighted loss, and early stopping on validation balanced accuracy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError, ValidationError
from ..metrics import evaluate
from .network import Network, weighted_cross_entropy

SHUFFLE_STREAM = 1
DROPOUT_STREAM = 2
VAL_SPLIT_STREAM = 3
INIT_STREAM = 4


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 50
    class_weights: tuple[float, float] | None = None  # None: inverse class frequency
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    val_fraction: float = 0.1
    patience: int = 10

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValidationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValidationError("batch_size must be >= 1 and epochs >= 0")
        if self.class_weights is not None and any(w <= 0 for w in self.class_weights):
            raise ValidationError("class weights must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValidationError("val_fraction must be in [0, 1)")


class Adam:
    """Standard Adam with bias correction; updates parameters in place."""

    def __init__(self, params: dict[str, np.ndarray], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for key, p in params.items():
            g = grads[key]
            if g is None:
                raise NumericError(f"missing gradient for {key}")
            m = self.m[key]
            v = self.v[key]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p -= (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.dtype)


def inverse_frequency_weights(labels: np.ndarray) -> tuple[float, float]:
    """(w_normal, w_abnormal) with w_normal = 1 and w_abnormal = n0 / n1."""
    labels = np.asarray(labels)
    n0 = int(np.sum(labels == 0))
    n1 = int(np.sum(labels == 1))
    if n0 == 0 or n1 == 0:
        raise ValidationError("both classes must be present to derive class weights")
    return (1.0, n0 / n1)


def stratified_split(
    labels: np.ndarray, fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Per-class random holdout; returns (train_idx, held_idx)."""
    labels = np.asarray(labels)
    held = []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        n_held = int(round(len(idx) * fraction))
        held.extend(idx[:n_held].tolist())
    held = np.sort(np.asarray(held, dtype=np.int64))
    mask = np.ones(len(labels), dtype=bool)
    mask[held] = False
    return np.flatnonzero(mask), held


def _eval_split(net: Network, x: np.ndarray, y: np.ndarray, weights,
                batch_size: int) -> tuple[float, dict]:
    losses = []
    preds = []
    for start in range(0, len(x), batch_size):
        batch = x[start : start + batch_size]
        probs = net.forward(batch, train=False)
        loss, _ = weighted_cross_entropy(probs, y[start : start + batch_size], weights)
        losses.append(loss * len(batch))
        preds.append(probs.argmax(axis=1))
    pred = np.concatenate(preds)
    report = evaluate(list(zip(y.tolist(), pred.tolist())))
    metrics = {
        "accuracy": report.accuracy,
        "sensitivity": report.sensitivity,
        "specificity": report.specificity,
        "macc": report.macc,
    }
    return float(np.sum(losses) / len(x)), metrics


def train(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    x_val: np.ndarray | None = None,
    y_val: np.ndarray | None = None,
) -> list[dict]:
    """Train in place; returns per-epoch history rows.

    When no validation set is supplied, ``cfg.val_fraction`` of the training
    data (stratified, seeded) is held out for early stopping. The parameters
    that scored the best validation balanced accuracy are restored at the
    end.
    """
    x = np.asarray(x)
    y = np.asarray(y, dtype=np.int64)
    if len(x) != len(y) or len(x) == 0:
        raise ValidationError("training set is empty or x/y lengths differ")
    if np.unique(y).size < 2:
        raise ValidationError("training set must contain both classes")

    if not net.initialized:
        net.initialize(
            x.shape[1:], np.random.default_rng(np.random.SeedSequence((cfg.seed, INIT_STREAM)))
        )

    if x_val is None and cfg.val_fraction > 0.0:
        split_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, VAL_SPLIT_STREAM)))
        train_idx, val_idx = stratified_split(y, cfg.val_fraction, split_rng)
        if len(val_idx) >= 2 and np.unique(y[val_idx]).size == 2:
            x_val, y_val = x[val_idx], y[val_idx]
            x, y = x[train_idx], y[train_idx]

    weights = cfg.class_weights if cfg.class_weights is not None else inverse_frequency_weights(y)

    shuffle_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, SHUFFLE_STREAM)))
    dropout_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, DROPOUT_STREAM)))
    optimizer = Adam(net.params(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)

    history: list[dict] = []
    best_macc = -np.inf
    best_state = None
    epochs_since_best = 0

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(x))
        epoch_loss = 0.0
        for batch_no, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            if len(idx) < 2:
                continue  # batch-norm cannot normalize a single sample
            try:
                probs = net.forward(x[idx], train=True, rng=dropout_rng)
                loss, dlogits = weighted_cross_entropy(probs, y[idx], weights)
            except NumericError as exc:
                culprit = net.find_nonfinite_layer(x[idx])
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}"
                    + (f", first bad layer {culprit!r}" if culprit else "")
                ) from exc
            net.backward(dlogits)
            optimizer.step(net.params(), net.grads())
            epoch_loss += loss * len(idx)
        row = {"epoch": epoch, "train_loss": epoch_loss / len(x)}

        if x_val is not None:
            val_loss, val_metrics = _eval_split(net, x_val, y_val, weights, cfg.batch_size)
            row["val_loss"] = val_loss
            row.update({f"val_{k}": v for k, v in val_metrics.items()})
            macc = val_metrics["macc"]
            if macc is not None and macc > best_macc:
                best_macc = macc
                best_state = net.snapshot()
                epochs_since_best = 0
            else:
                epochs_since_best += 1
        history.append(row)

        if x_val is not None and epochs_since_best > cfg.patience:
            break

    if best_state is not None:
        net.load_state(best_state)
    return history
