"""Network container: ordered layers, forward/backward, and the weighted
cross-entropy loss used for training."""

from __future__ import annotations

import numpy as np

from ..errors import NumericError, ValidationError
from .layers import Dropout, Layer

LOSS_PROB_FLOOR = 1e-12


class Network:
    """An ordered layer stack ending in a softmax.

    Call :meth:`initialize` once with the (batch-free) input shape before any
    forward pass; parameters are Glorot-uniform, biases zero.
    """

    def __init__(self, layers: list[Layer]):
        names = [layer.name for layer in layers]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate layer names: {names}")
        if not layers or layers[-1].tag != "softmax":
            raise ValidationError("networks must end with a softmax layer")
        self.layers = layers
        self.input_shape: tuple | None = None
        self.dtype = None
        self._backward_ready = False

    @property
    def initialized(self) -> bool:
        return self.input_shape is not None

    def initialize(self, input_shape: tuple, rng: np.random.Generator | None = None,
                   dtype=np.float32) -> "Network":
        if rng is None:
            rng = np.random.default_rng(0)
        shape = tuple(input_shape)
        self.input_shape = shape
        self.dtype = np.dtype(dtype)
        for layer in self.layers:
            shape = layer.build(shape, rng, self.dtype)
        return self

    def shape_walk(self, input_shape: tuple | None = None) -> list[tuple[str, tuple]]:
        """Static per-layer output shapes, no parameters required."""
        shape = tuple(input_shape) if input_shape is not None else self.input_shape
        if shape is None:
            raise ValidationError("provide an input shape or initialize the network first")
        walk = []
        for layer in self.layers:
            shape = layer.output_shape(shape)
            walk.append((layer.name, shape))
        return walk

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        if not self.initialized:
            raise ValidationError("network is not initialized")
        if x.ndim != len(self.input_shape) + 1 or x.shape[1:] != self.input_shape:
            raise ValidationError(
                f"input batch shape {x.shape[1:]} does not match network input "
                f"{self.input_shape}"
            )
        return np.ascontiguousarray(x, dtype=self.dtype)

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Run the stack; returns (batch, 2) class probabilities."""
        out = self._check_input(x)
        for layer in self.layers:
            out = layer.forward(out, train=train, rng=rng)
        self._backward_ready = train
        return out

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        """Reverse-mode pass from the loss gradient w.r.t. the logits."""
        if not self._backward_ready:
            raise ValidationError("backward called without a preceding training-mode forward")
        grad = np.asarray(dlogits, dtype=self.dtype)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        self._backward_ready = False
        return grad

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            for key, value in layer.params().items():
                out[f"{layer.name}/{key}"] = value
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            for key, value in layer.grads().items():
                out[f"{layer.name}/{key}"] = value
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            for key, value in layer.buffers().items():
                out[f"{layer.name}/{key}"] = value
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {**self.params(), **self.buffers()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        """Overwrite parameters and buffers in place; shapes must match."""
        params = self.params()
        by_layer_buffers: dict[str, dict[str, np.ndarray]] = {}
        for name, value in state.items():
            if name in params:
                target = params[name]
                if target.shape != value.shape:
                    raise ValidationError(
                        f"{name}: shape mismatch {value.shape} vs {target.shape}"
                    )
                target[...] = value.astype(target.dtype)
            else:
                layer_name, _, key = name.rpartition("/")
                by_layer_buffers.setdefault(layer_name, {})[key] = value
        for layer in self.layers:
            if layer.name in by_layer_buffers:
                layer.load_buffers(by_layer_buffers[layer.name])
        leftovers = set(by_layer_buffers) - {l.name for l in self.layers}
        if leftovers:
            raise ValidationError(f"state contains unknown layers: {sorted(leftovers)}")

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.state().items()}

    def freeze_dropout(self, flag: bool) -> None:
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.freeze_mask = flag

    def find_nonfinite_layer(self, x: np.ndarray) -> str | None:
        """Walk the stack reporting the first layer emitting NaN/Inf (diagnostics)."""
        out = self._check_input(x)
        rng = np.random.default_rng(0)
        for layer in self.layers:
            out = layer.forward(out, train=True, rng=rng)
            if not np.all(np.isfinite(out)):
                return layer.name
        return None


def weighted_cross_entropy(
    probs: np.ndarray, labels: np.ndarray, class_weights
) -> tuple[float, np.ndarray]:
    """Class-weighted negative log-likelihood, averaged over the batch.

    Returns (loss, gradient w.r.t. the logits), the gradient being
    w(label) * (p - onehot) / batch_size per sample.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(class_weights, dtype=probs.dtype)
    if weights.shape != (probs.shape[1],):
        raise ValidationError(
            f"need one weight per class ({probs.shape[1]}), got shape {weights.shape}"
        )
    if np.any(weights <= 0):
        raise ValidationError("class weights must be positive")
    n = probs.shape[0]
    w = weights[labels]
    p_label = np.clip(probs[np.arange(n), labels], LOSS_PROB_FLOOR, None)
    loss = float(np.mean(w * -np.log(p_label)))
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), labels] = 1.0
    dlogits = (w[:, None] * (probs - onehot) / n).astype(probs.dtype)
    return loss, dlogits
