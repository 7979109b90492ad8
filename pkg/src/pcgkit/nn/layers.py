"""Layer implementations.

Conventions: batches are leading-axis, channels-last (1-D data is
(batch, length, channels), 2-D data is (batch, height, width, channels)).
All convolutions are stride 1 with SAME zero-padding; pooling is 2/2 with
floor semantics on odd dimensions. Shapes passed to ``build`` and
``output_shape`` exclude the batch axis.
"""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    tag = "layer"

    def __init__(self, name: str):
        self.name = name

    def build(self, in_shape: tuple, rng: np.random.Generator, dtype) -> tuple:
        return self.output_shape(in_shape)

    def output_shape(self, in_shape: tuple) -> tuple:
        raise NotImplementedError

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state that still needs persisting (e.g. running stats)."""
        return {}

    def load_buffers(self, values: dict[str, np.ndarray]) -> None:
        pass

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


def _same_pad(kernel: int) -> tuple[int, int]:
    # stride-1 SAME: total pad = kernel - 1, extra sample goes on the right
    return (kernel - 1) // 2, kernel // 2


class Conv1D(Layer):
    tag = "conv1d"

    def __init__(self, kernel_size: int, n_filters: int, name: str):
        super().__init__(name)
        if kernel_size < 1 or n_filters < 1:
            raise ValidationError("kernel_size and n_filters must be >= 1")
        self.kernel_size = kernel_size
        self.n_filters = n_filters
        self.w = None
        self.b = None
        self.dw = None
        self.db = None
        self._cols = None
        self._in_len = None

    def output_shape(self, in_shape):
        if len(in_shape) != 2:
            raise ValidationError(f"{self.name}: expected (length, channels), got {in_shape}")
        return (in_shape[0], self.n_filters)

    def build(self, in_shape, rng, dtype):
        length, channels = in_shape
        k = self.kernel_size
        fan_in, fan_out = k * channels, k * self.n_filters
        self.w = glorot_uniform(rng, (k, channels, self.n_filters), fan_in, fan_out, dtype)
        self.b = np.zeros(self.n_filters, dtype=dtype)
        return (length, self.n_filters)

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.dw, "b": self.db}

    def forward(self, x, train=False, rng=None):
        n, length, channels = x.shape
        k = self.kernel_size
        pl, pr = _same_pad(k)
        xp = np.pad(x, ((0, 0), (pl, pr), (0, 0)))
        idx = np.arange(length)[:, None] + np.arange(k)[None, :]
        cols = xp[:, idx, :].reshape(n, length, k * channels)
        if train:
            self._cols = cols
            self._in_len = length
        return cols @ self.w.reshape(k * channels, self.n_filters) + self.b

    def backward(self, dy):
        n, length, _ = dy.shape
        k = self.kernel_size
        channels = self.w.shape[1]
        pl, _ = _same_pad(k)
        flat_cols = self._cols.reshape(n * length, k * channels)
        self.dw = (flat_cols.T @ dy.reshape(n * length, self.n_filters)).reshape(self.w.shape)
        self.db = dy.sum(axis=(0, 1))
        # dx is the full correlation of dy with the kernel flipped along its tap axis
        dyp = np.pad(dy, ((0, 0), (k - 1, k - 1), (0, 0)))
        out_len = length + k - 1  # length of the padded input
        idx = np.arange(out_len)[:, None] + np.arange(k)[None, :]
        dy_cols = dyp[:, idx, :].reshape(n, out_len, k * self.n_filters)
        w_flip = self.w[::-1].transpose(0, 2, 1).reshape(k * self.n_filters, channels)
        dxp = dy_cols @ w_flip
        self._cols = None
        return dxp[:, pl : pl + length, :]


class Conv2D(Layer):
    tag = "conv2d"

    def __init__(self, kernel_size: int, n_filters: int, name: str):
        super().__init__(name)
        if kernel_size < 1 or n_filters < 1:
            raise ValidationError("kernel_size and n_filters must be >= 1")
        self.kernel_size = kernel_size
        self.n_filters = n_filters
        self.w = None
        self.b = None
        self.dw = None
        self.db = None
        self._cols = None

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ValidationError(f"{self.name}: expected (height, width, channels), got {in_shape}")
        return (in_shape[0], in_shape[1], self.n_filters)

    def build(self, in_shape, rng, dtype):
        height, width, channels = in_shape
        k = self.kernel_size
        fan_in, fan_out = k * k * channels, k * k * self.n_filters
        self.w = glorot_uniform(rng, (k, k, channels, self.n_filters), fan_in, fan_out, dtype)
        self.b = np.zeros(self.n_filters, dtype=dtype)
        return (height, width, self.n_filters)

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.dw, "b": self.db}

    def _im2col(self, x, height, width):
        k = self.kernel_size
        rows = np.arange(height)[:, None] + np.arange(k)[None, :]
        cols = np.arange(width)[:, None] + np.arange(k)[None, :]
        # (n, H, W, k, k, C)
        windows = x[:, rows[:, None, :, None], cols[None, :, None, :], :]
        return windows.reshape(x.shape[0], height, width, -1)

    def forward(self, x, train=False, rng=None):
        n, height, width, channels = x.shape
        k = self.kernel_size
        pl, pr = _same_pad(k)
        xp = np.pad(x, ((0, 0), (pl, pr), (pl, pr), (0, 0)))
        cols = self._im2col(xp, height, width)
        if train:
            self._cols = cols
        return cols @ self.w.reshape(-1, self.n_filters) + self.b

    def backward(self, dy):
        n, height, width, _ = dy.shape
        k = self.kernel_size
        channels = self.w.shape[2]
        pl, _ = _same_pad(k)
        flat = self._cols.reshape(-1, k * k * channels)
        self.dw = (flat.T @ dy.reshape(-1, self.n_filters)).reshape(self.w.shape)
        self.db = dy.sum(axis=(0, 1, 2))
        dyp = np.pad(dy, ((0, 0), (k - 1, k - 1), (k - 1, k - 1), (0, 0)))
        out_h, out_w = height + k - 1, width + k - 1
        rows = np.arange(out_h)[:, None] + np.arange(k)[None, :]
        cols_idx = np.arange(out_w)[:, None] + np.arange(k)[None, :]
        dy_windows = dyp[:, rows[:, None, :, None], cols_idx[None, :, None, :], :]
        dy_cols = dy_windows.reshape(n, out_h, out_w, k * k * self.n_filters)
        w_flip = self.w[::-1, ::-1].transpose(0, 1, 3, 2).reshape(k * k * self.n_filters, channels)
        dxp = dy_cols @ w_flip
        self._cols = None
        return dxp[:, pl : pl + height, pl : pl + width, :]


class BatchNorm(Layer):
    tag = "batchnorm"

    EPS = 1e-5
    MOMENTUM = 0.9  # running = momentum * running + (1 - momentum) * batch

    def __init__(self, name: str):
        super().__init__(name)
        self.gamma = None
        self.beta = None
        self.dgamma = None
        self.dbeta = None
        self.running_mean = None
        self.running_var = None
        self.n_updates = 0
        self._xhat = None
        self._invstd = None
        self._n_reduce = None

    def output_shape(self, in_shape):
        return in_shape

    def build(self, in_shape, rng, dtype):
        channels = in_shape[-1]
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.n_updates = 0
        return in_shape

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.dgamma, "beta": self.dbeta}

    def buffers(self):
        return {
            "running_mean": self.running_mean,
            "running_var": self.running_var,
            "updates": np.array([self.n_updates], dtype=np.float32),
        }

    def load_buffers(self, values):
        self.running_mean = values["running_mean"].astype(self.gamma.dtype)
        self.running_var = values["running_var"].astype(self.gamma.dtype)
        self.n_updates = int(values["updates"][0])

    def forward(self, x, train=False, rng=None):
        axes = tuple(range(x.ndim - 1))
        if train:
            if x.shape[0] < 2:
                raise ValidationError(f"{self.name}: training batches need at least 2 samples")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.MOMENTUM
            self.running_mean = (m * self.running_mean + (1 - m) * mean).astype(x.dtype)
            self.running_var = (m * self.running_var + (1 - m) * var).astype(x.dtype)
            self.n_updates += 1
            invstd = 1.0 / np.sqrt(var + self.EPS)
            xhat = (x - mean) * invstd
            self._xhat = xhat
            self._invstd = invstd
            self._n_reduce = x.size // x.shape[-1]
            return self.gamma * xhat + self.beta
        if self.n_updates == 0:
            raise ValidationError(
                f"{self.name}: inference before any training update; running statistics are unset"
            )
        invstd = 1.0 / np.sqrt(self.running_var + self.EPS)
        return self.gamma * (x - self.running_mean) * invstd + self.beta

    def backward(self, dy):
        axes = tuple(range(dy.ndim - 1))
        xhat, invstd, n = self._xhat, self._invstd, self._n_reduce
        self.dgamma = (dy * xhat).sum(axis=axes)
        self.dbeta = dy.sum(axis=axes)
        dx = (self.gamma * invstd / n) * (
            n * dy - self.dbeta - xhat * self.dgamma
        )
        self._xhat = None
        return dx.astype(dy.dtype, copy=False)


class ReLU(Layer):
    tag = "relu"

    def __init__(self, name: str):
        super().__init__(name)
        self._mask = None

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=False, rng=None):
        if train:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dy):
        return dy * self._mask


class MaxPool1D(Layer):
    tag = "maxpool1d"

    def __init__(self, name: str, pool: int = 2, stride: int = 2):
        super().__init__(name)
        if pool != stride:
            raise ValidationError("only pool == stride supported")
        self.pool = pool
        self._argmax = None
        self._in_shape = None

    def output_shape(self, in_shape):
        return (in_shape[0] // self.pool, in_shape[1])

    def forward(self, x, train=False, rng=None):
        n, length, channels = x.shape
        out_len = length // self.pool
        windows = x[:, : out_len * self.pool, :].reshape(n, out_len, self.pool, channels)
        if train:
            self._argmax = windows.argmax(axis=2)
            self._in_shape = x.shape
        return windows.max(axis=2)

    def backward(self, dy):
        n, out_len, channels = dy.shape
        dwin = np.zeros((n, out_len, self.pool, channels), dtype=dy.dtype)
        np.put_along_axis(dwin, self._argmax[:, :, None, :], dy[:, :, None, :], axis=2)
        dx = np.zeros(self._in_shape, dtype=dy.dtype)
        dx[:, : out_len * self.pool, :] = dwin.reshape(n, out_len * self.pool, channels)
        return dx


class MaxPool2D(Layer):
    tag = "maxpool2d"

    def __init__(self, name: str, pool: int = 2, stride: int = 2):
        super().__init__(name)
        if pool != stride:
            raise ValidationError("only pool == stride supported")
        self.pool = pool
        self._argmax = None
        self._in_shape = None

    def output_shape(self, in_shape):
        return (in_shape[0] // self.pool, in_shape[1] // self.pool, in_shape[2])

    def forward(self, x, train=False, rng=None):
        n, height, width, channels = x.shape
        p = self.pool
        oh, ow = height // p, width // p
        windows = (
            x[:, : oh * p, : ow * p, :]
            .reshape(n, oh, p, ow, p, channels)
            .transpose(0, 1, 3, 2, 4, 5)
            .reshape(n, oh, ow, p * p, channels)
        )
        if train:
            self._argmax = windows.argmax(axis=3)
            self._in_shape = x.shape
        return windows.max(axis=3)

    def backward(self, dy):
        n, oh, ow, channels = dy.shape
        p = self.pool
        dwin = np.zeros((n, oh, ow, p * p, channels), dtype=dy.dtype)
        np.put_along_axis(dwin, self._argmax[:, :, :, None, :], dy[:, :, :, None, :], axis=3)
        dwin = dwin.reshape(n, oh, ow, p, p, channels).transpose(0, 1, 3, 2, 4, 5)
        dx = np.zeros(self._in_shape, dtype=dy.dtype)
        dx[:, : oh * p, : ow * p, :] = dwin.reshape(n, oh * p, ow * p, channels)
        return dx


class Flatten(Layer):
    tag = "flatten"

    def __init__(self, name: str):
        super().__init__(name)
        self._in_shape = None

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False, rng=None):
        if train:
            self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._in_shape)


class Dense(Layer):
    tag = "dense"

    def __init__(self, units: int, name: str):
        super().__init__(name)
        if units < 1:
            raise ValidationError("units must be >= 1")
        self.units = units
        self.w = None
        self.b = None
        self.dw = None
        self.db = None
        self._x = None

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ValidationError(f"{self.name}: dense input must be flat, got {in_shape}")
        return (self.units,)

    def build(self, in_shape, rng, dtype):
        (dim,) = in_shape
        self.w = glorot_uniform(rng, (dim, self.units), dim, self.units, dtype)
        self.b = np.zeros(self.units, dtype=dtype)
        return (self.units,)

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.dw, "b": self.db}

    def forward(self, x, train=False, rng=None):
        if train:
            self._x = x
        return x @ self.w + self.b

    def backward(self, dy):
        self.dw = self._x.T @ dy
        self.db = dy.sum(axis=0)
        self._x = None
        return dy @ self.w.T


class Dropout(Layer):
    """Inverted dropout: surviving units are scaled by 1/(1-ratio) during
    training so inference is a plain pass-through."""

    tag = "dropout"

    def __init__(self, ratio: float, name: str):
        super().__init__(name)
        if not 0.0 <= ratio < 1.0:
            raise ValidationError(f"dropout ratio must be in [0, 1), got {ratio}")
        self.ratio = ratio
        self.freeze_mask = False  # reuse the cached mask (finite-difference checks)
        self._mask = None

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=False, rng=None):
        if not train or self.ratio == 0.0:
            if train:
                self._mask = None
            return x
        if self.freeze_mask and self._mask is not None and self._mask.shape == x.shape:
            return x * self._mask
        if rng is None:
            raise ValidationError(f"{self.name}: training-mode dropout needs an RNG")
        keep = 1.0 - self.ratio
        self._mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dy):
        if self._mask is None:
            return dy
        return dy * self._mask


class Softmax(Layer):
    """Terminal class-probability layer.

    The loss gradient is taken with respect to the logits (the fused
    softmax/cross-entropy form), so ``backward`` forwards it unchanged.
    """

    tag = "softmax"

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=False, rng=None):
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)

    def backward(self, dy):
        return dy
