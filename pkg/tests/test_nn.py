"""Engine tests: layer contracts, finite-difference gradient checks, Adam,
and training-loop behaviour."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcgkit.errors import ValidationError
from pcgkit.nn import (
    Adam,
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
    TrainConfig,
    train,
    weighted_cross_entropy,
)


def finite_difference_check(net, x, y, weights, probes_per_param=6,
                            tol=1e-4, step=1e-5, seed=0):
    """Compare every layer's analytic gradients against central differences.

    Dropout masks are frozen after the reference pass so repeated forwards
    see the identical subnetwork. Returns the number of probed parameters.
    """
    rng = np.random.default_rng(seed)
    probs = net.forward(x, train=True, rng=rng)
    loss, dlogits = weighted_cross_entropy(probs, y, weights)
    net.backward(dlogits)
    analytic = {k: v.copy() for k, v in net.grads().items()}
    net.freeze_dropout(True)

    def loss_at_current_params():
        p = net.forward(x, train=True, rng=rng)
        return weighted_cross_entropy(p, y, weights)[0]

    checked = 0
    probe_rng = np.random.default_rng(seed + 1)
    for name, param in net.params().items():
        flat = param.reshape(-1)
        n = min(probes_per_param, flat.size)
        for idx in probe_rng.choice(flat.size, size=n, replace=False):
            original = flat[idx]
            flat[idx] = original + step
            loss_plus = loss_at_current_params()
            flat[idx] = original - step
            loss_minus = loss_at_current_params()
            flat[idx] = original
            numeric = (loss_plus - loss_minus) / (2 * step)
            exact = analytic[name].reshape(-1)[idx]
            if abs(exact) < 1e-9 and abs(numeric) < 1e-8:
                # dead parameter (e.g. conv bias under batch-norm): both sides
                # are zero up to the central-difference cancellation floor
                checked += 1
                continue
            scale = max(abs(numeric), abs(exact))
            assert abs(numeric - exact) / scale < tol, (
                f"{name}[{idx}]: analytic {exact} vs numeric {numeric}"
            )
            checked += 1
    net.freeze_dropout(False)
    return checked


class TestConvForward:
    def test_conv1d_table2_layer1_shape(self):
        net = Network([Conv1D(6, 8, "c"), Softmax("s")])
        net.initialize((1000, 1), np.random.default_rng(0), np.float64)
        out = net.layers[0].forward(np.zeros((2, 1000, 1)))
        assert out.shape == (2, 1000, 8)

    def test_conv2d_table3_layer1_shape(self):
        layer = Conv2D(4, 16, "c")
        layer.build((96, 12, 1), np.random.default_rng(0), np.float64)
        out = layer.forward(np.zeros((3, 96, 12, 1)))
        assert out.shape == (3, 96, 12, 16)

    def test_identity_kernel(self):
        layer = Conv1D(1, 1, "c")
        layer.build((50, 1), np.random.default_rng(0), np.float64)
        layer.w[...] = 1.0
        layer.b[...] = 0.0
        x = np.random.default_rng(1).standard_normal((2, 50, 1))
        assert np.allclose(layer.forward(x), x)

    def test_shape_mismatch_names_layer(self):
        net = Network([Conv1D(6, 8, "conv1"), Softmax("out")])
        net.initialize((100, 1), np.random.default_rng(0))
        with pytest.raises(ValidationError):
            net.forward(np.zeros((1, 64, 1)))


class TestMaxPool:
    def test_2d_24x3_to_12x1(self):
        layer = MaxPool2D("p")
        x = np.random.default_rng(0).standard_normal((2, 24, 3, 16))
        assert layer.forward(x).shape == (2, 12, 1, 16)

    def test_constant_input(self):
        layer = MaxPool1D("p")
        out = layer.forward(np.full((1, 10, 2), 4.5))
        assert np.all(out == 4.5)

    def test_hand_example(self):
        layer = MaxPool1D("p")
        x = np.array([1.0, 5.0, 2.0, 4.0]).reshape(1, 4, 1)
        assert np.allclose(layer.forward(x).reshape(-1), [5.0, 4.0])


class TestBatchNorm:
    def make(self, channels=3):
        layer = BatchNorm("bn")
        layer.build((10, channels), np.random.default_rng(0), np.float64)
        return layer

    def test_train_normalizes(self):
        layer = self.make()
        x = np.random.default_rng(1).standard_normal((8, 10, 3)) * 4.0 + 2.0
        out = layer.forward(x, train=True)
        mean = out.mean(axis=(0, 1))
        var = out.var(axis=(0, 1))
        assert np.max(np.abs(mean)) < 1e-6
        assert np.all(np.abs(var - 1.0) < 1e-3)

    def test_affine_contract(self):
        layer = self.make()
        x = np.random.default_rng(2).standard_normal((6, 10, 3))
        base = layer.forward(x, train=True).copy()
        layer.gamma[...] = 2.0
        layer.beta[...] = 3.0
        out = layer.forward(x, train=True)
        assert np.allclose(out, 2.0 * base + 3.0, atol=1e-12)

    def test_infer_before_train_rejected(self):
        layer = self.make()
        with pytest.raises(ValidationError):
            layer.forward(np.zeros((2, 10, 3)), train=False)

    def test_running_stats_converge_to_batch_stats(self):
        layer = self.make()
        x = np.random.default_rng(3).standard_normal((16, 10, 3)) * 2.0 - 1.0
        for _ in range(200):
            train_out = layer.forward(x, train=True)
        infer_out = layer.forward(x, train=False)
        assert np.max(np.abs(infer_out - train_out)) < 1e-3

    def test_single_sample_batch_rejected(self):
        layer = self.make()
        with pytest.raises(ValidationError):
            layer.forward(np.zeros((1, 10, 3)), train=True)


class TestSoftmaxAndLoss:
    def test_symmetric_logits(self):
        out = Softmax("s").forward(np.zeros((1, 2)))
        assert np.allclose(out, [[0.5, 0.5]])

    def test_hand_computed_logits(self):
        out = Softmax("s").forward(np.array([[np.log(3.0), 0.0]]))
        assert np.allclose(out, [[0.75, 0.25]], atol=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_rows_always_normalized(self, seed):
        rng = np.random.default_rng(seed)
        moderate = Softmax("s").forward(rng.uniform(-15, 15, size=(5, 2)))
        assert np.allclose(moderate.sum(axis=1), 1.0, atol=1e-6)
        assert np.all((moderate > 0) & (moderate < 1))
        # extreme logits may saturate in float but stay normalized and finite
        wild = Softmax("s").forward(rng.uniform(-1e4, 1e4, size=(5, 2)))
        assert np.all(np.isfinite(wild))
        assert np.allclose(wild.sum(axis=1), 1.0, atol=1e-6)
        assert np.all((wild >= 0) & (wild <= 1))

    def test_perfect_prediction_zero_loss(self):
        probs = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss, _ = weighted_cross_entropy(probs, np.array([0, 1]), (1.0, 1.0))
        assert loss < 1e-10

    def test_weighted_hand_example(self):
        probs = np.array([[0.5, 0.5]])
        loss, _ = weighted_cross_entropy(probs, np.array([1]), (1.0, 4.0))
        assert abs(loss - 4.0 * np.log(2.0)) < 1e-12

    def test_equal_weights_reduce_to_plain_ce(self):
        rng = np.random.default_rng(4)
        logits = rng.standard_normal((6, 2))
        probs = Softmax("s").forward(logits)
        y = rng.integers(0, 2, size=6)
        loss, _ = weighted_cross_entropy(probs, y, (1.0, 1.0))
        plain = -np.mean(np.log(probs[np.arange(6), y]))
        assert abs(loss - plain) < 1e-12

    def test_loss_weight_scales_gradient(self):
        rng = np.random.default_rng(5)
        probs = Softmax("s").forward(rng.standard_normal((4, 2)))
        y = np.array([1, 1, 1, 1])
        _, g1 = weighted_cross_entropy(probs, y, (1.0, 1.0))
        _, g2 = weighted_cross_entropy(probs, y, (2.0, 2.0))
        assert np.allclose(g2, 2.0 * g1)


class TestDropout:
    def test_zero_ratio_identity(self):
        layer = Dropout(0.0, "d")
        x = np.random.default_rng(0).standard_normal((3, 7))
        assert np.array_equal(layer.forward(x, train=True, rng=np.random.default_rng(1)), x)

    def test_infer_identity(self):
        layer = Dropout(0.7, "d")
        x = np.random.default_rng(1).standard_normal((3, 7))
        assert np.array_equal(layer.forward(x, train=False), x)

    def test_inverted_scaling_unbiased(self):
        layer = Dropout(0.4, "d")
        rng = np.random.default_rng(2)
        x = np.ones((1, 1000))
        means = [layer.forward(x, train=True, rng=rng).mean() for _ in range(200)]
        grand = np.mean(means)
        sem = np.std(means) / np.sqrt(len(means))
        assert abs(grand - 1.0) < 3.0 * sem + 1e-3

    def test_needs_rng_in_train(self):
        with pytest.raises(ValidationError):
            Dropout(0.5, "d").forward(np.ones((2, 2)), train=True)


class TestAdam:
    def test_first_step_magnitude_is_lr(self):
        params = {"p": np.array([1.0, -2.0, 3.0])}
        grads = {"p": np.array([0.5, -0.3, 2.0])}
        opt = Adam(params, learning_rate=0.01)
        before = params["p"].copy()
        opt.step(params, grads)
        delta = params["p"] - before
        # first bias-corrected step is lr * g / (|g| + eps') ~= lr * sign(g)
        assert np.allclose(np.abs(delta), 0.01, rtol=1e-6)
        assert np.all(np.sign(delta) == -np.sign(grads["p"]))

    def test_zero_gradient_fixed_point(self):
        params = {"p": np.array([1.0, 2.0])}
        opt = Adam(params, learning_rate=0.1)
        for _ in range(10):
            opt.step(params, {"p": np.zeros(2)})
        assert np.array_equal(params["p"], [1.0, 2.0])

    def test_beta_zero_reduces_to_sign_normalized_sgd(self):
        rng = np.random.default_rng(6)
        g = rng.standard_normal(8)
        params = {"p": rng.standard_normal(8)}
        before = params["p"].copy()
        eps = 1e-8
        opt = Adam(params, learning_rate=0.05, beta1=0.0, beta2=0.0, eps=eps)
        opt.step(params, {"p": g})
        expected = before - 0.05 * g / (np.abs(g) + eps)
        assert np.allclose(params["p"], expected, atol=1e-12)

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(7)
            params = {"p": rng.standard_normal(16)}
            opt = Adam(params, learning_rate=0.01)
            for _ in range(25):
                opt.step(params, {"p": rng.standard_normal(16)})
            return params["p"]

        assert np.array_equal(run(), run())


def tiny_conv1d_net():
    return Network([
        Conv1D(6, 3, "conv1"),
        BatchNorm("bn1"),
        ReLU("relu1"),
        MaxPool1D("pool1"),
        Conv1D(3, 2, "conv2"),
        ReLU("relu2"),
        Dropout(0.3, "drop2"),
        MaxPool1D("pool2"),
        Flatten("flatten"),
        Dense(5, "dense1"),
        ReLU("relu3"),
        Dense(2, "logits"),
        Softmax("out"),
    ])


def tiny_conv2d_net():
    return Network([
        Conv2D(4, 2, "conv1"),
        BatchNorm("bn1"),
        ReLU("relu1"),
        MaxPool2D("pool1"),
        Conv2D(3, 2, "conv2"),
        ReLU("relu2"),
        Dropout(0.25, "drop2"),
        MaxPool2D("pool2"),
        Flatten("flatten"),
        Dense(4, "dense1"),
        ReLU("relu3"),
        Dense(2, "logits"),
        Softmax("out"),
    ])


class TestGradients:
    def test_conv1d_stack_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        net = tiny_conv1d_net()
        net.initialize((24, 2), rng, np.float64)
        x = rng.standard_normal((4, 24, 2))
        y = np.array([0, 1, 1, 0])
        checked = finite_difference_check(net, x, y, (1.0, 2.0), seed=11)
        assert checked >= 40

    def test_conv2d_stack_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        net = tiny_conv2d_net()
        net.initialize((12, 8, 1), rng, np.float64)
        x = rng.standard_normal((4, 12, 8, 1))
        y = np.array([1, 0, 1, 0])
        checked = finite_difference_check(net, x, y, (1.5, 1.0), seed=13)
        assert checked >= 40

    def test_dense_only_stack(self):
        rng = np.random.default_rng(14)
        net = Network([
            Flatten("flatten"), Dense(7, "dense1"), ReLU("relu1"),
            Dropout(0.4, "drop1"), Dense(2, "logits"), Softmax("out"),
        ])
        net.initialize((5, 1), rng, np.float64)
        x = rng.standard_normal((6, 5, 1))
        y = np.array([0, 1, 0, 1, 0, 1])
        finite_difference_check(net, x, y, (1.0, 1.0), probes_per_param=10, seed=15)

    def test_zero_loss_gives_zero_gradients(self):
        net = Network([Flatten("f"), Dense(2, "logits"), Softmax("out")])
        rng = np.random.default_rng(16)
        net.initialize((3, 1), rng, np.float64)
        x = rng.standard_normal((2, 3, 1))
        probs = net.forward(x, train=True)
        # labels equal to a saturated prediction: force probs to one-hot
        y = probs.argmax(axis=1)
        onehot = np.zeros_like(probs)
        onehot[np.arange(2), y] = 1.0
        loss, dlogits = weighted_cross_entropy(onehot, y, (1.0, 1.0))
        assert loss == 0.0
        net.backward(dlogits)
        for grad in net.grads().values():
            assert np.all(grad == 0.0)

    def test_doubling_loss_weights_doubles_gradients(self):
        net = tiny_conv1d_net()
        rng = np.random.default_rng(17)
        net.initialize((24, 2), rng, np.float64)
        x = rng.standard_normal((4, 24, 2))
        y = np.array([0, 1, 0, 1])
        drop_rng = np.random.default_rng(18)
        probs = net.forward(x, train=True, rng=drop_rng)
        net.freeze_dropout(True)
        _, d1 = weighted_cross_entropy(probs, y, (1.0, 1.0))
        net.backward(d1)
        g1 = {k: v.copy() for k, v in net.grads().items()}
        probs = net.forward(x, train=True, rng=drop_rng)
        _, d2 = weighted_cross_entropy(probs, y, (2.0, 2.0))
        net.backward(d2)
        for key, grad in net.grads().items():
            assert np.allclose(grad, 2.0 * g1[key], atol=1e-12)

    def test_backward_before_forward_rejected(self):
        net = Network([Flatten("f"), Dense(2, "l"), Softmax("o")])
        net.initialize((3, 1), np.random.default_rng(0), np.float64)
        with pytest.raises(ValidationError):
            net.backward(np.zeros((2, 2)))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_forward_never_emits_nonfinite(self, seed):
        rng = np.random.default_rng(seed)
        net = tiny_conv1d_net()
        net.initialize((24, 2), np.random.default_rng(seed ^ 0xFFFF), np.float32)
        x = (rng.standard_normal((3, 24, 2)) * rng.uniform(0.1, 100)).astype(np.float32)
        out = net.forward(x, train=True, rng=rng)
        assert np.all(np.isfinite(out))
        out = net.forward(x, train=False)
        assert np.all(np.isfinite(out))


def separable_dataset(n=80, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.standard_normal((n, 6, 1)) * 0.3
    x[y == 1, :3, 0] += 2.0
    x[y == 0, 3:, 0] += 2.0
    return x.astype(np.float32), y


class TestTrainLoop:
    def make_net(self):
        return Network([
            Flatten("flatten"), Dense(8, "dense1"), ReLU("relu1"),
            Dense(2, "logits"), Softmax("out"),
        ])

    def test_loss_decreases_on_separable_data(self):
        x, y = separable_dataset()
        net = self.make_net()
        cfg = TrainConfig(learning_rate=0.02, batch_size=16, epochs=6, seed=1, val_fraction=0.0)
        history = train(net, x, y, cfg)
        losses = [row["train_loss"] for row in history]
        assert all(b < a for a, b in zip(losses[:5], losses[1:6]))

    def test_zero_learning_rate_keeps_parameters(self):
        x, y = separable_dataset(seed=2)
        net = self.make_net()
        net.initialize((6, 1), np.random.default_rng(3))
        before = {k: v.copy() for k, v in net.params().items()}
        cfg = TrainConfig(learning_rate=0.0, batch_size=16, epochs=3, seed=4, val_fraction=0.0)
        history = train(net, x, y, cfg)
        for key, value in net.params().items():
            assert np.array_equal(value, before[key])
        losses = [row["train_loss"] for row in history]
        # shuffling reorders the float32 loss accumulation; predictions are identical
        assert max(losses) - min(losses) < 1e-6

    def test_same_seed_identical_history(self):
        x, y = separable_dataset(seed=5)
        cfg = TrainConfig(learning_rate=0.01, batch_size=16, epochs=4, seed=6)
        h1 = train(self.make_net(), x, y, cfg)
        h2 = train(self.make_net(), x, y, cfg)
        assert h1 == h2

    def test_single_class_rejected(self):
        x = np.zeros((10, 4, 1), dtype=np.float32)
        with pytest.raises(ValidationError):
            train(self.make_net(), x, np.zeros(10, dtype=int), TrainConfig(epochs=1))

    def test_early_stopping_restores_best(self):
        x, y = separable_dataset(seed=7)
        net = self.make_net()
        cfg = TrainConfig(
            learning_rate=0.05, batch_size=16, epochs=40, seed=8,
            val_fraction=0.25, patience=3,
        )
        history = train(net, x, y, cfg)
        assert len(history) <= 40
        assert "val_macc" in history[0]
