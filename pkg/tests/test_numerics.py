import numpy as np
import pytest

from nextframe.checks import fd_check, naive_conv2d
from nextframe.numerics import (
    AdamState,
    NonFiniteError,
    Tensor,
    adam_step,
    backward,
    bf_norm,
    concat,
    conv2d,
    downsample2x,
    mse_loss,
    mul,
    relu,
    tsum,
    upsample2x,
)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape).astype(np.float32)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-9) * margin, x).astype(np.float32)


class TestConv2d:
    def test_zero_input(self, rng):
        out = conv2d(Tensor(np.zeros((1, 1, 3, 3))), Tensor(rng.standard_normal((1, 1, 3, 3))))
        assert np.all(out.data == 0)

    def test_identity_kernel(self, rng):
        k = np.zeros((1, 1, 3, 3), dtype=np.float32)
        k[0, 0, 1, 1] = 1
        x = rng.standard_normal((2, 1, 6, 5)).astype(np.float32)
        np.testing.assert_array_equal(conv2d(Tensor(x), Tensor(k)).data, x)

    def test_matches_naive_loops(self, rng):
        x = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)
        k = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
        ref = naive_conv2d(x.astype(np.float64), k.astype(np.float64))
        np.testing.assert_allclose(conv2d(Tensor(x), Tensor(k)).data, ref, atol=1e-6 * max(1.0, np.abs(ref).max()))

    def test_shape_errors(self):
        with pytest.raises(ValueError, match="channels"):
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
        with pytest.raises(ValueError, match="3x3"):
            conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 5, 5))))

    @pytest.mark.parametrize("wrt", [0, 1])
    def test_gradients(self, rng, wrt):
        x = rng.standard_normal((2, 3, 6, 4))
        k = rng.standard_normal((2, 3, 3, 3))
        assert fd_check(conv2d, [x, k], wrt, rng=rng) < 1e-2


class TestResampling:
    def test_constant_preserved(self):
        x = Tensor(np.full((1, 2, 8, 8), 0.7))
        d = downsample2x(x)
        assert d.shape == (1, 2, 4, 4)
        np.testing.assert_allclose(d.data, 0.7, rtol=1e-6)
        np.testing.assert_allclose(upsample2x(d).data, 0.7, rtol=1e-6)

    def test_block_mean(self, rng):
        x = rng.random((1, 1, 4, 4)).astype(np.float32)
        out = downsample2x(Tensor(x)).data
        assert out.shape == (1, 1, 2, 2)
        assert out[0, 0, 0, 0] == pytest.approx(x[0, 0, :2, :2].mean(), rel=1e-6)

    def test_odd_size_rejected(self):
        with pytest.raises(ValueError):
            downsample2x(Tensor(np.zeros((1, 1, 5, 4))))

    def test_gradients(self, rng):
        x = rng.standard_normal((2, 2, 4, 6))
        assert fd_check(downsample2x, [x], 0, rng=rng) < 1e-2
        assert fd_check(upsample2x, [x], 0, rng=rng) < 1e-2


class TestReluAndNorm:
    def test_relu_values(self):
        np.testing.assert_array_equal(relu(Tensor([-1.5, 2.0])).data, [0.0, 2.0])

    def test_relu_gradient(self, rng):
        x = _away_from_zero(rng, (2, 3, 4, 4))
        assert fd_check(relu, [x], 0, rng=rng) < 1e-2

    def test_bf_norm_training_std(self, rng):
        s, g = 3.0, 0.4
        x = (s * rng.standard_normal((4, 1, 8, 8)) + 1.0).astype(np.float32)
        run = np.ones(1, dtype=np.float32)
        out = bf_norm(Tensor(x), Tensor([g]), run, training=True).data
        batch_std = x.astype(np.float64).std()
        np.testing.assert_allclose(out, x * (g / batch_std), rtol=1e-5)
        assert out.std() == pytest.approx(g, rel=1e-5)
        # no mean subtraction: output mean is input mean scaled
        assert out.mean() == pytest.approx(x.mean() * g / batch_std, rel=1e-4)
        assert run[0] == pytest.approx(0.9 + 0.1 * batch_std, rel=1e-5)

    def test_bf_norm_inference_homogeneous(self, rng):
        x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
        gain = Tensor(rng.random(3) + 0.5)
        run = (rng.random(3) + 0.5).astype(np.float32)
        base = bf_norm(Tensor(x), gain, run.copy(), training=False).data
        for lam in (0.5, 2.0, 10.0):
            scaled = bf_norm(Tensor(lam * x), gain, run.copy(), training=False).data
            np.testing.assert_allclose(scaled, lam * base, rtol=1e-5, atol=1e-6)

    def test_bf_norm_clamps_dead_channel(self, caplog):
        x = np.zeros((2, 1, 4, 4), dtype=np.float32)
        with caplog.at_level("WARNING"):
            out = bf_norm(Tensor(x), Tensor([1.0]), np.ones(1, dtype=np.float32), training=True)
        assert np.all(out.data == 0)
        assert "clamped" in caplog.text

    @pytest.mark.parametrize("training", [True, False])
    @pytest.mark.parametrize("wrt", [0, 1])
    def test_bf_norm_gradients(self, rng, training, wrt):
        x = rng.standard_normal((3, 2, 4, 4)) + 0.3
        gain = rng.random(2) + 0.5
        run = (rng.random(2) + 0.5).astype(np.float32)

        def fn(xt, gt):
            return bf_norm(xt, gt, run.copy(), training=training)

        assert fd_check(fn, [x, gain], wrt, rng=rng) < 1e-2

    def test_concat_gradient(self, rng):
        a = rng.standard_normal((1, 2, 4, 4))
        b = rng.standard_normal((1, 3, 4, 4))
        assert fd_check(lambda p, q: concat([p, q]), [a, b], 0, rng=rng) < 1e-2
        assert fd_check(lambda p, q: concat([p, q]), [a, b], 1, rng=rng) < 1e-2


class TestBackward:
    def test_linear_gradient_is_input(self, rng):
        x = rng.standard_normal(7).astype(np.float32)
        w = Tensor(rng.standard_normal(7), requires_grad=True)
        backward(tsum(mul(w, Tensor(x))))
        np.testing.assert_array_equal(w.grad, x)

    def test_mse_gradient(self, rng):
        pred = Tensor(rng.standard_normal((1, 1, 4, 4)), requires_grad=True)
        target = rng.standard_normal((1, 1, 4, 4)).astype(np.float32)
        backward(mse_loss(pred, Tensor(target)))
        np.testing.assert_allclose(pred.grad, 2 * (pred.data - target) / 16, rtol=1e-6)

    def test_non_scalar_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            backward(Tensor(np.ones(3), requires_grad=True))

    def test_shared_node_accumulates(self):
        w = Tensor([2.0], requires_grad=True)
        backward(tsum(mul(w, w)))
        assert w.grad[0] == pytest.approx(4.0)

    def test_non_finite_is_error(self):
        with pytest.raises(NonFiniteError):
            Tensor([np.nan])
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            mul(Tensor([1e30]), Tensor([1e30]))


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = [np.array([1.0, -2.0], dtype=np.float32)]
        st = AdamState(lr=0.1)
        for _ in range(5):
            p = adam_step(p, [np.zeros(2, dtype=np.float32)], st)
        np.testing.assert_array_equal(p[0], [1.0, -2.0])
        assert st.step == 5

    def test_first_step_magnitude_is_lr(self):
        st = AdamState(lr=0.01)
        g = np.array([3.0, -0.2], dtype=np.float32)
        p = adam_step([np.zeros(2, dtype=np.float32)], [g], st)[0]
        # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        np.testing.assert_allclose(p, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-6)

    def test_quadratic_descent(self):
        st = AdamState(lr=0.1)
        w = [np.array([1.0], dtype=np.float32)]
        trace = [1.0]
        for _ in range(100):
            w = adam_step(w, [2 * w[0]], st)
            trace.append(abs(float(w[0][0])))
        # Adam with momentum overshoots zero once it arrives; monotone on the way in
        first_small = next(i for i, v in enumerate(trace) if v < 0.1)
        assert all(b < a for a, b in zip(trace[:first_small], trace[1:first_small + 1]))
        assert max(trace[-20:]) < 0.1

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step([np.zeros(2, dtype=np.float32)], [np.zeros(3, dtype=np.float32)], AdamState())
