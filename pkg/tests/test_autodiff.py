import numpy as np
import pytest

from padflow.autodiff import Adam, Mlp, Tensor, mlp_forward, no_grad
from padflow.errors import DimensionError, NumericError, UsageError


def finite_diff_grads(loss_fn, param, h=1e-5):
    g = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = loss_fn()
        flat[i] = old - h
        dn = loss_fn()
        flat[i] = old
        gflat[i] = (up - dn) / (2 * h)
    return g


class TestTensor:
    def test_rejects_nonfinite(self):
        with pytest.raises(NumericError):
            Tensor([1.0, np.nan])

    def test_backward_requires_scalar(self):
        t = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(UsageError):
            (t * 2).backward()

    def test_sum_of_params_gives_ones(self):
        w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        w.sum().backward()
        np.testing.assert_array_equal(w.grad, np.ones(3))

    def test_quadratic_grad(self):
        w = Tensor([3.0, -4.0], requires_grad=True)
        (0.5 * w.square().sum()).backward()
        np.testing.assert_allclose(w.grad, [3.0, -4.0])

    def test_broadcast_add_unbroadcasts(self):
        a = Tensor(np.ones((4, 3)), requires_grad=True)
        b = Tensor(np.zeros(3), requires_grad=True)
        (a + b).sum().backward()
        np.testing.assert_array_equal(b.grad, np.full(3, 4.0))

    def test_matmul_shape_mismatch(self):
        with pytest.raises(DimensionError):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))

    def test_no_grad_blocks_recording(self):
        w = Tensor([1.0], requires_grad=True)
        with no_grad():
            out = (w * 3.0).sum()
        assert out._backward is None

    def test_softplus_matches_reference_and_asymptotes(self):
        x = Tensor(np.array([-50.0, -1.0, 0.0, 1.0, 50.0]))
        got = x.softplus().data
        np.testing.assert_allclose(got[1:4], np.log1p(np.exp([-1.0, 0.0, 1.0])))
        assert got[0] == 0.0
        assert got[4] == 50.0

    def test_grad_accumulates_over_reuse(self):
        w = Tensor([2.0], requires_grad=True)
        (w * w).sum().backward()
        np.testing.assert_allclose(w.grad, [4.0])


class TestMlp:
    def test_zero_net_maps_to_zero(self):
        net = Mlp([2, 4, 3])
        for w in net.weights:
            w.data[:] = 0.0
        out = mlp_forward(net, np.array([[1.0, -2.0]]))
        np.testing.assert_array_equal(out.data, np.zeros((1, 3)))

    def test_identity_single_layer(self):
        net = Mlp([2, 2])
        net.weights[0].data = np.eye(2)
        net.biases[0].data[:] = 0.0
        out = mlp_forward(net, np.array([[1.0, 2.0]]))
        np.testing.assert_allclose(out.data, [[1.0, 2.0]])

    def test_forward_matches_hand_coded(self):
        rng = np.random.default_rng(3)
        net = Mlp([2, 8, 1], "softplus", rng=rng)
        x = np.array([[0.3, -0.7]])
        got = mlp_forward(net, x).data

        # Independent re-evaluation with plain numpy.
        h = x @ net.weights[0].data + net.biases[0].data
        h = np.log1p(np.exp(h))
        want = h @ net.weights[1].data + net.biases[1].data
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_width_mismatch(self):
        net = Mlp([3, 2])
        with pytest.raises(DimensionError):
            mlp_forward(net, np.ones((1, 2)))

    def test_param_count(self):
        widths = [3, 5, 2]
        net = Mlp(widths)
        count = sum(p.data.size for p in net.parameters())
        assert count == 3 * 5 + 5 + 5 * 2 + 2

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(0)
        max_err = 0.0
        for trial in range(10):
            widths = [int(rng.integers(1, 4)), int(rng.integers(2, 6)), 1]
            act = ["softplus", "tanh", "relu"][trial % 3]
            net = Mlp(widths, act, rng=rng)
            x = rng.standard_normal((4, widths[0]))

            def loss_fn():
                return float(mlp_forward(net, x).square().sum().data)

            loss = mlp_forward(net, x).square().sum()
            loss.backward()
            for p in net.parameters():
                fd = finite_diff_grads(loss_fn, p)
                denom = np.maximum(np.abs(fd), 1e-3)
                max_err = max(max_err, np.max(np.abs(fd - p.grad) / denom))
        assert max_err < 1e-4

    def test_every_used_param_gets_grad(self):
        net = Mlp([2, 4, 1], rng=np.random.default_rng(1))
        loss = mlp_forward(net, np.ones((2, 2))).sum()
        loss.backward()
        for p in net.parameters():
            assert p.grad is not None
            assert p.grad.shape == p.data.shape


class TestAdam:
    def test_zero_grad_leaves_params(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        opt = Adam([p])
        p.grad = np.zeros(2)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_first_step_matches_formula(self):
        p = Tensor([0.0], requires_grad=True)
        opt = Adam([p], lr=1e-3)
        p.grad = np.ones(1)
        opt.step()
        # bias-corrected m_hat = v_hat = 1 -> delta = -lr / (1 + eps)
        np.testing.assert_allclose(p.data, [-1e-3 / (1 + 1e-8)], rtol=1e-12)

    def test_two_steps_match_hand_unrolled(self):
        lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
        p = Tensor([0.0], requires_grad=True)
        opt = Adam([p], lr=lr, beta1=b1, beta2=b2, eps=eps)
        m = v = 0.0
        x = 0.0
        for t in (1, 2):
            m = b1 * m + (1 - b1) * 1.0
            v = b2 * v + (1 - b2) * 1.0
            x -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
            p.grad = np.ones(1)
            opt.step()
            np.testing.assert_allclose(p.data, [x], rtol=1e-12)

    def test_deterministic_trajectory(self):
        def run():
            rng = np.random.default_rng(42)
            net = Mlp([2, 4, 1], rng=rng)
            opt = Adam(net.parameters(), lr=1e-2)
            for _ in range(5):
                opt.zero_grad()
                loss = mlp_forward(net, rng.standard_normal((8, 2))).square().sum()
                loss.backward()
                opt.step()
            return [p.data.copy() for p in net.parameters()]

        a, b = run(), run()
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
