import math

import numpy as np
import pytest

from padflow.autodiff import Tensor
from padflow.errors import StateError, UsageError
from padflow.flows import (
    ActNorm,
    CouplingLayer,
    FlowModel,
    Permutation,
    build_flow,
    train_flow,
)


def identity_flow(d, pad=0, cond=0, steps=4, seed=0, hidden=16, identity_perms=False):
    m = build_flow(d, pad_dim=pad, cond_dim=cond, steps=steps, hidden=hidden,
                   seed=seed, identity_perms=identity_perms)
    for layer in m.layers:
        if hasattr(layer, "init_identity"):
            layer.init_identity()
    return m


class TestForwardGen:
    def test_fresh_model_with_identity_perms_is_identity(self):
        m = identity_flow(2, steps=3, identity_perms=True)
        z = np.random.default_rng(0).standard_normal((5, 2))
        np.testing.assert_array_equal(m.forward_gen(z).data, z)

    def test_fresh_model_is_permutation(self):
        m = identity_flow(3, steps=2)
        z = np.random.default_rng(0).standard_normal((5, 3))
        x = m.forward_gen(z).data
        # Same multiset of values per row, possibly reordered.
        np.testing.assert_allclose(np.sort(x, axis=1), np.sort(z, axis=1))

    def test_uninitialized_actnorm_raises(self):
        m = build_flow(2, steps=1, seed=0)
        with pytest.raises(StateError):
            m.forward_gen(np.zeros((1, 2)))

    def test_single_coupling_matches_hand_computed(self):
        layer = CouplingLayer(2, hidden=4, clamp=2.0, id_first=True,
                              rng=np.random.default_rng(0))
        # Constant nets: raw scale 0.5, shift 0.25, independent of input.
        for net, const in ((layer.scale_net, 0.5), (layer.shift_net, 0.25)):
            for w in net.weights:
                w.data[:] = 0.0
            for b in net.biases:
                b.data[:] = 0.0
            net.biases[-1].data[:] = const
        z = np.array([[0.3, 1.0]])
        x, logdet = layer.forward(Tensor(z), None)
        s = 2.0 * math.tanh(0.5 / 2.0)
        np.testing.assert_allclose(x.data, [[0.3, 1.0 * math.exp(s) + 0.25]])
        np.testing.assert_allclose(logdet.data, [s])

    def test_roundtrip(self):
        m = identity_flow(2, pad=1, steps=4, seed=3)
        # Perturb the nets so the flow is not the identity.
        rng = np.random.default_rng(5)
        for p in m.parameters():
            p.data += 0.1 * rng.standard_normal(p.data.shape)
        z = rng.standard_normal((100, 3))
        x = m.forward_gen(z)
        zz, _ = m.inverse_norm(x.data)
        assert np.abs(zz.data - z).max() < 1e-8


class TestInverseNorm:
    def test_identity_flow_logdet_zero(self):
        m = identity_flow(2, steps=3)
        _, logdet = m.inverse_norm(np.ones((4, 2)))
        np.testing.assert_array_equal(logdet.data, np.zeros(4))

    def test_constant_scale_logdet(self):
        layer = CouplingLayer(3, hidden=4, rng=np.random.default_rng(0))
        for w in layer.scale_net.weights:
            w.data[:] = 0.0
        for b in layer.scale_net.biases:
            b.data[:] = 0.0
        layer.scale_net.biases[-1].data[:] = 0.7
        s = 2.0 * math.tanh(0.7 / 2.0)
        n_transformed = 3 - layer.k
        _, logdet = layer.inverse(Tensor(np.ones((2, 3))), None)
        np.testing.assert_allclose(logdet.data, [-s * n_transformed] * 2)

    def test_logdet_matches_numerical_jacobian(self):
        m = identity_flow(2, steps=4, seed=7)
        rng = np.random.default_rng(2)
        for p in m.parameters():
            p.data += 0.2 * rng.standard_normal(p.data.shape)
        h = 1e-6
        for _ in range(20):
            x = rng.standard_normal(2)
            _, logdet = m.inverse_norm(x.reshape(1, 2))
            jac = np.zeros((2, 2))
            for j in range(2):
                up = x.copy()
                dn = x.copy()
                up[j] += h
                dn[j] -= h
                zu, _ = m.inverse_norm(up.reshape(1, 2))
                zd, _ = m.inverse_norm(dn.reshape(1, 2))
                jac[:, j] = (zu.data[0] - zd.data[0]) / (2 * h)
            want = math.log(abs(np.linalg.det(jac)))
            assert abs(logdet.data[0] - want) / max(abs(want), 1e-3) < 1e-3

    def test_logdet_antisymmetry(self):
        m = identity_flow(3, steps=5, seed=11)
        rng = np.random.default_rng(4)
        for p in m.parameters():
            p.data += 0.2 * rng.standard_normal(p.data.shape)
        z = rng.standard_normal((50, 3))
        x, ld_fwd = m.forward_gen(z, with_logdet=True)
        _, ld_inv = m.inverse_norm(x.data)
        assert np.abs(ld_fwd.data + ld_inv.data).max() < 1e-9


class TestLogProb:
    def test_standard_normal_at_origin_2d(self):
        m = identity_flow(2, steps=2)
        lp = m.log_prob(np.zeros((1, 2)))
        np.testing.assert_allclose(lp.data, [-math.log(2 * math.pi)], rtol=1e-12)

    def test_standard_normal_1d(self):
        m = FlowModel(1)  # zero layers: pure base distribution
        lp = m.log_prob(np.array([[1.0]]))
        np.testing.assert_allclose(
            lp.data, [-0.5 * math.log(2 * math.pi) - 0.5], rtol=1e-12
        )

    def test_density_integrates_to_one(self):
        m = identity_flow(2, steps=3, seed=13)
        rng = np.random.default_rng(6)
        for p in m.parameters():
            p.data += 0.15 * rng.standard_normal(p.data.shape)
        grid = np.linspace(-6, 6, 201)
        xx, yy = np.meshgrid(grid, grid)
        pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
        dens = np.exp(m.log_prob(pts).data)
        step = grid[1] - grid[0]
        total = dens.sum() * step * step
        assert abs(total - 1.0) < 1e-2


class TestNllAndSample:
    def test_identity_flow_matches_normal_entropy(self):
        m = identity_flow(2, steps=2)
        rng = np.random.default_rng(0)
        batch = rng.standard_normal((100_000, 2))
        loss = float(m.nll_loss(batch).data)
        want = 2 / 2 * (1 + math.log(2 * math.pi))
        # SE of the mean of per-point NLL.
        per_pt = -m.log_prob(batch).data
        se = per_pt.std() / math.sqrt(len(per_pt))
        assert abs(loss - want) < 3 * se

    def test_single_point_batch(self):
        m = identity_flow(2, steps=1)
        x = np.array([[0.5, -0.25]])
        np.testing.assert_allclose(
            m.nll_loss(x).data, -m.log_prob(x).data[0], rtol=1e-12
        )

    def test_empty_batch_rejected(self):
        m = identity_flow(2, steps=1)
        with pytest.raises(UsageError):
            m.nll_loss(np.zeros((0, 2)))

    def test_loss_decreases_fitting_shifted_normal(self):
        # No ActNorm: its data-dependent init would solve the task at step 0.
        m = build_flow(2, steps=3, hidden=16, seed=0, use_actnorm=False)
        rng = np.random.default_rng(0)

        def batches():
            for _ in range(200):
                yield rng.standard_normal((128, 2)) + np.array([3.0, -2.0]), None

        losses = []
        train_flow(m, batches(), lr=5e-3, callback=lambda s, l: losses.append(l))
        assert np.mean(losses[-20:]) < np.mean(losses[:5])

    def test_sample_base_statistics(self):
        m = identity_flow(2, steps=2)
        s = m.sample(100_000, rng=np.random.default_rng(0))
        se = 1.0 / math.sqrt(len(s))
        assert np.abs(s.mean(axis=0)).max() < 3 * se
        cov = np.cov(s.T)
        assert np.abs(cov - np.eye(2)).max() < 0.02

    def test_sample_determinism(self):
        m = identity_flow(2, steps=2)
        a = m.sample(100, rng=np.random.default_rng(7))
        b = m.sample(100, rng=np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_affine_flow_statistics(self):
        m = FlowModel(1)
        an = ActNorm(1)
        an.log_scale.data[:] = math.log(2.0)
        an.bias.data[:] = 1.0
        an.initialized = True
        m.layers.append(an)
        s = m.sample(100_000, rng=np.random.default_rng(0))
        assert abs(s.mean() - 1.0) < 3 * 2 / math.sqrt(len(s))
        assert abs(s.std() - 2.0) < 0.02


class TestBijectivityProperty:
    @pytest.mark.parametrize("n_steps", [1, 4, 16])
    def test_roundtrip_many_layers(self, n_steps):
        m = identity_flow(2, pad=1, steps=n_steps, seed=n_steps)
        rng = np.random.default_rng(n_steps)
        for p in m.parameters():
            p.data += 0.1 * rng.standard_normal(p.data.shape)
        z = rng.standard_normal((1000, 3))
        x = m.forward_gen(z)
        zz, _ = m.inverse_norm(x.data)
        assert np.abs(zz.data - z).max() < 1e-8


class TestConditioning:
    def test_condition_changes_output(self):
        m = build_flow(2, cond_dim=1, steps=2, hidden=8, seed=0)
        for layer in m.layers:
            if hasattr(layer, "init_identity"):
                layer.init_identity()
        rng = np.random.default_rng(0)
        for p in m.parameters():
            p.data += 0.3 * rng.standard_normal(p.data.shape)
        z = np.ones((4, 2))
        a = m.forward_gen(z, cond=np.zeros((4, 1))).data
        b = m.forward_gen(z, cond=np.ones((4, 1))).data
        assert np.abs(a - b).max() > 1e-6

    def test_missing_condition_rejected(self):
        m = build_flow(2, cond_dim=1, steps=1, seed=0)
        with pytest.raises(UsageError):
            m.inverse_norm(np.ones((2, 2)))


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        m = build_flow(2, pad_dim=1, cond_dim=1, steps=3, hidden=8, seed=0)
        rng = np.random.default_rng(1)
        for p in m.parameters():
            p.data += rng.standard_normal(p.data.shape)
        for layer in m.layers:
            if hasattr(layer, "init_identity"):
                layer.init_identity()
        path = tmp_path / "model.json"
        m.save(path)
        m2 = FlowModel.load(path)
        assert (m2.data_dim, m2.pad_dim, m2.cond_dim) == (2, 1, 1)
        for p, q in zip(m.parameters(), m2.parameters()):
            np.testing.assert_array_equal(p.data, q.data)
        z = rng.standard_normal((5, 3))
        c = rng.standard_normal((5, 1))
        np.testing.assert_array_equal(
            m.forward_gen(z, c).data, m2.forward_gen(z, c).data
        )


def test_actnorm_data_dependent_init():
    an = ActNorm(2)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1000, 2)) * np.array([3.0, 0.5]) + np.array([1.0, -2.0])
    z, _ = an.inverse(Tensor(x))
    assert np.abs(z.data.mean(axis=0)).max() < 1e-9
    assert np.abs(z.data.std(axis=0) - 1).max() < 1e-9
