"""Discrete normalizing flow over the padded space: ActNorm, fixed permutations,
and conditional affine coupling, with exact per-layer log-determinants.

The generative direction maps base-normal draws z to data space; the
normalizing direction inverts it and accumulates log|det J| of the inverse,
which is what the negative log-likelihood loss consumes.
"""

from __future__ import annotations

import base64
import json
import math

import numpy as np

from .autodiff import Adam, Mlp, Tensor, concat, no_grad
from .errors import DimensionError, NumericError, StateError, UsageError

LOG_2PI = math.log(2.0 * math.pi)


def _encode_array(arr):
    return base64.b64encode(np.ascontiguousarray(arr, dtype=np.float64).tobytes()).decode()


def _decode_array(text, shape):
    return np.frombuffer(base64.b64decode(text), dtype=np.float64).reshape(shape).copy()


class ActNorm:
    """Per-dimension affine layer with data-dependent initialization."""

    def __init__(self, dim):
        self.dim = dim
        self.log_scale = Tensor(np.zeros(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.initialized = False

    def init_identity(self):
        self.initialized = True

    def init_from_batch(self, x):
        # After init the inverse direction standardizes this batch per dim.
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std < 1e-6, 1.0, std)
        self.bias.data = mean
        self.log_scale.data = np.log(std)
        self.initialized = True

    def parameters(self):
        return [self.log_scale, self.bias]

    def forward(self, z, cond=None):
        if not self.initialized:
            raise StateError("ActNorm used in the generative direction before initialization")
        x = z * self.log_scale.exp() + self.bias
        logdet = self.log_scale.sum()
        return x, logdet

    def inverse(self, x, cond=None):
        if not self.initialized:
            self.init_from_batch(x.data if isinstance(x, Tensor) else np.asarray(x))
        z = (x - self.bias) * (-self.log_scale).exp()
        logdet = -self.log_scale.sum()
        return z, logdet

    def to_dict(self):
        return {
            "kind": "actnorm",
            "dim": self.dim,
            "log_scale": _encode_array(self.log_scale.data),
            "bias": _encode_array(self.bias.data),
            "initialized": self.initialized,
        }

    @classmethod
    def from_dict(cls, d):
        layer = cls(d["dim"])
        layer.log_scale.data = _decode_array(d["log_scale"], (d["dim"],))
        layer.bias.data = _decode_array(d["bias"], (d["dim"],))
        layer.initialized = d["initialized"]
        return layer


class Permutation:
    """Fixed seeded shuffle of the dimensions; log-determinant is zero."""

    def __init__(self, dim, seed=None, perm=None):
        self.dim = dim
        if perm is not None:
            self.perm = np.asarray(perm, dtype=np.intp)
        elif seed is None:
            self.perm = np.arange(dim, dtype=np.intp)
        else:
            self.perm = np.random.default_rng(seed).permutation(dim)
        self.inv_perm = np.argsort(self.perm)

    def parameters(self):
        return []

    def forward(self, z, cond=None):
        return z[:, self.perm], None

    def inverse(self, x, cond=None):
        return x[:, self.inv_perm], None

    def to_dict(self):
        return {"kind": "perm", "dim": self.dim, "perm": self.perm.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["dim"], perm=d["perm"])


class CouplingLayer:
    """Affine coupling: one half is transformed by scale/shift nets fed with the
    other half (plus the condition). Log-scales are clamped to (-clamp, clamp)."""

    def __init__(self, dim, cond_dim=0, hidden=64, depth=2, activation="softplus",
                 clamp=2.0, id_first=True, rng=None):
        if dim < 2:
            raise UsageError("coupling needs at least 2 dimensions")
        self.dim = dim
        self.cond_dim = cond_dim
        self.clamp = clamp
        self.id_first = id_first
        self.k = (dim + 1) // 2
        n_id = self.k if id_first else dim - self.k
        n_tr = dim - n_id
        widths = [n_id + cond_dim] + [hidden] * depth + [n_tr]
        rng = rng if rng is not None else np.random.default_rng(0)
        self.scale_net = Mlp(widths, activation, rng=rng, zero_last=True)
        self.shift_net = Mlp(widths, activation, rng=rng, zero_last=True)

    def _split(self, v):
        if self.id_first:
            return v[:, : self.k], v[:, self.k:]
        return v[:, self.k:], v[:, : self.k]

    def _join(self, v_id, v_tr):
        if self.id_first:
            return concat([v_id, v_tr], axis=1)
        return concat([v_tr, v_id], axis=1)

    def _scale_shift(self, v_id, cond):
        net_in = v_id if cond is None else concat([v_id, cond], axis=1)
        s_raw = self.scale_net(net_in)
        s = self.clamp * (s_raw * (1.0 / self.clamp)).tanh()
        t = self.shift_net(net_in)
        return s, t

    def parameters(self):
        return self.scale_net.parameters() + self.shift_net.parameters()

    def forward(self, z, cond=None):
        z_id, z_tr = self._split(z)
        s, t = self._scale_shift(z_id, cond)
        x_tr = z_tr * s.exp() + t
        return self._join(z_id, x_tr), s.sum(axis=1)

    def inverse(self, x, cond=None):
        x_id, x_tr = self._split(x)
        s, t = self._scale_shift(x_id, cond)
        z_tr = (x_tr - t) * (-s).exp()
        return self._join(x_id, z_tr), -s.sum(axis=1)

    def to_dict(self):
        def net_dict(net):
            return {
                "widths": net.widths,
                "activation": net.activation,
                "weights": [_encode_array(w.data) for w in net.weights],
                "biases": [_encode_array(b.data) for b in net.biases],
            }

        return {
            "kind": "coupling",
            "dim": self.dim,
            "cond_dim": self.cond_dim,
            "clamp": self.clamp,
            "id_first": self.id_first,
            "scale_net": net_dict(self.scale_net),
            "shift_net": net_dict(self.shift_net),
        }

    @classmethod
    def from_dict(cls, d):
        layer = cls.__new__(cls)
        layer.dim = d["dim"]
        layer.cond_dim = d["cond_dim"]
        layer.clamp = d["clamp"]
        layer.id_first = d["id_first"]
        layer.k = (layer.dim + 1) // 2
        for attr in ("scale_net", "shift_net"):
            nd = d[attr]
            net = Mlp(nd["widths"], nd["activation"])
            for w, enc in zip(net.weights, nd["weights"]):
                w.data = _decode_array(enc, w.data.shape)
            for b, enc in zip(net.biases, nd["biases"]):
                b.data = _decode_array(enc, b.data.shape)
            setattr(layer, attr, net)
        return layer


_LAYER_KINDS = {"actnorm": ActNorm, "perm": Permutation, "coupling": CouplingLayer}


class FlowModel:
    """Layer stack over D = data_dim + pad_dim with a standard-normal base."""

    def __init__(self, data_dim, pad_dim=0, cond_dim=0, layers=None):
        self.data_dim = data_dim
        self.pad_dim = pad_dim
        self.cond_dim = cond_dim
        self.layers = layers if layers is not None else []
        for layer in self.layers:
            if layer.dim != self.dim:
                raise DimensionError("layer dimension does not match the model")

    @property
    def dim(self):
        return self.data_dim + self.pad_dim

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def _check_cond(self, cond, n):
        if self.cond_dim == 0:
            if cond is not None:
                raise UsageError("model is unconditional but a condition was given")
            return None
        if cond is None:
            raise UsageError("conditional model requires a condition")
        if not isinstance(cond, Tensor):
            cond = Tensor(cond)
        if cond.ndim == 1:
            cond = Tensor(np.broadcast_to(cond.data, (n, cond.shape[0])).copy())
        if cond.shape != (n, self.cond_dim):
            raise DimensionError(
                f"condition shape {cond.shape} != ({n}, {self.cond_dim})"
            )
        return cond

    def _as_batch(self, v):
        if not isinstance(v, Tensor):
            v = Tensor(v)
        squeeze = v.ndim == 1
        if squeeze:
            v = v.reshape(1, -1)
        if v.shape[1] != self.dim:
            raise DimensionError(f"expected dimension {self.dim}, got {v.shape[1]}")
        return v, squeeze

    def forward_gen(self, z, cond=None, with_logdet=False):
        """Generative direction x = F(z); optionally also log|det J_F|."""
        z, squeeze = self._as_batch(z)
        cond = self._check_cond(cond, z.shape[0])
        x = z
        logdet = Tensor(np.zeros(z.shape[0]))
        for layer in self.layers:
            x, ld = layer.forward(x, cond)
            if ld is not None:
                logdet = logdet + ld
        if squeeze:
            x = x.reshape(-1)
            logdet = logdet.reshape(())
        return (x, logdet) if with_logdet else x

    def inverse_norm(self, x, cond=None):
        """Normalizing direction: returns (z, log|det J of the inverse|)."""
        x, squeeze = self._as_batch(x)
        cond = self._check_cond(cond, x.shape[0])
        z = x
        logdet = Tensor(np.zeros(x.shape[0]))
        for i, layer in enumerate(reversed(self.layers)):
            try:
                z, ld = layer.inverse(z, cond)
            except NumericError as exc:
                idx = len(self.layers) - 1 - i
                raise NumericError(f"non-finite value in layer {idx}: {exc}") from exc
            if ld is not None:
                logdet = logdet + ld
        if squeeze:
            z = z.reshape(-1)
            logdet = logdet.reshape(())
        return z, logdet

    def log_prob(self, x, cond=None):
        """log p(x) = log N(z; 0, I) + log|det J of the inverse|."""
        z, logdet = self.inverse_norm(x, cond)
        axis = -1 if z.ndim else None
        base = -0.5 * (z.square().sum(axis=axis) + self.dim * LOG_2PI)
        return base + logdet

    def nll_loss(self, batch, cond=None):
        """Mean negative log-likelihood over a nonempty batch."""
        batch = batch if isinstance(batch, Tensor) else Tensor(batch)
        if batch.ndim != 2 or batch.shape[0] == 0:
            raise UsageError("nll_loss expects a nonempty (n, dim) batch")
        return -self.log_prob(batch, cond).mean()

    def sample(self, n, cond=None, rng=None):
        """Draw n points by pushing base-normal draws through the flow."""
        if n < 1:
            raise UsageError("sample count must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        z = rng.standard_normal((n, self.dim))
        with no_grad():
            x = self.forward_gen(z, cond)
        return x.data

    # -- persistence --------------------------------------------------------

    def to_dict(self):
        return {
            "version": 1,
            "data_dim": self.data_dim,
            "pad_dim": self.pad_dim,
            "cond_dim": self.cond_dim,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != 1:
            raise UsageError(f"unsupported checkpoint version {d.get('version')!r}")
        layers = [_LAYER_KINDS[ld["kind"]].from_dict(ld) for ld in d["layers"]]
        return cls(d["data_dim"], d["pad_dim"], d["cond_dim"], layers)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_flow(data_dim, pad_dim=0, cond_dim=0, steps=8, hidden=64, depth=2,
               activation="softplus", clamp=2.0, seed=0, use_actnorm=True,
               identity_perms=False):
    """Standard stack: [ActNorm, permutation, coupling] x steps, alternating
    which half the coupling transforms."""
    dim = data_dim + pad_dim
    rng = np.random.default_rng(seed)
    layers = []
    for step in range(steps):
        if use_actnorm:
            layers.append(ActNorm(dim))
        perm_seed = None if identity_perms else int(rng.integers(2**31))
        layers.append(Permutation(dim, seed=perm_seed))
        layers.append(
            CouplingLayer(
                dim, cond_dim=cond_dim, hidden=hidden, depth=depth,
                activation=activation, clamp=clamp, id_first=(step % 2 == 0),
                rng=rng,
            )
        )
    return FlowModel(data_dim, pad_dim, cond_dim, layers)


def train_flow(model, batches, lr=1e-3, callback=None):
    """Minimal training loop: one Adam step per yielded (batch, cond) pair."""
    opt = Adam(model.parameters(), lr=lr)
    for step, (batch, cond) in enumerate(batches):
        opt.zero_grad()
        loss = model.nll_loss(batch, cond)
        if not np.isfinite(loss.data):
            raise NumericError(f"training loss diverged at step {step}")
        loss.backward()
        opt.step()
        if callback is not None:
            callback(step, float(loss.data))
    return model
