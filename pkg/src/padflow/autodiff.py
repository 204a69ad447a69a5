"""Minimal reverse-mode autodiff over dense float64 arrays, plus an MLP and Adam.

The computation graph doubles as the tape: every Tensor produced by an op keeps
references to its parents and a closure that scatters the adjoint back to them.
Calling ``backward()`` on a scalar walks the graph in reverse topological order
and populates ``.grad`` on every reachable leaf. The graph is dropped as soon
as the root goes out of scope, so each training step gets a fresh tape.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .errors import DimensionError, NumericError, UsageError

_GRAD_ENABLED = True
_CHECK_FINITE = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (sampling, evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_finite_checks(enabled):
    """Toggle NaN/Inf screening at op boundaries (on by default)."""
    global _CHECK_FINITE
    _CHECK_FINITE = enabled


def _as_array(values):
    arr = np.asarray(values, dtype=np.float64)
    if _CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise NumericError("non-finite value entering the tape")
    return arr


def _unbroadcast(grad, shape):
    # Sum out broadcast axes so the adjoint matches the parent's shape.
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense float64 array participating in the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad=False):
        self.data = _as_array(values)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        if _CHECK_FINITE and not np.all(np.isfinite(data)):
            raise NumericError("non-finite value produced by an op")
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._parents = ()
        out._backward = None
        tracked = _GRAD_ENABLED and any(
            p.requires_grad or p._parents for p in parents
        )
        out.requires_grad = tracked
        if tracked:
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def backward(self):
        """Populate ``.grad`` on every tensor this scalar depends on."""
        if self.data.size != 1:
            raise UsageError("backward() requires a scalar output")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    key = id(parent)
                    acc = grads.get(key)
                    grads[key] = pg if acc is None else acc + pg

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other):
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other
        return Tensor._make(
            a.data + b.data,
            (a, b),
            lambda g: ((a, _unbroadcast(g, a.data.shape)),
                       (b, _unbroadcast(g, b.data.shape))),
        )

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor._make(-a.data, (a,), lambda g: ((a, -g),))

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        return Tensor._make(
            a.data * b.data,
            (a, b),
            lambda g: ((a, _unbroadcast(g * b.data, a.data.shape)),
                       (b, _unbroadcast(g * a.data, b.data.shape))),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self, other
        return Tensor._make(
            a.data / b.data,
            (a, b),
            lambda g: ((a, _unbroadcast(g / b.data, a.data.shape)),
                       (b, _unbroadcast(-g * a.data / b.data**2, b.data.shape))),
        )

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __matmul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        if a.data.shape[-1] != b.data.shape[0]:
            raise DimensionError(
                f"matmul mismatch: {a.data.shape} @ {b.data.shape}"
            )
        return Tensor._make(
            a.data @ b.data,
            (a, b),
            lambda g: ((a, g @ b.data.T), (b, a.data.T @ g)),
        )

    def __getitem__(self, key):
        a = self

        def back(g):
            full = np.zeros_like(a.data)
            full[key] = g
            return ((a, full),)

        return Tensor._make(a.data[key], (a,), back)

    # -- elementwise nonlinearities -----------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(a.data)
        return Tensor._make(out_data, (a,), lambda g: ((a, g * out_data),))

    def log(self):
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: ((a, g / a.data),))

    def tanh(self):
        a = self
        out_data = np.tanh(a.data)
        return Tensor._make(
            out_data, (a,), lambda g: ((a, g * (1.0 - out_data**2)),)
        )

    def sqrt(self):
        a = self
        out_data = np.sqrt(a.data)
        return Tensor._make(out_data, (a,), lambda g: ((a, 0.5 * g / out_data),))

    def square(self):
        a = self
        return Tensor._make(a.data**2, (a,), lambda g: ((a, 2.0 * g * a.data),))

    def softplus(self):
        # log(1 + e^x) via logaddexp; linear/zero asymptotes beyond |x| > 30.
        a = self
        x = a.data
        out_data = np.where(
            x > 30.0, x, np.where(x < -30.0, 0.0, np.logaddexp(0.0, x))
        )
        return Tensor._make(out_data, (a,), lambda g: ((a, g * _sigmoid(x)),))

    def relu(self):
        a = self
        mask = a.data > 0
        return Tensor._make(
            np.where(mask, a.data, 0.0), (a,), lambda g: ((a, g * mask),)
        )

    def sigmoid(self):
        a = self
        out_data = _sigmoid(a.data)
        return Tensor._make(
            out_data, (a,), lambda g: ((a, g * out_data * (1.0 - out_data)),)
        )

    # -- reductions / shaping -----------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self

        def back(g):
            if axis is None:
                return ((a, np.broadcast_to(g, a.data.shape).copy()),)
            gg = g
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            return ((a, np.broadcast_to(gg, a.data.shape).copy()),)

        return Tensor._make(
            a.data.sum(axis=axis, keepdims=keepdims), (a,), back
        )

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        a = self
        return Tensor._make(
            a.data.reshape(*shape), (a,), lambda g: ((a, g.reshape(a.data.shape)),)
        )


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def concat(tensors, axis=-1):
    """Differentiable concatenation along an axis."""
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    datas = [t.data for t in tensors]
    ax = axis if axis >= 0 else datas[0].ndim + axis
    sizes = [d.shape[ax] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        out = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(lo, hi)
            out.append((t, g[tuple(idx)]))
        return tuple(out)

    return Tensor._make(np.concatenate(datas, axis=ax), tuple(tensors), back)


_ACTIVATIONS = {
    "softplus": Tensor.softplus,
    "tanh": Tensor.tanh,
    "relu": Tensor.relu,
}


class Mlp:
    """Fully connected net; hidden activations applied everywhere but the last layer."""

    def __init__(self, widths, activation="softplus", rng=None, zero_last=False):
        if len(widths) < 2:
            raise UsageError("an MLP needs at least an input and an output width")
        if activation not in _ACTIVATIONS:
            raise UsageError(f"unknown activation {activation!r}")
        self.widths = list(widths)
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights = []
        self.biases = []
        last = len(widths) - 2
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            if zero_last and i == last:
                w = np.zeros((fan_in, fan_out))
            else:
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))

    def parameters(self):
        return self.weights + self.biases

    def __call__(self, x):
        return mlp_forward(self, x)


def mlp_forward(net, x):
    """Run the MLP on a (batch, in_width) or (in_width,) tensor."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.shape[-1] != net.widths[0]:
        raise DimensionError(
            f"input width {x.shape[-1]} != first layer width {net.widths[0]}"
        )
    act = _ACTIVATIONS[net.activation]
    h = x
    n_layers = len(net.weights)
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < n_layers - 1:
            h = act(h)
    return h


class Adam:
    """Adam with bias correction; one (m, v) pair per parameter tensor."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise DimensionError("gradient shape does not match parameter")
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1**self.t)
            v_hat = self.v[i] / (1 - b2**self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
