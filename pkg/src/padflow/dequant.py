"""Dequantization strategies: padding-dimensional noise, uniform noise, and
SoftFlow-style conditional noise, plus a Monte Carlo probe for the bias of
uniform dequantization on asymmetric intervals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, UsageError


@dataclass(frozen=True)
class PaddingNoiseConfig:
    """(p, a, b): padding dimension count, data-noise scale, padding-noise scale."""

    p: int
    a: float
    b: float

    def __post_init__(self):
        if self.p < 0:
            raise UsageError("padding dimension count must be >= 0")
        if self.a < 0:
            raise UsageError("data-noise scale must be >= 0")
        if self.p > 0 and self.b <= 0:
            raise UsageError("padding-noise scale must be > 0 when p > 0")


def paddingflow_augment(x, cfg, rng=None, eps_d=None, eps_p=None):
    """x' = (x + eps_d, eps_p) with eps_d ~ N(0, a^2 I_d), eps_p ~ N(0, b^2 I_p).

    Works on a single point (d,) or a batch (n, d). Noise can be injected
    explicitly for tests; otherwise it is drawn from ``rng``.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    if cfg.p == 0 and cfg.a == 0:
        return x.copy()
    rng = rng if rng is not None else np.random.default_rng(0)
    if cfg.a == 0:
        data = x.copy()
    else:
        if eps_d is None:
            eps_d = cfg.a * rng.standard_normal(x.shape)
        data = x + np.asarray(eps_d, dtype=np.float64)
    if cfg.p == 0:
        return data
    pad_shape = x.shape[:-1] + (cfg.p,)
    if eps_p is None:
        eps_p = cfg.b * rng.standard_normal(pad_shape)
    return np.concatenate([data, np.asarray(eps_p, dtype=np.float64).reshape(pad_shape)], axis=-1)


def strip_padding_norm(z, d):
    """Keep the first d components of a normalized point (or batch)."""
    z = np.asarray(z, dtype=np.float64)
    if d > z.shape[-1]:
        raise DimensionError(f"cannot keep {d} dims of a {z.shape[-1]}-dim point")
    return z[..., :d].copy()


def strip_padding_gen(x, d):
    """Same slice as strip_padding_norm, applied to generated samples."""
    return strip_padding_norm(x, d)


def uniform_augment(x, lo, hi, rng=None):
    """x + u with u_i ~ U(lo, hi) independent per component."""
    if lo >= hi:
        raise UsageError(f"degenerate interval [{lo}, {hi})")
    x = np.asarray(x, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng(0)
    return x + rng.uniform(lo, hi, size=x.shape)


def softflow_augment(x, c_max, rng=None, c=None, eps=None):
    """Returns (x + c * eps, c) with c ~ U(0, c_max), eps ~ N(0, I).

    For batches, one c is drawn per row (shape (n, 1)); the caller appends c
    to the model's condition vector.
    """
    if c_max <= 0:
        raise UsageError("softflow c_max must be > 0")
    x = np.asarray(x, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng(0)
    if c is None:
        c_shape = (x.shape[0], 1) if x.ndim == 2 else ()
        c = rng.uniform(0.0, c_max, size=c_shape)
    c = np.asarray(c, dtype=np.float64)
    if eps is None:
        eps = rng.standard_normal(x.shape)
    return x + c * np.asarray(eps, dtype=np.float64), c


def softflow_generate_cond(task_cond=None, n=None):
    """Condition vector(s) for generation: task condition with c = 0 appended."""
    if task_cond is None:
        if n is None:
            return np.zeros(1)
        return np.zeros((n, 1))
    task_cond = np.asarray(task_cond, dtype=np.float64)
    zeros = np.zeros(task_cond.shape[:-1] + (1,))
    return np.concatenate([task_cond, zeros], axis=-1)


def dequant_bias_estimate(base_sampler, lo, hi, n, rng=None):
    """Monte Carlo estimate of E[X + U], U ~ U(lo, hi): returns (mean, se)."""
    if n < 10_000:
        raise UsageError("bias estimate needs n >= 1e4")
    if lo >= hi:
        raise UsageError(f"degenerate interval [{lo}, {hi})")
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.asarray(base_sampler(n, rng), dtype=np.float64)
    y = x + rng.uniform(lo, hi, size=x.shape)
    return float(y.mean()), float(y.std(ddof=1) / math.sqrt(y.size))


def uniform_bias_paper_constant():
    """The closed-form value the analysis in question reports for U(0, 1) on
    standard-normal data; displayed alongside the Monte Carlo estimate, never
    asserted (linearity of expectation gives 0.5)."""
    return 1.0 - math.exp(-0.5)


class DequantStrategy:
    """Training/generation adapter for one dequantization scheme.

    kind is one of {"none", "uniform", "softflow", "paddingflow"}. The
    strategy knows how the flow's ambient and condition dimensions change,
    how to augment a training batch, and how to post-process samples.
    """

    def __init__(self, kind, half_width=None, c_max=None, cfg=None):
        if kind not in ("none", "uniform", "softflow", "paddingflow"):
            raise UsageError(f"unknown dequant kind {kind!r}")
        if kind == "uniform" and (half_width is None or half_width <= 0):
            raise UsageError("uniform dequantization needs half_width > 0")
        if kind == "softflow" and (c_max is None or c_max <= 0):
            raise UsageError("softflow needs c_max > 0")
        if kind == "paddingflow" and cfg is None:
            raise UsageError("paddingflow needs a PaddingNoiseConfig")
        self.kind = kind
        self.half_width = half_width
        self.c_max = c_max
        self.cfg = cfg

    def pad_dim(self):
        return self.cfg.p if self.kind == "paddingflow" else 0

    def extra_cond_dim(self):
        return 1 if self.kind == "softflow" else 0

    def augment(self, x, task_cond, rng):
        """Returns (augmented batch, full condition batch or None)."""
        if self.kind == "none":
            return np.asarray(x, dtype=np.float64).copy(), task_cond
        if self.kind == "uniform":
            return uniform_augment(x, -self.half_width, self.half_width, rng), task_cond
        if self.kind == "softflow":
            noisy, c = softflow_augment(x, self.c_max, rng)
            if task_cond is None:
                return noisy, c
            return noisy, np.concatenate([task_cond, c], axis=-1)
        return paddingflow_augment(x, self.cfg, rng), task_cond

    def generation_cond(self, task_cond, n):
        """Condition to use when sampling from the trained model."""
        if self.kind == "softflow":
            if task_cond is None:
                return np.zeros((n, 1))
            return softflow_generate_cond(task_cond)
        return task_cond

    def postprocess(self, samples, data_dim):
        """Strip padding dims from generated samples where applicable."""
        if self.kind == "paddingflow":
            return strip_padding_gen(samples, data_dim)
        return samples

    def label(self):
        if self.kind == "paddingflow":
            return f"paddingflow({self.cfg.p},{self.cfg.a},{self.cfg.b})"
        if self.kind == "softflow":
            return f"softflow({self.c_max})"
        if self.kind == "uniform":
            return f"uniform({self.half_width})"
        return "none"
