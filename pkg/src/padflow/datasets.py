"""Synthetic 2D distributions (circles / sines, unconditional and conditional)
and standardized CSV ingestion for tabular data.

The toy manifolds are generated with zero thickness on purpose: a density model
in the full ambient dimension cannot fit them without some dequantization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, UsageError
from .metrics import PointSet

TOY_KINDS = ("circles", "cond_circles", "sines", "cond_sines")


@dataclass
class Toy2dSpec:
    kind: str
    n: int
    seed: int = 0
    c: float | None = None  # fixed condition for evaluation sets

    def __post_init__(self):
        if self.kind not in TOY_KINDS:
            raise UsageError(f"unknown toy kind {self.kind!r}")
        if self.n < 1:
            raise UsageError("n must be >= 1")
        if self.c is not None and not (0.0 < self.c <= 1.0):
            raise UsageError("condition c must lie in (0, 1]")


def gen_toy2d(spec, rng=None, angles=None, xs=None):
    """Returns (PointSet, conds) where conds is an (n, 1) array for the
    conditional kinds and None otherwise.

    circles: two concentric circles, radii 0.5 and 1.0, uniform angles.
    cond_circles: one circle of radius c; c ~ U(0.25, 1) unless spec.c fixes it.
    sines: y = 0.5 sin(2 pi x), x ~ U(-1, 1).
    cond_sines: y = c sin(2 pi x); c ~ U(0.3, 1) unless fixed.

    ``angles``/``xs`` allow injecting the free coordinate for exact tests.
    """
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    n = spec.n
    if spec.kind == "circles":
        theta = rng.uniform(0, 2 * np.pi, n) if angles is None else np.asarray(angles)
        radii = np.where(np.arange(n) % 2 == 0, 1.0, 0.5)
        if angles is not None:
            radii = np.ones(len(theta))
        pts = np.stack([radii * np.cos(theta), radii * np.sin(theta)], axis=1)
        return PointSet(pts), None
    if spec.kind == "cond_circles":
        c = np.full(n, spec.c) if spec.c is not None else rng.uniform(0.25, 1.0, n)
        theta = rng.uniform(0, 2 * np.pi, n) if angles is None else np.asarray(angles)
        pts = np.stack([c * np.cos(theta), c * np.sin(theta)], axis=1)
        return PointSet(pts), c.reshape(-1, 1)
    if spec.kind == "sines":
        x = rng.uniform(-1.0, 1.0, n) if xs is None else np.asarray(xs)
        pts = np.stack([x, 0.5 * np.sin(2 * np.pi * x)], axis=1)
        return PointSet(pts), None
    # cond_sines
    c = np.full(n, spec.c) if spec.c is not None else rng.uniform(0.3, 1.0, n)
    x = rng.uniform(-1.0, 1.0, n) if xs is None else np.asarray(xs)
    pts = np.stack([x, c * np.sin(2 * np.pi * x)], axis=1)
    return PointSet(pts), c.reshape(-1, 1)


@dataclass
class TabularDataset:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def unstandardize(self, rows):
        return np.asarray(rows) * self.std + self.mean


def load_csv_standardized(path, fractions=(0.8, 0.1, 0.1), seed=0):
    """Load a headerless numeric CSV, shuffle deterministically, split, and
    standardize every split by the training split's column statistics."""
    rows = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise FormatError(f"{path}: row {i + 1}: {exc}") from exc
    if len(rows) < 2:
        raise FormatError(f"{path}: need at least 2 numeric rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise FormatError(f"{path}: inconsistent column counts {sorted(widths)}")
    data = np.asarray(rows, dtype=np.float64)
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise UsageError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(data))
    data = data[order]
    n = len(data)
    n_train = max(1, int(round(fractions[0] * n)))
    n_val = int(round(fractions[1] * n))
    n_train = min(n_train, n)
    train = data[:n_train]
    val = data[n_train:n_train + n_val]
    test = data[n_train + n_val:]
    mean = train.mean(axis=0)
    std = train.std(axis=0, ddof=0)
    constant = np.where(std < 1e-12)[0]
    if constant.size:
        raise UsageError(f"constant column(s) {constant.tolist()} cannot be standardized")
    return TabularDataset(
        train=(train - mean) / std,
        val=(val - mean) / std if len(val) else val.reshape(0, data.shape[1]),
        test=(test - mean) / std if len(test) else test.reshape(0, data.shape[1]),
        mean=mean,
        std=std,
    )
