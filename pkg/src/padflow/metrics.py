"""Sample-based distribution similarity metrics: ordered L2, Chamfer distance,
exact earth mover's distance via a Hungarian assignment solver, and the
nearest-neighbor minimum matching distance / coverage over sets of point sets.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, UsageError


@dataclass
class PointSet:
    """Finite point set; ``ordered`` marks row order as meaningful."""

    points: np.ndarray
    ordered: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise UsageError("a point set needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise UsageError("point sets must be finite")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


def _pair_sq_dists(a, b):
    # (n, m) matrix of squared euclidean distances.
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def l2_ordered(x, y):
    """Sum of per-row euclidean distances between two equally sized ordered sets."""
    if not (x.ordered and y.ordered):
        raise UsageError("l2_ordered requires ordered point sets")
    if len(x) != len(y) or x.dim != y.dim:
        raise UsageError("l2_ordered requires matching sizes and dims")
    return float(np.linalg.norm(x.points - y.points, axis=1).sum())


def chamfer(x, y):
    """Chamfer distance between unordered sets.

    Equal sizes: the one-sided simplified form sum_x min_y ||x-y||^2 (note:
    not symmetric in general). Unequal sizes: symmetric averaged form with the
    squared-L2 measure.
    """
    a, b = x.points, y.points
    if a.shape[1] != b.shape[1]:
        raise UsageError("chamfer requires equal dims")
    d2 = _pair_sq_dists(a, b)
    if len(x) == len(y):
        return float(d2.min(axis=1).sum())
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def hungarian_assign(cost):
    """Minimum-cost assignment on a square matrix; returns (perm, total) where
    row i is assigned to column perm[i]. O(n^3) shortest augmenting paths."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise UsageError("cost matrix must be square")
    if not np.all(np.isfinite(cost)):
        raise UsageError("cost matrix must be finite")
    n = cost.shape[0]
    # Potentials-based algorithm with 1-based virtual row/col 0.
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.intp)  # p[j] = row matched to column j
    way = np.zeros(n + 1, dtype=np.intp)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            idx = np.nonzero(free)[0]
            cur = cost[i0 - 1, idx - 1] - u[i0] - v[idx]
            better = cur < minv[idx]
            upd = idx[better]
            minv[upd] = cur[better]
            way[upd] = j0
            pos = np.argmin(minv[idx])
            j1 = idx[pos]
            delta = minv[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[idx] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    perm = np.empty(n, dtype=np.intp)
    for j in range(1, n + 1):
        perm[p[j] - 1] = j - 1
    total = float(cost[np.arange(n), perm].sum())
    return perm, total


def emd(x, y):
    """Exact earth mover's distance: min over bijections of sum ||x - f(x)||."""
    if len(x) != len(y):
        raise UsageError("emd requires equally sized sets")
    if x.dim != y.dim:
        raise UsageError("emd requires equal dims")
    cost = np.sqrt(_pair_sq_dists(x.points, y.points))
    _, total = hungarian_assign(cost)
    return total


def emd_normalized(x, y):
    """EMD divided by the set size (per-point average matching distance)."""
    return emd(x, y) / len(x)


_MEASURES = {
    "l2": l2_ordered,
    "cd": chamfer,
    "emd": emd,
}


def _measure_fn(measure):
    try:
        return _MEASURES[measure]
    except KeyError:
        raise UsageError(f"unknown measure {measure!r}; use one of {sorted(_MEASURES)}")


@dataclass
class SetOfSets:
    """Nonempty list of point sets sharing a dimension."""

    sets: list = field(default_factory=list)

    def __post_init__(self):
        if not self.sets:
            raise UsageError("SetOfSets must be nonempty")
        dims = {s.dim for s in self.sets}
        if len(dims) != 1:
            raise UsageError("all point sets must share a dimension")

    def __len__(self):
        return len(self.sets)

    def __iter__(self):
        return iter(self.sets)


def mmd(s_t, s_p, measure="cd"):
    """Mean over target sets of the distance to the nearest predicted set."""
    fn = _measure_fn(measure)
    if len(s_p) == 0:
        raise UsageError("predicted set collection is empty")
    total = 0.0
    for x in s_t:
        total += min(fn(x, y) for y in s_p)
    return total / len(s_t)


def mmd_single(x, s_p, measure="cd"):
    """Single-target form: min over predicted sets of D(X, Y)."""
    fn = _measure_fn(measure)
    return min(fn(x, y) for y in s_p)


def cov(s_t, s_p, measure="cd"):
    """Fraction of predicted sets selected as some target's nearest neighbor.
    Ties break toward the lowest index, so the result is deterministic."""
    fn = _measure_fn(measure)
    if len(s_t) == 0 or len(s_p) == 0:
        raise UsageError("cov requires nonempty collections")
    matched = set()
    preds = list(s_p)
    for x in s_t:
        dists = [fn(x, y) for y in preds]
        matched.add(int(np.argmin(dists)))
    return len(matched) / len(preds)


def subsample(points, limit, rng):
    """Seeded subsample used before O(n^3) EMD on oversized sets."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] <= limit:
        return points
    idx = rng.choice(points.shape[0], size=limit, replace=False)
    return points[idx]


# -- CSV interfaces ---------------------------------------------------------

def write_point_csv(path, points):
    """Headerless CSV: one point per line, dims as columns."""
    points = np.asarray(points, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.atleast_2d(points):
            writer.writerow([repr(float(v)) for v in row])


def read_point_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise FormatError(f"{path}: row {i + 1}: {exc}") from exc
    if not rows:
        raise FormatError(f"{path}: empty point file")
    return np.asarray(rows, dtype=np.float64)


RESULT_COLUMNS = ("dataset", "model", "metric", "measure", "value", "seed")


def append_result_rows(path, rows):
    """Append rows to a results CSV with the fixed column set, creating the
    header on first write."""
    path = os.fspath(path)
    new_file = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([row[c] for c in RESULT_COLUMNS])
