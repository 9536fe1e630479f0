"""Deterministic test-function suites used to check measure identities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discrete import GridFunction
from .ifs import AttractorGrid, BranchData


@dataclass
class TestSuite:
    positives: list          # non-negative functions, for (K2) and residuals
    vanishing: list          # functions vanishing on the branched points, for (K1)

    __test__ = False  # keep pytest from collecting this class

    @property
    def all(self) -> list:
        return self.positives + self.vanishing


def _box(grid: AttractorGrid):
    lo = grid.points.min(axis=0) - grid.error_bound
    span = float(np.max(grid.points.max(axis=0) - lo)) or 1.0
    return lo, span


def _coordinate(i, lo):
    return lambda p: p[:, i] - lo[i]


def _squared(i, lo):
    return lambda p: (p[:, i] - lo[i]) ** 2


def _wave(lo, span, v, freq, phase, w, shift):
    # 0.1 <= value <= 1.2 on the bounding box
    def f(p):
        u = (p - lo) / span
        return 0.5 + 0.4 * np.sin(2 * np.pi * freq * (u @ v) + phase) + 0.3 * np.abs(u @ w - shift)
    return f


def _vanishing(f, B):
    def g(p):
        dist = np.linalg.norm(p[:, None, :] - B[None, :, :], axis=2)
        return f(p) * np.prod(dist, axis=1)
    return g


def default_suite(grid: AttractorGrid, branch: BranchData | None = None, n_random: int = 10,
                  seed: int = 0) -> TestSuite:
    """Constants, shifted coordinates and their squares, and random positive waves.

    The vanishing suite multiplies each positive function by the product of
    distances to the branched points; with no branched points it equals the
    positive suite.
    """
    lo, span = _box(grid)
    k = grid.ifs.dimension
    positives = [GridFunction.constant(grid, 1.0)]
    for i in range(k):
        positives.append(GridFunction.from_callable(grid, _coordinate(i, lo), f"coord{i}"))
        positives.append(GridFunction.from_callable(grid, _squared(i, lo), f"coord{i}^2"))
    rng = np.random.default_rng(seed)
    for r in range(n_random):
        v = rng.normal(size=k)
        v /= np.linalg.norm(v)
        w = rng.normal(size=k)
        w /= np.linalg.norm(w)
        f = _wave(lo, span, v, rng.uniform(0.25, 1.0), rng.uniform(0, 2 * np.pi), w,
                  rng.uniform(0, 1))
        positives.append(GridFunction.from_callable(grid, f, f"wave{r}"))
    B = branch.branch_points if branch is not None else np.zeros((0, k))
    if B.shape[0] == 0:
        vanishing = list(positives)
    else:
        vanishing = [
            GridFunction.from_callable(grid, _vanishing(p.func, B), f"{p.name}*dist(B)")
            for p in positives
        ]
    return TestSuite(positives, vanishing)
