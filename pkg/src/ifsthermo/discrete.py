"""Grid functions and finitely supported measures on the attractor."""
from __future__ import annotations

import csv
import json
from typing import Callable

import numpy as np

from .errors import GridResolutionError, InvalidInputError
from .ifs import AttractorGrid, as_points, lex_order, merge_points


class GridFunction:
    """A real function on the attractor, stored by its values on a grid.

    Off-grid evaluation reads the nearest grid point.  When the function was
    built from an analytic callable (``func``), ``__call__`` evaluates it
    exactly instead; operators on the grid always use the stored values.
    """

    def __init__(self, grid: AttractorGrid, values, func: Callable | None = None,
                 name: str | None = None):
        values = np.asarray(values, dtype=float)
        if values.shape != (len(grid),):
            raise InvalidInputError(f"expected {len(grid)} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("grid function values must be finite")
        self.grid = grid
        self.values = values
        self.func = func
        self.name = name

    @classmethod
    def from_callable(cls, grid: AttractorGrid, func: Callable, name: str | None = None):
        return cls(grid, np.asarray(func(grid.points), dtype=float).reshape(len(grid)), func, name)

    @classmethod
    def constant(cls, grid: AttractorGrid, value: float = 1.0):
        return cls.from_callable(grid, lambda p: np.full(p.shape[0], float(value)), f"const({value})")

    def __repr__(self):
        return f"GridFunction({self.name or 'values'}, n={self.values.size})"

    def nearest_values(self, points) -> np.ndarray:
        idx, dist = self.grid.nearest(points)
        limit = self.grid.error_bound * (1 + 1e-9) + self.grid.dedup_tol
        if dist.size and dist.max() > limit:
            raise GridResolutionError(
                f"lookup point at distance {dist.max():.3g} from the grid exceeds the bound {limit:.3g}"
            )
        return self.values[idx]

    def __call__(self, points) -> np.ndarray:
        pts = as_points(points, self.grid.ifs.dimension)
        if self.func is not None:
            return np.asarray(self.func(pts), dtype=float).reshape(pts.shape[0])
        return self.nearest_values(pts)

    def _combine(self, other, op):
        if isinstance(other, GridFunction):
            if other.grid is not self.grid:
                raise InvalidInputError("grid functions live on different grids")
            func = None
            if self.func is not None and other.func is not None:
                f, g = self.func, other.func
                func = lambda p: op(np.asarray(f(p), dtype=float), np.asarray(g(p), dtype=float))
            return GridFunction(self.grid, op(self.values, other.values), func)
        scalar = float(other)
        func = None
        if self.func is not None:
            f = self.func
            func = lambda p: op(np.asarray(f(p), dtype=float), scalar)
        return GridFunction(self.grid, op(self.values, scalar), func)

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{i}" for i in range(self.grid.ifs.dimension)] + ["value"])
            for p, v in zip(self.grid.points, self.values):
                writer.writerow([repr(float(c)) for c in p] + [repr(float(v))])

    def to_dict(self) -> dict:
        return {"points": self.grid.points.tolist(), "values": self.values.tolist()}


class DiscreteMeasure:
    """A finite non-negative combination of point masses, atoms sorted and merged."""

    def __init__(self, points, weights, tol: float = 0.0, merge: bool = True):
        weights = np.asarray(weights, dtype=float).reshape(-1)
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(weights.size, -1) if weights.size else pts.reshape(0, max(pts.size, 1))
        if pts.shape[0] != weights.size:
            raise InvalidInputError("points and weights have different lengths")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(weights))):
            raise InvalidInputError("atoms and weights must be finite")
        if np.any(weights < 0):
            raise InvalidInputError("measure weights must be non-negative")
        self.tol = float(tol)
        if merge and weights.size:
            uniq, labels = merge_points(pts, self.tol)
            weights = np.bincount(labels, weights=weights, minlength=uniq.shape[0])
            pts = uniq
        self.points = pts
        self.weights = weights
        self.total_mass = float(np.sum(weights))

    @classmethod
    def delta(cls, x, weight: float = 1.0, tol: float = 0.0):
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        return cls(pts, [weight], tol)

    @classmethod
    def zero(cls, dimension: int, tol: float = 0.0):
        return cls(np.zeros((0, dimension)), np.zeros(0), tol)

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.weights.size

    def __repr__(self):
        return f"DiscreteMeasure(atoms={len(self)}, mass={self.total_mass:.6g})"

    def integrate(self, f) -> float:
        """Integral of a GridFunction or a callable on (N, k) point arrays."""
        if self.weights.size == 0:
            return 0.0
        vals = np.asarray(f(self.points), dtype=float).reshape(-1)
        return float(np.dot(self.weights, vals))

    def scaled(self, factor: float) -> "DiscreteMeasure":
        if factor < 0:
            raise InvalidInputError("scale factor must be non-negative")
        return DiscreteMeasure(self.points, self.weights * factor, self.tol, merge=False)

    def normalized(self) -> "DiscreteMeasure":
        if self.total_mass <= 0:
            raise InvalidInputError("cannot normalize a zero measure")
        return self.scaled(1.0 / self.total_mass)

    def __add__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        if len(other) == 0:
            return self
        if len(self) == 0:
            return other
        return DiscreteMeasure(np.concatenate([self.points, other.points]),
                               np.concatenate([self.weights, other.weights]),
                               max(self.tol, other.tol))

    def mass_near(self, points, tol: float) -> float:
        """Total weight of atoms within ``tol`` of any of ``points``."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dimension)
        if pts.shape[0] == 0 or len(self) == 0:
            return 0.0
        dist = np.min(np.linalg.norm(self.points[:, None, :] - pts[None, :, :], axis=2), axis=1)
        return float(np.sum(self.weights[dist <= tol]))

    def atom_weight(self, x, tol: float) -> float:
        return self.mass_near(np.atleast_2d(np.asarray(x, dtype=float)), tol)

    def sorted_atoms(self):
        order = lex_order(self.points)
        return self.points[order], self.weights[order]

    def to_dict(self) -> dict:
        pts, w = self.sorted_atoms()
        return {"atoms": [[p.tolist(), float(v)] for p, v in zip(pts, w)],
                "total_mass": self.total_mass}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self, path) -> None:
        pts, w = self.sorted_atoms()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{i}" for i in range(self.dimension)] + ["weight"])
            for p, v in zip(pts, w):
                writer.writerow([repr(float(c)) for c in p] + [repr(float(v))])
