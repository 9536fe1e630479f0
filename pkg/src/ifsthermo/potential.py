"""Potential families H = (h_1, ..., h_d) and their admissibility checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError, InvalidPotentialError, PotentialNotAboveOneError
from .ifs import AttractorGrid, BranchData, as_points

DEFAULT_COMPAT_TOL = 1e-10


class Potential:
    """One weight function h_j; subclasses provide values and a modulus of continuity."""

    kind = "abstract"
    certified = False

    def values(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def modulus(self, t: float) -> float:
        """Upper bound for sup{|h(x) - h(y)| : |x - y| <= t}."""
        raise NotImplementedError

    def dini_integral(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class ConstantPotential(Potential):
    value: float
    kind = "constant"
    certified = True

    def values(self, points):
        return np.full(points.shape[0], float(self.value))

    def modulus(self, t):
        return 0.0

    def dini_integral(self):
        return 0.0

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}


@dataclass(frozen=True, eq=False)
class AffinePotential(Potential):
    """h(x) = gradient . x + offset."""

    gradient: np.ndarray
    offset: float
    kind = "affine"
    certified = True

    def __post_init__(self):
        object.__setattr__(self, "gradient", np.atleast_1d(np.asarray(self.gradient, dtype=float)))

    @property
    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.gradient))

    def values(self, points):
        return points @ self.gradient + self.offset

    def modulus(self, t):
        return self.lipschitz * t

    def dini_integral(self):
        return self.lipschitz

    def to_dict(self):
        return {"kind": self.kind, "gradient": self.gradient.tolist(), "offset": self.offset}


@dataclass(frozen=True, eq=False)
class HolderPotential(Potential):
    """User evaluator with a declared bound |h(x) - h(y)| <= constant * |x - y|**exponent."""

    func: Callable[[np.ndarray], np.ndarray]
    exponent: float
    constant: float
    kind = "holder"
    certified = True

    def __post_init__(self):
        if not 0 < self.exponent <= 1:
            raise InvalidInputError("Hoelder exponent must lie in (0, 1]")
        if self.constant < 0:
            raise InvalidInputError("Hoelder constant must be non-negative")

    def values(self, points):
        return np.asarray(self.func(points), dtype=float).reshape(points.shape[0])

    def modulus(self, t):
        return self.constant * t**self.exponent

    def dini_integral(self):
        return self.constant / self.exponent

    def to_dict(self):
        return {"kind": self.kind, "exponent": self.exponent, "constant": self.constant}


@dataclass(frozen=True, eq=False)
class SampledPotential(Potential):
    """Evaluator without regularity data; only heuristic Dini evidence is available."""

    func: Callable[[np.ndarray], np.ndarray]
    kind = "sampled"
    certified = False

    def values(self, points):
        return np.asarray(self.func(points), dtype=float).reshape(points.shape[0])

    def modulus(self, t):
        return math.inf

    def dini_integral(self):
        return math.inf


class PotentialFamily:
    """The weights h_1..h_d; index j is 1-based on the public API."""

    def __init__(self, potentials: Sequence[Potential]):
        self.potentials = tuple(potentials)
        if not self.potentials:
            raise InvalidInputError("potential family is empty")

    @classmethod
    def constant(cls, *values: float) -> "PotentialFamily":
        return cls([ConstantPotential(float(v)) for v in values])

    def __len__(self):
        return len(self.potentials)

    @property
    def d(self) -> int:
        return len(self.potentials)

    @property
    def regularity_class(self) -> str:
        return "certified-Dini" if all(p.certified for p in self.potentials) else "heuristic"

    @property
    def is_constant(self) -> bool:
        return all(isinstance(p, ConstantPotential) for p in self.potentials)

    def values(self, points) -> np.ndarray:
        """h_j at each point, shape (d, N); raises on non-finite or non-positive values."""
        pts = np.asarray(points, dtype=float)
        out = np.stack([p.values(pts) for p in self.potentials])
        if not np.all(np.isfinite(out)):
            raise InvalidPotentialError("potential evaluated to a non-finite value")
        if np.any(out <= 0):
            raise InvalidPotentialError("potential must be strictly positive")
        return out

    def values_at_images(self, images: np.ndarray) -> np.ndarray:
        """h_j(gamma_j(y)) for images of shape (d, N, k); returns (d, N)."""
        out = np.stack([p.values(images[j]) for j, p in enumerate(self.potentials)])
        if not np.all(np.isfinite(out)) or np.any(out <= 0):
            raise InvalidPotentialError("potential must be finite and strictly positive")
        return out

    def lower_bounds(self, grid: AttractorGrid) -> np.ndarray:
        """Per-potential lower bound of h_j on K: grid minimum minus the modulus at the grid error."""
        vals = self.values(grid.points)
        slack = np.array([p.modulus(grid.error_bound) for p in self.potentials])
        slack = np.where(np.isfinite(slack), slack, 0.0)
        return vals.min(axis=1) - slack

    def upper_bounds(self, grid: AttractorGrid) -> np.ndarray:
        vals = self.values(grid.points)
        slack = np.array([p.modulus(grid.error_bound) for p in self.potentials])
        slack = np.where(np.isfinite(slack), slack, 0.0)
        return vals.max(axis=1) + slack

    def log_lipschitz(self, grid: AttractorGrid) -> float:
        """Bound on the Lipschitz constant of every ln h_j on K (inf if unknown)."""
        lows = self.lower_bounds(grid)
        best = 0.0
        for p, low in zip(self.potentials, lows):
            if isinstance(p, ConstantPotential):
                continue
            if isinstance(p, AffinePotential):
                best = max(best, p.lipschitz / low)
            elif isinstance(p, HolderPotential) and p.exponent == 1:
                best = max(best, p.constant / low)
            else:
                return math.inf
        return best

    def to_dict(self) -> list[dict]:
        return [p.to_dict() for p in self.potentials]


def eval_h(H: PotentialFamily, j: int, x) -> float:
    if not 1 <= j <= H.d:
        raise InvalidInputError(f"potential index {j} outside 1..{H.d}")
    pts = np.asarray(x, dtype=float).reshape(1, -1)
    value = float(H.potentials[j - 1].values(pts)[0])
    if not math.isfinite(value) or value <= 0:
        raise InvalidPotentialError(f"h_{j}({pts[0].tolist()}) = {value} is not a positive number")
    return value


@dataclass
class CompatibilityReport:
    passed: bool
    compat_tol: float
    checked: int
    # (x, k, l, |h_k(x) - h_l(x)|)
    violations: list = field(default_factory=list)

    def to_dict(self):
        return {
            "passed": self.passed,
            "compat_tol": self.compat_tol,
            "checked": self.checked,
            "violations": [
                {"x": list(x), "k": k, "l": l, "difference": diff} for x, k, l, diff in self.violations
            ],
        }


def check_compatibility(H: PotentialFamily, branch: BranchData,
                        compat_tol: float = DEFAULT_COMPAT_TOL) -> CompatibilityReport:
    """h_k(x) == h_l(x) at every branched point x = gamma_k(y) = gamma_l(y)."""
    violations = []
    for x, k, l in branch.coincidences:
        diff = abs(eval_h(H, k, x) - eval_h(H, l, x))
        if diff > compat_tol:
            violations.append((tuple(x), k, l, diff))
    return CompatibilityReport(not violations, compat_tol, len(branch.coincidences), violations)


def check_margin(H: PotentialFamily, grid: AttractorGrid) -> float:
    """min_j ln(inf_K h_j), using grid values minus the modulus at the grid resolution."""
    if len(grid) == 0:
        raise InvalidInputError("grid is empty")
    low = H.lower_bounds(grid)
    if np.any(low <= 0):
        raise PotentialNotAboveOneError("potential lower bound is not positive on K")
    c = float(np.min(np.log(low)))
    if c <= 0:
        raise PotentialNotAboveOneError(f"min ln h = {c:.6g} <= 0; every h_j must exceed 1 on K")
    return c


@dataclass
class PotentialRegularity:
    kind: str
    scales: list
    omega: list
    dini_integral: float
    certified: bool


@dataclass
class RegularityReport:
    entries: list

    @property
    def certified(self) -> bool:
        return all(e.certified for e in self.entries)

    def to_dict(self):
        return {
            "certified": self.certified,
            "entries": [e.__dict__ for e in self.entries],
        }


def _sampled_modulus(p: Potential, points: np.ndarray, scales: np.ndarray, max_points: int):
    stride = max(1, int(math.ceil(points.shape[0] / max_points)))
    pts = points[::stride]
    vals = p.values(pts)
    iu = np.triu_indices(pts.shape[0], k=1)
    dist = np.linalg.norm(pts[iu[0]] - pts[iu[1]], axis=1)
    jumps = np.abs(vals[iu[0]] - vals[iu[1]])
    order = np.argsort(dist)
    dist, running = dist[order], np.maximum.accumulate(jumps[order])
    pos = np.searchsorted(dist, scales, side="right")
    return np.where(pos > 0, running[np.maximum(pos - 1, 0)], 0.0)


def dini_report(H: PotentialFamily, grid: AttractorGrid, scales: Sequence[float] | None = None,
                max_sample_points: int = 1500) -> RegularityReport:
    """Modulus of continuity at the given scales and a Dini-integral estimate per potential.

    Constant, affine and declared-Hoelder kinds are certified analytically.
    Sampled potentials get an upper step-sum over the scales, which is
    evidence only.
    """
    if scales is None:
        scales = [grid.ifs.ambient_diameter * 2.0**-i for i in range(21)]
    scales = np.asarray(scales, dtype=float)
    if scales.size == 0 or np.any(np.diff(scales) >= 0) or scales[-1] <= 0:
        raise InvalidInputError("scales must be positive and strictly decreasing")
    entries = []
    for p in H.potentials:
        if p.certified:
            omega = [float(p.modulus(t)) for t in scales]
            entries.append(PotentialRegularity(p.kind, scales.tolist(), omega,
                                               float(p.dini_integral()), True))
            continue
        omega = _sampled_modulus(p, grid.points, scales, max_sample_points)
        top = max(1.0, scales[0])
        integral = float(omega[0] * math.log(top / scales[0]))
        integral += float(np.sum(omega[:-1] * np.log(scales[:-1] / scales[1:])))
        entries.append(PotentialRegularity(p.kind, scales.tolist(), omega.tolist(), integral, False))
    return RegularityReport(entries)
