"""Ruelle operators L and S, their duals on measures, and the RPF eigenpair.

Functions are discretised by nearest-point collocation on an attractor grid:
the image gamma_j(y) of a grid point is read at its nearest grid point.
Measures keep exact atom positions unless stated otherwise.  ``beta`` may be
``math.inf``; every h_j exceeds 1, so h_j**-inf is 0.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .discrete import DiscreteMeasure, GridFunction
from .errors import (
    CompatibilityError,
    ConvergenceError,
    GridResolutionError,
    InvalidInputError,
    ResourceError,
)
from .ifs import (
    DEFAULT_BRANCH_TOL,
    IFS,
    AttractorGrid,
    BranchData,
    as_points,
    attractor_grid,
    branch_sets,
    multiplicities,
)
from .potential import (
    DEFAULT_COMPAT_TOL,
    PotentialFamily,
    check_compatibility,
    check_margin,
)
from .suite import default_suite

DEFAULT_WORD_CAP = 2**24
DEFAULT_ATOM_CAP = 2**23


def default_depth(d: int, max_depth: int = 14, word_cap: int = 2**20) -> int:
    """Deepest grid not exceeding ``max_depth`` with d**depth <= word_cap."""
    depth = 0
    while depth < max_depth and d ** (depth + 1) <= word_cap:
        depth += 1
    return depth


def _weights_from_logs(logh: np.ndarray, beta: float) -> np.ndarray:
    if math.isinf(beta) and beta > 0:
        return np.zeros_like(logh)
    return np.exp(-beta * logh)


class RuelleEngine:
    """Precomputed grid images, potentials and multiplicities for one (IFS, H) pair.

    Construction validates H: compatibility at the branched points and
    min ln h > 0 on K.  The engine is read-only afterwards.
    """

    def __init__(self, ifs: IFS, H: PotentialFamily, grid: AttractorGrid | None = None,
                 branch: BranchData | None = None, *, depth: int | None = None,
                 compat_tol: float = DEFAULT_COMPAT_TOL, branch_tol: float = DEFAULT_BRANCH_TOL,
                 word_cap: int = DEFAULT_WORD_CAP, atom_cap: int = DEFAULT_ATOM_CAP):
        if H.d != ifs.d:
            raise InvalidInputError(f"{H.d} potentials given for {ifs.d} maps")
        if grid is None:
            grid = attractor_grid(ifs, default_depth(ifs.d) if depth is None else depth)
        elif grid.ifs is not ifs:
            raise InvalidInputError("grid was built for a different IFS")
        if branch is None:
            branch = branch_sets(ifs, grid, branch_tol)
        self.ifs, self.H, self.grid, self.branch = ifs, H, grid, branch
        self.branch_tol = branch_tol
        self.word_cap = word_cap
        self.atom_cap = atom_cap

        self.compatibility = check_compatibility(H, branch, compat_tol)
        if not self.compatibility.passed:
            x, k, l, diff = self.compatibility.violations[0]
            raise CompatibilityError(
                f"h_{k} and h_{l} differ by {diff:.3g} at the branched point {list(x)}"
            )
        self.margin = check_margin(H, grid)
        self.min_h = math.exp(self.margin)
        self.regularity = H.regularity_class

        images = ifs.images(grid.points)
        self.images = images
        idx, dist = grid.nearest(images.reshape(-1, ifs.dimension))
        limit = grid.error_bound * (1 + 1e-9) + grid.dedup_tol
        if dist.max() > limit:
            raise GridResolutionError(
                f"grid image at distance {dist.max():.3g} from the grid exceeds the bound {limit:.3g}"
            )
        self.image_index = idx.reshape(ifs.d, len(grid))
        self.log_h = np.log(H.values_at_images(images))
        self.mult = multiplicities(images, branch_tol)
        self._cached_beta = None
        self._cached_weights = None

    @property
    def d(self) -> int:
        return self.ifs.d

    def __repr__(self):
        return f"RuelleEngine({self.ifs!r}, grid={self.grid!r})"

    def weights(self, beta: float) -> np.ndarray:
        """h_j(gamma_j(y))**-beta on the grid, shape (d, N)."""
        if beta != self._cached_beta:
            self._cached_weights = _weights_from_logs(self.log_h, beta)
            self._cached_beta = beta
        return self._cached_weights

    def suite(self, n_random: int = 10, seed: int = 0):
        return default_suite(self.grid, self.branch, n_random, seed)

    # raw vector kernels, summed over j in index order
    def _L(self, values: np.ndarray, W: np.ndarray) -> np.ndarray:
        out = np.zeros(len(self.grid))
        for j in range(self.d):
            out += W[j] * values[self.image_index[j]]
        return out

    def _S(self, values: np.ndarray, W: np.ndarray) -> np.ndarray:
        out = np.zeros(len(self.grid))
        for j in range(self.d):
            out += W[j] / self.mult[j] * values[self.image_index[j]]
        return out

    def _L_dual(self, nu: np.ndarray, W: np.ndarray) -> np.ndarray:
        """Exact dual pushforward of a grid-supported measure, snapped back to the grid."""
        out = np.zeros(len(self.grid))
        for j in range(self.d):
            out += np.bincount(self.image_index[j], weights=W[j] * nu, minlength=len(self.grid))
        return out


def _grid_values(engine: RuelleEngine, a) -> np.ndarray:
    if isinstance(a, GridFunction):
        if a.grid is not engine.grid:
            raise InvalidInputError("grid function does not live on the engine grid")
        return a.values
    values = np.asarray(a, dtype=float)
    if values.shape != (len(engine.grid),):
        raise InvalidInputError("values do not match the engine grid")
    return values


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if math.isnan(beta) or beta == -math.inf:
        raise InvalidInputError(f"invalid beta {beta}")
    return beta


def apply_L(engine: RuelleEngine, a, beta: float) -> GridFunction:
    """(L a)(y) = sum_j h_j^-beta(gamma_j y) a(gamma_j y) on the grid."""
    W = engine.weights(_check_beta(beta))
    return GridFunction(engine.grid, engine._L(_grid_values(engine, a), W))


def apply_S(engine: RuelleEngine, a, beta: float) -> GridFunction:
    """As apply_L with each term divided by the multiplicity e(gamma_j y, y)."""
    W = engine.weights(_check_beta(beta))
    return GridFunction(engine.grid, engine._S(_grid_values(engine, a), W))


def word_sum_Ln(engine: RuelleEngine, a: GridFunction, y, n: int, beta: float,
                cap: int | None = None) -> float:
    """L^n(a)(y) summed over all d**n words at exact image points.

    Only the final evaluation of ``a`` reads the nearest grid point; weights
    use the exact path y -> gamma_{i1}(y) -> gamma_{i2}(gamma_{i1}(y)) -> ...
    """
    beta = _check_beta(beta)
    cap = engine.word_cap if cap is None else cap
    if n < 0:
        raise InvalidInputError("n must be >= 0")
    if engine.d**n > cap:
        raise ResourceError(f"{engine.d}**{n} words exceed the cap of {cap}")
    pts = as_points(y, engine.ifs.dimension)[:1]
    logw = np.zeros(1)
    for _ in range(n):
        imgs = engine.ifs.images(pts)
        logh = np.log(engine.H.values_at_images(imgs))
        if math.isinf(beta):
            return 0.0
        logw = (logw[None, :] - beta * logh).reshape(-1)
        pts = imgs.reshape(-1, engine.ifs.dimension)
    return float(np.sum(np.exp(logw) * a.nearest_values(pts)))


def interpolation_bound(engine: RuelleEngine, y, n: int, beta: float, lip_a: float,
                        sup_a: float) -> float:
    """Bound on |apply_L^n(a)(y) - word_sum_Ln(a, y, n)| at a grid point y.

    ``a`` must be sampled from a function with Lipschitz constant ``lip_a``
    and sup norm ``sup_a``.  Snapped paths stay within delta / (1 - c) of
    the exact ones, which perturbs the leaf value and each log-weight.
    """
    delta = engine.grid.error_bound
    c = engine.ifs.contraction
    drift = delta / (1 - c)
    lam = engine.H.log_lipschitz(engine.grid)
    x = n * beta * lam * drift if n and beta else 0.0
    mass = word_sum_Ln(engine, GridFunction.constant(engine.grid), y, n, beta)
    return mass * (math.exp(x) * lip_a * (delta + drift) + sup_a * math.expm1(x))


def _pushforward(engine: RuelleEngine, mu: DiscreteMeasure, beta: float, divide: bool):
    """Images and weights of every atom under every map: arrays (d*M, k) and (d*M,)."""
    d, k = engine.d, engine.ifs.dimension
    if len(mu) * d > engine.atom_cap:
        raise ResourceError(
            f"{len(mu) * d} atoms exceed the cap of {engine.atom_cap}; use a larger merge tolerance"
        )
    imgs = engine.ifs.images(mu.points) if len(mu) else np.zeros((d, 0, k))
    W = _weights_from_logs(np.log(engine.H.values_at_images(imgs)), beta) if len(mu) else np.zeros((d, 0))
    w = W * mu.weights[None, :]
    if divide:
        w = w / multiplicities(imgs, engine.branch_tol)
    return imgs.reshape(-1, k), w.reshape(-1)


def dual_apply(engine: RuelleEngine, mu: DiscreteMeasure, beta: float,
               merge_tol: float | None = None) -> DiscreteMeasure:
    """L* mu: each atom (x, w) becomes atoms (gamma_j x, w h_j^-beta(gamma_j x))."""
    beta = _check_beta(beta)
    tol = engine.grid.dedup_tol if merge_tol is None else merge_tol
    pts, w = _pushforward(engine, mu, beta, divide=False)
    return DiscreteMeasure(pts, w, tol)


def apply_F(engine: RuelleEngine, mu: DiscreteMeasure, beta: float,
            merge_tol: float | None = None) -> DiscreteMeasure:
    """F mu = Tr_mu(. e^{-beta D}): dual_apply with each term divided by e(gamma_j x, x)."""
    beta = _check_beta(beta)
    tol = engine.grid.dedup_tol if merge_tol is None else merge_tol
    if math.isinf(beta):
        return DiscreteMeasure.zero(engine.ifs.dimension, tol)
    pts, w = _pushforward(engine, mu, beta, divide=True)
    return DiscreteMeasure(pts, w, tol)


def integrate_S(engine: RuelleEngine, mu: DiscreteMeasure, a, beta: float) -> float:
    """int S(a) d mu with ``a`` evaluated exactly at the atom images; 0 at beta = inf."""
    beta = _check_beta(beta)
    if math.isinf(beta) or len(mu) == 0:
        return 0.0
    pts, w = _pushforward(engine, mu, beta, divide=True)
    return float(np.dot(w, np.asarray(a(pts), dtype=float).reshape(-1)))


def integrate_dual(engine: RuelleEngine, mu: DiscreteMeasure, a, beta: float) -> float:
    """<L* mu, a> without merging atoms."""
    beta = _check_beta(beta)
    if len(mu) == 0:
        return 0.0
    pts, w = _pushforward(engine, mu, beta, divide=False)
    return float(np.dot(w, np.asarray(a(pts), dtype=float).reshape(-1)))


@dataclass
class SpectralRadius:
    beta: float
    rho: float
    k: GridFunction
    residual: float
    iterations: int
    rho_lower: float
    rho_upper: float


def spectral_radius(engine: RuelleEngine, beta: float, max_iter: int = 10000,
                    rtol: float = 1e-11, init=None) -> SpectralRadius:
    """Power iteration a <- L a / ||L a||_inf from a = 1 (or a warm start).

    Stops when the Collatz-Wielandt bounds min(La/a) <= rho <= max(La/a)
    agree to ``rtol`` relative.
    """
    beta = _check_beta(beta)
    a = np.ones(len(engine.grid)) if init is None else np.array(_grid_values(engine, init), dtype=float)
    if not np.any(a > 0):
        raise ConvergenceError("power iteration needs a non-zero non-negative start vector")
    if np.any(a < 0):
        raise InvalidInputError("power iteration start vector must be non-negative")
    a = a / a.max()
    W = engine.weights(beta)
    history = []
    for it in range(1, max_iter + 1):
        La = engine._L(a, W)
        norm = float(La.max())
        if norm == 0.0:
            zero = GridFunction(engine.grid, np.ones(len(engine.grid)))
            return SpectralRadius(beta, 0.0, zero, 0.0, it, 0.0, 0.0)
        positive = a > 0
        ratio = La[positive] / a[positive]
        lo = float(ratio.min()) if np.all(positive) else 0.0
        hi = float(ratio.max())
        gap = (hi - lo) / hi
        history.append(gap)
        a = La / norm
        if gap <= rtol:
            break
    else:
        raise ConvergenceError(
            f"power iteration did not converge in {max_iter} steps (gap {history[-1]:.3g})", history
        )
    Lk = engine._L(a, W)
    rho = float(Lk.max())
    residual = float(np.max(np.abs(Lk - rho * a)))
    return SpectralRadius(beta, rho, GridFunction(engine.grid, a, name="k"), residual, it, lo, hi)


@dataclass
class Eigenmeasure:
    tau: DiscreteMeasure
    residual: float
    iterations: int
    refine_steps: int


def eigenmeasure(engine: RuelleEngine, beta: float, rho: float, k: GridFunction,
                 rtol: float = 1e-12, max_iter: int = 10000, suite=None, x0=None,
                 refine_atom_cap: int = 2**21, max_refine: int = 8) -> Eigenmeasure:
    """Dual iteration mu <- L* mu / rho from a point mass, then exact refinement.

    The iteration runs on the grid (exact images snapped to their nearest grid
    point) until the integrals of the test suite change by less than
    ``rtol``.  The limit is then pushed forward exactly, without snapping,
    while the atom count stays below ``refine_atom_cap``.  ``residual`` is
    max over the suite of |<L* tau, a> - rho <tau, a>| for the probability
    measure tau.
    """
    beta = _check_beta(beta)
    if not rho > 0:
        raise InvalidInputError("rho must be positive")
    if np.any(k.values <= 0):
        raise InvalidInputError("eigenfunction must be strictly positive")
    if suite is None:
        suite = engine.suite().positives
    N = len(engine.grid)
    if x0 is None:
        start = int(engine.grid.nearest(engine.grid.base[None, :])[0][0])
    else:
        start = int(engine.grid.nearest(as_points(x0, engine.ifs.dimension))[0][0])
    W = engine.weights(beta)
    F = np.stack([f.values for f in suite])
    nu = np.zeros(N)
    nu[start] = 1.0
    prev = F @ nu
    history = []
    for it in range(1, max_iter + 1):
        nu = engine._L_dual(nu, W) / rho
        nu /= nu.sum()
        cur = F @ nu
        change = float(np.max(np.abs(cur - prev)))
        history.append(change)
        prev = cur
        if change < rtol:
            break
    else:
        raise ConvergenceError(f"dual iteration did not converge in {max_iter} steps", history)
    keep = nu > 0
    tau = DiscreteMeasure(engine.grid.points[keep], nu[keep], engine.grid.dedup_tol, merge=False)
    steps = 0
    while steps < max_refine and len(tau) * engine.d <= refine_atom_cap:
        tau = dual_apply(engine, tau, beta).normalized()
        steps += 1
    residual = max(abs(integrate_dual(engine, tau, f, beta) - rho * tau.integrate(f)) for f in suite)
    return Eigenmeasure(tau, residual, it, steps)


@dataclass
class RpfSolution:
    """Leading eigenpair of L at one beta: L k = rho k, L* tau = rho tau, tau(k) = 1."""

    beta: float
    rho: float
    k: GridFunction
    tau: DiscreteMeasure
    residual_k: float
    residual_tau: float
    normalization: float
    rho_bounds: tuple = (math.nan, math.nan)
    regularity: str = "certified-Dini"
    iterations: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        pts, w = self.tau.sorted_atoms()
        return {
            "beta": self.beta,
            "rho": self.rho,
            "rho_bounds": list(self.rho_bounds),
            "residual_k": self.residual_k,
            "residual_tau": self.residual_tau,
            "normalization": self.normalization,
            "regularity": self.regularity,
            "iterations": self.iterations,
            "k": {"points": self.k.grid.points.tolist(), "values": self.k.values.tolist()},
            "tau": {"atoms": [[p.tolist(), float(v)] for p, v in zip(pts, w)]},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def rpf(engine: RuelleEngine, beta: float, max_iter: int = 10000, rtol: float = 1e-11,
        measure_rtol: float = 1e-12, suite=None, **measure_opts) -> RpfSolution:
    """Spectral radius, eigenfunction and eigenmeasure, with k rescaled so tau(k) = 1."""
    sr = spectral_radius(engine, beta, max_iter=max_iter, rtol=rtol)
    em = eigenmeasure(engine, beta, sr.rho, sr.k, rtol=measure_rtol, max_iter=max_iter,
                      suite=suite, **measure_opts)
    norm = em.tau.integrate(sr.k)
    k = GridFunction(engine.grid, sr.k.values / norm, name="k")
    return RpfSolution(beta, sr.rho, k, em.tau, sr.residual, em.residual, norm,
                       (sr.rho_lower, sr.rho_upper), engine.regularity,
                       {"power": sr.iterations, "dual": em.iterations, "refine": em.refine_steps})
