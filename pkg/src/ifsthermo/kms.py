"""KMS regimes and state measures for the generalized gauge action.

States on C(K) are discrete probability measures.  A state satisfies (K2)
when int S(a) d tau <= tau(a) for positive a, and (K1) when equality holds
for every a vanishing on the branched points B.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .critical import CriticalResult
from .discrete import DiscreteMeasure
from .errors import InconsistencyError, InvalidInputError, RegimeError
from .ifs import AttractorGrid, BranchData, EscapeCertificate, as_points, check_escape_condition
from .ruelle import (
    RpfSolution,
    RuelleEngine,
    apply_F,
    integrate_S,
    spectral_radius,
)

DEFAULT_SERIES_TOL = 1e-10
DEFAULT_EXACT_ATOM_CAP = 2**16


class RegimeTag(enum.Enum):
    SUBCRITICAL = "subcritical"
    CRITICAL = "critical"
    SUPERCRITICAL = "supercritical"


class Algebra(enum.Enum):
    TOEPLITZ = "toeplitz"
    CUNTZ_PIMSNER = "cuntz-pimsner"

    @classmethod
    def parse(cls, value) -> "Algebra":
        if isinstance(value, cls):
            return value
        aliases = {"toeplitz": cls.TOEPLITZ, "t": cls.TOEPLITZ, "cuntz-pimsner": cls.CUNTZ_PIMSNER,
                   "cuntzpimsner": cls.CUNTZ_PIMSNER, "o": cls.CUNTZ_PIMSNER}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise InvalidInputError(f"unknown algebra {value!r}") from None


def _beta_json(beta):
    return "inf" if math.isinf(beta) else beta


@dataclass(frozen=True)
class Regime:
    tag: RegimeTag
    beta: float
    beta_c: float
    band: float
    # nonexistence / uniqueness claims need the escape condition
    conditional: bool = False

    def to_dict(self):
        return {"tag": self.tag.value, "beta": _beta_json(self.beta), "beta_c": self.beta_c,
                "band": self.band, "conditional": self.conditional}


def classify_regime(beta: float, crit: CriticalResult, band: float | None = None,
                    escape: EscapeCertificate | None = None) -> Regime:
    """Supercritical above beta_c + band (or at infinity), critical within the band."""
    beta = float(beta)
    if math.isnan(beta) or beta <= 0:
        raise InvalidInputError("beta must lie in (0, inf]")
    band = 10 * crit.tol if band is None else band
    if math.isinf(beta) or beta > crit.beta_c + band:
        tag = RegimeTag.SUPERCRITICAL
    elif abs(beta - crit.beta_c) <= band:
        tag = RegimeTag.CRITICAL
    else:
        tag = RegimeTag.SUBCRITICAL
    conditional = tag is not RegimeTag.SUPERCRITICAL and not (escape is not None and escape.holds)
    return Regime(tag, beta, crit.beta_c, band, conditional)


@dataclass
class KmsStateMeasure:
    beta: float
    algebra: Algebra
    type: str                      # "finite" | "infinite"
    measure: DiscreteMeasure       # probability measure tau
    seed: DiscreteMeasure | None
    normalization: float           # omega(1) for finite type, 1 otherwise
    truncation_depth: int
    tail_bound: float
    unnormalized: DiscreteMeasure | None = None
    exact_depth: int = 0           # series terms beyond this were projected onto the grid

    def to_dict(self) -> dict:
        pts, w = self.measure.sorted_atoms()
        return {
            "beta": _beta_json(self.beta),
            "algebra": self.algebra.value,
            "type": self.type,
            "atoms": [[p.tolist(), float(v)] for p, v in zip(pts, w)],
            "normalization": self.normalization,
            "truncation_depth": self.truncation_depth,
            "tail_bound": self.tail_bound,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _snap(engine: RuelleEngine, mu: DiscreteMeasure) -> np.ndarray:
    """Move every atom to its nearest grid point; returns a weight vector on the grid."""
    nu = np.zeros(len(engine.grid))
    if len(mu):
        idx, _ = engine.grid.nearest(mu.points)
        nu += np.bincount(idx, weights=mu.weights, minlength=len(engine.grid))
    return nu


def _grid_measure(engine: RuelleEngine, nu: np.ndarray) -> DiscreteMeasure:
    keep = nu > 0
    return DiscreteMeasure(engine.grid.points[keep], nu[keep], engine.grid.dedup_tol, merge=False)


def _F_grid(engine: RuelleEngine, nu: np.ndarray, beta: float) -> np.ndarray:
    W = engine.weights(beta)
    out = np.zeros(len(engine.grid))
    for j in range(engine.d):
        out += np.bincount(engine.image_index[j], weights=W[j] / engine.mult[j] * nu,
                           minlength=len(engine.grid))
    return out


def exact_depth_for(engine: RuelleEngine, exact_atom_cap: int) -> int:
    return int(math.floor(math.log(exact_atom_cap) / math.log(engine.d) + 1e-12))


def F_series_terms(engine: RuelleEngine, seed: DiscreteMeasure, beta: float, N: int,
                   exact_atom_cap: int = DEFAULT_EXACT_ATOM_CAP):
    """Yield F^n(seed) for n = 0..N.

    Terms up to n0 = floor(log_d exact_atom_cap) keep exact atoms; later
    terms are projected onto the grid after each step.  n0 depends only on d
    and the cap, so every term is linear in the seed.
    """
    n0 = exact_depth_for(engine, exact_atom_cap)
    term = seed
    nu = None
    yield term
    for n in range(1, N + 1):
        if n <= n0:
            term = apply_F(engine, term, beta)
            yield term
        else:
            nu = _snap(engine, term) if nu is None else nu
            nu = _F_grid(engine, nu, beta)
            yield _grid_measure(engine, nu)


def _truncation(engine: RuelleEngine, beta: float, series_tol: float, sr=None):
    """Smallest N with tail bound < series_tol, and that bound."""
    r = engine.d * engine.min_h ** (-beta)
    if r < 1:
        const = 1.0
    else:
        sr = spectral_radius(engine, beta) if sr is None else sr
        r = sr.rho
        const = float(sr.k.values.max() / sr.k.values.min())
    N = 0
    while const * r ** (N + 1) / (1 - r) >= series_tol:
        N += 1
    return N, const * r ** (N + 1) / (1 - r)


def finite_type_state(engine: RuelleEngine, beta: float, seed: DiscreteMeasure,
                      series_tol: float = DEFAULT_SERIES_TOL, algebra=Algebra.TOEPLITZ,
                      crit: CriticalResult | None = None, band: float | None = None,
                      exact_atom_cap: int = DEFAULT_EXACT_ATOM_CAP) -> KmsStateMeasure:
    """tau = omega / omega(1) with omega = sum_{n<=N} F^n(seed).

    N is the first depth whose geometric tail bound drops below
    ``series_tol``.  At beta = inf the state is the seed itself.
    """
    algebra = Algebra.parse(algebra)
    if abs(seed.total_mass - 1) > 1e-10:
        raise InvalidInputError("seed must be a probability measure")
    if math.isinf(beta):
        return KmsStateMeasure(beta, algebra, "finite", seed, seed, seed.total_mass, 0, 0.0, seed)
    sr = None
    if crit is not None:
        regime = classify_regime(beta, crit, band)
        if regime.tag is not RegimeTag.SUPERCRITICAL:
            raise RegimeError(f"finite-type states need beta > beta_c; regime is {regime.tag.value}")
    else:
        sr = spectral_radius(engine, beta)
        if not sr.rho < 1 - 10 * sr.residual:
            raise RegimeError(f"rho({beta}) = {sr.rho:.12g} >= 1: not supercritical")
    N, tail = _truncation(engine, beta, series_tol, sr)
    terms = list(F_series_terms(engine, seed, beta, N, exact_atom_cap))
    omega = DiscreteMeasure(np.concatenate([t.points for t in terms]),
                            np.concatenate([t.weights for t in terms]), engine.grid.dedup_tol)
    norm = omega.total_mass
    return KmsStateMeasure(beta, algebra, "finite", omega.scaled(1 / norm), seed, norm, N, tail,
                           omega, exact_depth_for(engine, exact_atom_cap))


def critical_state(engine: RuelleEngine, rpf: RpfSolution, algebra=Algebra.TOEPLITZ,
                   rho_tol: float = 1e-6, residual_tol: float = 1e-4,
                   c_mass_threshold: float = 1e-3) -> KmsStateMeasure:
    """The eigenmeasure at beta_c as an infinite-type state; requires tau(C) ~ 0."""
    algebra = Algebra.parse(algebra)
    if abs(rpf.rho - 1) > rho_tol:
        raise RegimeError(f"rho = {rpf.rho:.12g} is not 1 within {rho_tol}; beta is not critical")
    if rpf.residual_k > residual_tol or rpf.residual_tau > residual_tol:
        raise InconsistencyError(
            f"RPF residuals ({rpf.residual_k:.3g}, {rpf.residual_tau:.3g}) exceed {residual_tol}"
        )
    tau = rpf.tau.normalized()
    c_mass = tau.mass_near(engine.branch.branch_values, engine.branch_tol)
    if c_mass > c_mass_threshold:
        raise InconsistencyError(f"eigenmeasure puts mass {c_mass:.3g} on the branched values")
    return KmsStateMeasure(rpf.beta, algebra, "infinite", tau, None, 1.0, 0, 0.0, tau)


@dataclass
class ExtremePoints:
    points: np.ndarray
    kind: str
    annotation: str

    def to_dict(self):
        return {"points": self.points.tolist(), "kind": self.kind, "annotation": self.annotation}


def extreme_points(algebra, branch: BranchData, grid: AttractorGrid, regime: Regime) -> ExtremePoints:
    """Seeds of the extreme KMS states: B for the Cuntz-Pimsner algebra, all of K for Toeplitz."""
    algebra = Algebra.parse(algebra)
    k = grid.ifs.dimension
    if regime.tag is RegimeTag.SUBCRITICAL:
        return ExtremePoints(np.zeros((0, k)), "none", "no KMS states below beta_c")
    if regime.tag is RegimeTag.CRITICAL:
        return ExtremePoints(np.zeros((0, k)), "eigenmeasure",
                             "unique infinite-type state given by the eigenmeasure")
    if algebra is Algebra.CUNTZ_PIMSNER:
        note = "delta_b seeds for b in B" if branch.B.shape[0] else "B is empty: no KMS states"
        return ExtremePoints(branch.B.copy(), "branch-points", note)
    return ExtremePoints(grid.points, "attractor-sample", "delta_x seeds for every x in K (grid sample)")


@dataclass
class ConditionReport:
    passed: bool
    max_violation: float
    worst: str | None
    slacks: dict          # function name -> tau(a) - int S(a) d tau

    def to_dict(self):
        return self.__dict__.copy()


@dataclass
class KmsVerdict:
    k1: ConditionReport
    k2: ConditionReport
    k1_required: bool
    tol: float
    beta: float
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.k2.passed and (self.k1.passed or not self.k1_required)

    def to_dict(self):
        return {"passed": self.passed, "beta": _beta_json(self.beta), "tol": self.tol,
                "k1_required": self.k1_required, "K1": self.k1.to_dict(),
                "K2": self.k2.to_dict(), "notes": self.notes}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _slacks(engine, tau, funcs, beta):
    out = {}
    for i, f in enumerate(funcs):
        name = f.name or f"f{i}"
        out[name] = tau.integrate(f) - integrate_S(engine, tau, f, beta)
    return out


def verify_K1_K2(engine: RuelleEngine, state: KmsStateMeasure, suite=None,
                 tol: float = 1e-4) -> KmsVerdict:
    """(K2) on the positive suite; (K1) on the suite vanishing on B (required for Cuntz-Pimsner)."""
    suite = engine.suite() if suite is None else suite
    tau, beta = state.measure, state.beta
    s2 = _slacks(engine, tau, suite.positives, beta)
    v2 = {name: max(0.0, -s) for name, s in s2.items()}
    worst2 = max(v2, key=v2.get) if v2 else None
    k2 = ConditionReport(all(v <= tol for v in v2.values()), max(v2.values(), default=0.0), worst2, s2)
    s1 = _slacks(engine, tau, suite.vanishing, beta)
    v1 = {name: abs(s) for name, s in s1.items()}
    worst1 = max(v1, key=v1.get) if v1 else None
    k1 = ConditionReport(all(v <= tol for v in v1.values()), max(v1.values(), default=0.0), worst1, s1)
    notes = []
    if math.isinf(beta):
        notes.append("beta = inf: Tr(a e^{-inf D}) = 0")
    return KmsVerdict(k1, k2, state.algebra is Algebra.CUNTZ_PIMSNER, tol, beta, notes)


@dataclass
class SubcriticalReport:
    beta: float
    point: list
    terms: list           # F^n(delta_x)(k_beta), n = 0..depth
    partial_sums: list
    exponent: float       # fitted growth rate of log terms
    log_rho: float
    status: str           # "divergent" | "boundary" | "convergent"

    def to_dict(self):
        return self.__dict__.copy()


def subcritical_diagnostic(engine: RuelleEngine, beta: float, depth: int = 16, x=None,
                           boundary_tol: float = 1e-3,
                           exact_atom_cap: int = DEFAULT_EXACT_ATOM_CAP) -> SubcriticalReport:
    """Growth of F^n(delta_x)(k_beta): rate log rho(beta) > 0 means no KMS state exists.

    ``x`` defaults to an escaping point of the first branch value, whose orbit
    avoids C so that F^n and (L*)^n agree on delta_x.
    """
    sr = spectral_radius(engine, beta)
    if x is None:
        if engine.branch.C.shape[0]:
            cert = check_escape_condition(engine.ifs, engine.branch, tol=engine.branch_tol)
            found = next((w for _, w in cert.witnesses if w is not None), None)
            x = engine.grid.base if found is None else np.asarray(found)
        else:
            x = engine.grid.base
    x = as_points(x, engine.ifs.dimension)[0]
    seed = DiscreteMeasure.delta(x, tol=engine.grid.dedup_tol)
    terms = [t.integrate(sr.k) for t in F_series_terms(engine, seed, beta, depth, exact_atom_cap)]
    partial = np.cumsum(terms).tolist()
    n = np.arange(depth + 1)
    tail = n >= depth // 2
    logs = np.log(np.maximum(np.asarray(terms)[tail], np.finfo(float).tiny))
    exponent = float(np.polyfit(n[tail], logs, 1)[0]) if tail.sum() >= 2 else math.nan
    if exponent > boundary_tol:
        status = "divergent"
    elif exponent >= -boundary_tol:
        status = "boundary"
    else:
        status = "convergent"
    return SubcriticalReport(beta, x.tolist(), terms, partial, exponent, math.log(sr.rho), status)
