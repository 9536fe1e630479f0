"""The rho(beta) curve and the critical inverse temperature rho(beta_c) = 1."""
from __future__ import annotations

import copy
import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .errors import ConvergenceError, InvalidInputError, NumericalInstabilityError
from .ruelle import RuelleEngine, spectral_radius

DEFAULT_BETA_TOL = 1e-8


@dataclass
class RhoSample:
    beta: float
    rho: float
    residual: float
    error: str | None = None


@dataclass
class RhoCurve:
    samples: list
    # (i, i + 1) for adjacent converged samples where rho increases beyond noise
    monotonicity_violations: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["beta", "rho", "residual"])
            for s in self.samples:
                writer.writerow([repr(s.beta), repr(s.rho), repr(s.residual)])

    def to_dict(self) -> dict:
        return {
            "samples": [s.__dict__ for s in self.samples],
            "monotonicity_violations": [list(p) for p in self.monotonicity_violations],
        }


def _noise(engine, sample) -> float:
    return sample.residual + 1e-12 * max(1.0, sample.rho)


def rho_curve(engine: RuelleEngine, betas, threads: int = 1, **opts) -> RhoCurve:
    """spectral_radius at each beta; betas must be finite and strictly increasing."""
    betas = [float(b) for b in betas]
    if any(not math.isfinite(b) for b in betas):
        raise InvalidInputError("betas must be finite")
    if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
        raise InvalidInputError("betas must be strictly increasing")

    def one(eng, beta):
        try:
            sr = spectral_radius(eng, beta, **opts)
            return RhoSample(beta, sr.rho, sr.residual)
        except ConvergenceError as exc:
            return RhoSample(beta, math.nan, math.nan, str(exc))

    if threads == 1 or len(betas) < 2:
        samples = [one(engine, b) for b in betas]
    else:
        # the per-beta weight cache lives on the engine, so each task gets a shallow copy
        with ThreadPoolExecutor(max_workers=threads or None) as pool:
            samples = list(pool.map(lambda b: one(copy.copy(engine), b), betas))
    violations = []
    for i, (s1, s2) in enumerate(zip(samples, samples[1:])):
        if s1.error or s2.error:
            continue
        if s2.rho > s1.rho + _noise(engine, s1) + _noise(engine, s2):
            violations.append((i, i + 1))
    return RhoCurve(samples, violations)


@dataclass
class CriticalResult:
    beta_c: float
    bracket: tuple
    rho_at_beta_c: float
    iterations: int
    tol: float

    def to_dict(self) -> dict:
        return {
            "beta_c": self.beta_c,
            "bracket": list(self.bracket),
            "rho_at_beta_c": self.rho_at_beta_c,
            "iterations": self.iterations,
            "tol": self.tol,
        }


def beta_critical(engine: RuelleEngine, tol: float = DEFAULT_BETA_TOL, max_iter: int = 10000,
                  rtol: float = 1e-11) -> CriticalResult:
    """Bisection for log rho(beta) = 0 on [0, log d / log min h].

    At 0, rho = d > 1; at the upper end rho <= d (min h)^-beta <= 1.  Each
    evaluation warm-starts from the previous eigenvector.
    """
    d = engine.d
    lo, hi = 0.0, math.log(d) / engine.margin
    opts = dict(max_iter=max_iter, rtol=rtol)
    r_lo = spectral_radius(engine, lo, **opts)
    r_hi = spectral_radius(engine, hi, init=r_lo.k, **opts)
    slack = 1e-9
    if r_lo.rho < d * (1 - slack) or r_hi.rho > 1 + tol:
        raise NumericalInstabilityError(
            f"invalid bracket: rho({lo}) = {r_lo.rho}, rho({hi:.6g}) = {r_hi.rho}"
        )
    if r_hi.rho == 1.0:
        return CriticalResult(hi, (lo, hi), r_hi.rho, 0, tol)
    warm = r_lo.k
    iterations = 0
    rho_lo, rho_hi = r_lo.rho, r_hi.rho
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        sr = spectral_radius(engine, mid, init=warm, **opts)
        warm = sr.k
        iterations += 1
        noise = sr.residual + 1e-12
        if sr.rho > rho_lo + noise or sr.rho < rho_hi - noise:
            raise NumericalInstabilityError(
                f"rho({mid:.12g}) = {sr.rho!r} lies outside [{rho_hi!r}, {rho_lo!r}]"
            )
        if sr.rho > 1.0:
            lo, rho_lo = mid, sr.rho
        else:
            hi, rho_hi = mid, sr.rho
    beta_c = 0.5 * (lo + hi)
    rho_c = spectral_radius(engine, beta_c, init=warm, **opts).rho
    return CriticalResult(beta_c, (lo, hi), rho_c, iterations, tol)
