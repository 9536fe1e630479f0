"""Acceptance gate: one test and one PASS/FAIL line per criterion."""
import math
import time

import numpy as np
import pytest

from ifsthermo import (
    AffinePotential,
    DiscreteMeasure,
    GridFunction,
    PotentialFamily,
    RuelleEngine,
    apply_L,
    apply_S,
    beta_critical,
    critical_state,
    finite_type_state,
    interpolation_bound,
    preset,
    rpf,
    spectral_radius,
    subcritical_diagnostic,
    verify_K1_K2,
    word_sum_Ln,
)
from ifsthermo.cli import run
from oracles import CANTOR_24_BETA_C

E = math.e
LN2 = math.log(2)


@pytest.fixture
def report(capsys):
    def emit(criterion, passed, detail):
        with capsys.disabled():
            print(f"\nCRITERION {criterion}: {'PASS' if passed else 'FAIL'} - {detail}")
        assert passed, detail
    return emit


def tent_affine_family():
    return PotentialFamily([AffinePotential([1.0], 2.0), AffinePotential([2.0], 1.5)])


FIXTURES = {
    "tent h=e": lambda: (preset("tent"), PotentialFamily.constant(E, E)),
    "cantor3 h=(2,4)": lambda: (preset("cantor3"), PotentialFamily.constant(2.0, 4.0)),
    "sierpinski h=e": lambda: (preset("sierpinski"), PotentialFamily.constant(E, E, E)),
    "tent h=(2+x,1.5+2x)": lambda: (preset("tent"), tent_affine_family()),
}


@pytest.fixture(scope="module")
def solved():
    """Engine, beta_c, RPF solution and wall time for each preset fixture."""
    out = {}
    for name, make in FIXTURES.items():
        t0 = time.perf_counter()
        ifs, H = make()
        engine = RuelleEngine(ifs, H)
        crit = beta_critical(engine)
        sol = rpf(engine, crit.beta_c)
        out[name] = (engine, crit, sol, time.perf_counter() - t0)
    return out


def test_criterion_01_gauge_action(report):
    t0 = time.perf_counter()
    engine = RuelleEngine(preset("tent"), PotentialFamily.constant(E, E), depth=14)
    beta_c = beta_critical(engine).beta_c
    elapsed = time.perf_counter() - t0
    err = abs(beta_c - LN2)
    report(1, err <= 1e-6 and elapsed < 10,
           f"tent h=e beta_c={beta_c!r} |err|={err:.2e} (<=1e-6), {elapsed:.2f}s (<10s) at depth 14")


def test_criterion_02_rho_at_zero(report):
    cases = [
        ("tent h=e", preset("tent"), PotentialFamily.constant(E, E)),
        ("tent affine", preset("tent"), tent_affine_family()),
        ("sierpinski h=e", preset("sierpinski"), PotentialFamily.constant(E, E, E)),
        ("sierpinski h=(2,3,5)", preset("sierpinski"), PotentialFamily.constant(2, 3, 5)),
        ("sierpinski affine", preset("sierpinski"), PotentialFamily(
            [AffinePotential([1.0, 0.5], 2.0), AffinePotential([0.0, 3.0], 1.2),
             AffinePotential([-0.5, 0.0], 4.0)])),
    ]
    errs = []
    for name, ifs, H in cases:
        rho = spectral_radius(RuelleEngine(ifs, H), 0.0).rho
        errs.append((name, abs(rho - ifs.d)))
    worst = max(e for _, e in errs)
    report(2, worst <= 1e-4, "max |rho(0) - d| = " + f"{worst:.2e} over " + ", ".join(n for n, _ in errs))


def test_criterion_03_cantor_oracle(report, solved):
    _, crit, _, _ = solved["cantor3 h=(2,4)"]
    err = abs(crit.beta_c - CANTOR_24_BETA_C)
    report(3, err <= 1e-6, f"beta_c={crit.beta_c!r} oracle={CANTOR_24_BETA_C!r} |err|={err:.2e} (<=1e-6)")


def test_criterion_04_rpf_residuals(report, solved):
    lines, ok = [], True
    for name, (engine, crit, sol, elapsed) in solved.items():
        rk = sol.residual_k / np.max(np.abs(sol.k.values))
        good = rk <= 1e-4 and sol.residual_tau <= 1e-4 and elapsed < 60
        ok &= good
        lines.append(f"{name}: depth {engine.grid.depth}, res_k={rk:.1e} res_tau={sol.residual_tau:.1e} "
                     f"{elapsed:.1f}s")
    report(4, ok, "; ".join(lines))


def test_criterion_05_moments(report, solved):
    _, crit, sol, _ = solved["cantor3 h=(2,4)"]
    p2 = 4 ** -crit.beta_c
    m_cantor = sol.tau.integrate(lambda p: p[:, 0])
    _, _, sol_t, _ = solved["tent h=e"]
    m_tent = sol_t.tau.integrate(lambda p: p[:, 0])
    ok = abs(m_cantor - p2) <= 2e-3 and abs(m_tent - 0.5) <= 2e-3
    report(5, ok, f"cantor m={m_cantor:.6f} vs p2={p2:.6f}; tent m={m_tent:.6f} vs 0.5 (tol 2e-3)")


def test_criterion_06_operator_inequalities(report, solved):
    rng = np.random.default_rng(2024)
    beta = 0.7
    details, ok = [], True
    for name in ("tent h=e", "cantor3 h=(2,4)", "sierpinski h=e"):
        engine = solved[name][0]
        far = engine.branch.distance_to_C(engine.grid.points) > 1e-6
        violations = mismatches = 0
        for _ in range(200):
            a = rng.uniform(0, 1, len(engine.grid)) * rng.uniform(0, 10)
            S = apply_S(engine, a, beta).values
            L = apply_L(engine, a, beta).values
            violations += int(np.sum(S > L + 1e-12))
            mismatches += int(np.sum(S[far] != L[far]))
        ok &= violations == 0 and mismatches == 0
        details.append(f"{name}: {violations} S>L, {mismatches} off-C mismatches")
    report(6, ok, "; ".join(details))


def _smooth(grid):
    # Lipschitz constant 3 and sup norm 1.5 on R
    return GridFunction.from_callable(grid, lambda p: 0.5 + np.sin(3 * p[:, 0]) ** 2, "a"), 3.0, 1.5


def test_criterion_07_word_sum_oracle(report):
    rng = np.random.default_rng(7)
    beta = 0.8
    cases = [("tent affine", preset("tent"), tent_affine_family()),
             ("cantor3 h=(2,4)", preset("cantor3"), PotentialFamily.constant(2.0, 4.0))]
    worst_ratio, worst_shrink, ok = 0.0, 0.0, True
    for _, ifs, H in cases:
        c = ifs.contraction
        engines = {m: RuelleEngine(ifs, H, depth=m) for m in range(7, 16)}
        for n in range(1, 9):
            coarse, fine = engines[n + 6], engines[n + 7]
            idx = rng.choice(len(coarse.grid), size=min(50, len(coarse.grid)), replace=False)
            ys = coarse.grid.points[idx]
            for eng in (coarse, fine):
                a, lip, sup = _smooth(eng.grid)
                values = a.values
                for _ in range(n):
                    values = apply_L(eng, values, beta).values
                slots = eng.grid.nearest(ys)[0]
                for y, s in zip(ys, slots):
                    exact = word_sum_Ln(eng, a, y, n, beta)
                    bound = interpolation_bound(eng, y, n, beta, lip, sup)
                    err = abs(values[s] - exact)
                    ok &= err <= bound
                    worst_ratio = max(worst_ratio, err / bound if bound else math.inf)
            for y in ys[:10]:
                b0 = interpolation_bound(coarse, y, n, beta, 3.0, 1.5)
                b1 = interpolation_bound(fine, y, n, beta, 3.0, 1.5)
                shrink = b1 / b0
                ok &= shrink <= c * (1 + 1e-12)
                worst_shrink = max(worst_shrink, shrink / c)
    report(7, ok, f"n=1..8, depth n+6 and n+7, 50 points: max err/bound={worst_ratio:.3f} (<=1), "
                  f"max (bound ratio)/c={worst_shrink:.4f} (<=1)")


def test_criterion_08_kms_verdicts(report, solved):
    lines, ok = [], True
    for name in ("tent h=e", "cantor3 h=(2,4)", "sierpinski h=e"):
        engine, _, sol, _ = solved[name]
        v = verify_K1_K2(engine, critical_state(engine, sol, "cuntz-pimsner"), tol=1e-4)
        ok &= v.k1.passed and v.k2.passed
        lines.append(f"(a) {name} K1={v.k1.max_violation:.1e} K2={v.k2.max_violation:.1e}")
    engine, crit, _, _ = solved["tent h=e"]
    good = finite_type_state(engine, 2 * LN2, DiscreteMeasure.delta([0.5]), algebra="cuntz-pimsner",
                             crit=crit)
    vg = verify_K1_K2(engine, good, tol=1e-4)
    norm_err = abs(good.normalization - 2)
    ok &= vg.k1.passed and vg.k2.passed and norm_err <= 1e-6
    lines.append(f"(b) delta_0.5 K1={vg.k1.max_violation:.1e} K2={vg.k2.max_violation:.1e} "
                 f"|omega(1)-2|={norm_err:.1e}")
    bad = finite_type_state(engine, 2 * LN2, DiscreteMeasure.delta([0.3]), algebra="cuntz-pimsner",
                            crit=crit)
    vb = verify_K1_K2(engine, bad, tol=1e-4)
    ok &= not vb.k1.passed
    lines.append(f"(c) delta_0.3 K1 fails with violation {vb.k1.max_violation:.3f} on {vb.k1.worst}")
    report(8, ok, "; ".join(lines))


def test_criterion_09_subcritical(report, solved):
    engine = solved["tent h=e"][0]
    rep = subcritical_diagnostic(engine, 0.5)
    target = math.log(2 * math.exp(-0.5))
    ok = rep.exponent > 0 and abs(rep.exponent - target) <= 1e-2
    report(9, ok, f"exponent={rep.exponent:.6f} vs log(2e^-0.5)={target:.6f} (tol 1e-2), {rep.status}")


def test_criterion_10_convexity(report, solved):
    rng = np.random.default_rng(10)
    cases = [(solved["tent h=e"][0], 2 * LN2), (solved["tent h=(2+x,1.5+2x)"][0], 1.6)]
    worst, count = 0.0, 0
    for i in range(20):
        engine, beta = cases[i % 2]
        suite = engine.suite().all
        x, y = rng.uniform(0, 1, 2)
        t = rng.uniform(0, 1)
        sx = finite_type_state(engine, beta, DiscreteMeasure.delta([x]), 1e-10).unnormalized
        sy = finite_type_state(engine, beta, DiscreteMeasure.delta([y]), 1e-10).unnormalized
        mix = DiscreteMeasure([[x], [y]], [t, 1 - t])
        sm = finite_type_state(engine, beta, mix, 1e-10).unnormalized
        for f in suite:
            err = abs(sm.integrate(f) - (t * sx.integrate(f) + (1 - t) * sy.integrate(f)))
            worst = max(worst, err)
            count += 1
    report(10, worst <= 1e-10, f"20 seed pairs, {count} integrals: max deviation {worst:.2e} (<=1e-10)")


def test_criterion_11_determinism(report, tmp_path):
    configs = {
        "beta-c": {"ifs": "tent", "potentials": [E, E]},
        "rho-curve": {"ifs": "sierpinski", "potentials": [2.0, 3.0, 5.0], "grid": {"depth": 8},
                      "betas": [0.0, 0.5, 1.0], "threads": 2},
        "rpf": {"ifs": "cantor3", "potentials": [2.0, 4.0], "grid": {"depth": 12}},
        "kms-verify": {"ifs": "tent", "potentials": [E, E], "grid": {"depth": 12},
                       "beta": 2 * LN2, "kms": {"algebra": "cuntz-pimsner"}},
        "diagnose-subcritical": {"ifs": "tent", "potentials": [E, E], "beta": 0.5},
        "branch": {"ifs": "tent"},
    }
    same = []
    for command, cfg in configs.items():
        a = run(cfg, command, tmp_path / "a").read_bytes()
        b = run(cfg, command, tmp_path / "b").read_bytes()
        same.append((command, a == b))
    ok = all(s for _, s in same)
    report(11, ok, "byte-identical JSON for " + ", ".join(c for c, s in same if s))
