import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ifsthermo import (
    Algebra,
    DiscreteMeasure,
    GridFunction,
    InconsistencyError,
    InvalidInputError,
    RegimeError,
    RegimeTag,
    beta_critical,
    check_escape_condition,
    classify_regime,
    critical_state,
    dual_apply,
    extreme_points,
    finite_type_state,
    rpf,
    subcritical_diagnostic,
    verify_K1_K2,
)
from ifsthermo.kms import _slacks
from oracles import CANTOR_24_BETA_C, brute_force_F_series, tent_maps

LN2 = math.log(2)


@pytest.fixture(scope="module")
def tent_crit(tent_e):
    return beta_critical(tent_e)


def test_classify_regime(tent_e, tent_crit):
    esc = check_escape_condition(tent_e.ifs, tent_e.branch)
    assert classify_regime(1.0, tent_crit, escape=esc).tag is RegimeTag.SUPERCRITICAL
    r = classify_regime(LN2, tent_crit, escape=esc)
    assert r.tag is RegimeTag.CRITICAL and not r.conditional
    assert classify_regime(math.inf, tent_crit).tag is RegimeTag.SUPERCRITICAL
    assert classify_regime(0.5, tent_crit).tag is RegimeTag.SUBCRITICAL
    assert classify_regime(0.5, tent_crit).conditional
    with pytest.raises(InvalidInputError):
        classify_regime(0.0, tent_crit)
    assert classify_regime(LN2 + 5e-8, tent_crit).tag is RegimeTag.CRITICAL
    assert classify_regime(LN2 + 5e-8, tent_crit, band=1e-9).tag is RegimeTag.SUPERCRITICAL


def test_finite_type_tent_series(tent_e, tent_crit):
    st_ = finite_type_state(tent_e, 2 * LN2, DiscreteMeasure.delta([0.5]), 1e-10, crit=tent_crit)
    assert st_.normalization == pytest.approx(2.0, abs=1e-6)
    assert st_.measure.total_mass == pytest.approx(1.0, abs=1e-10)
    assert st_.tail_bound < 1e-10
    r = 0.5
    assert st_.tail_bound == pytest.approx(r ** (st_.truncation_depth + 1) / (1 - r))


def test_finite_type_matches_brute_force(tent_e):
    beta = 1.2
    h = [lambda x: math.e, lambda x: math.e]
    state = finite_type_state(tent_e, beta, DiscreteMeasure.delta([0.3]), 1e-3)
    # every term is still exact, so the series must match direct enumeration
    assert state.truncation_depth <= state.exact_depth
    ref = brute_force_F_series(tent_maps(), h, 0.3, beta, state.truncation_depth)
    omega = state.unnormalized
    assert omega.total_mass == pytest.approx(math.fsum(ref.values()), rel=1e-12)
    for x, w in list(ref.items())[::500]:
        assert omega.atom_weight([x], 1e-9) == pytest.approx(w, rel=1e-9)


def test_finite_type_beta_inf_returns_seed(tent_e):
    seed = DiscreteMeasure.delta([0.3])
    st_ = finite_type_state(tent_e, math.inf, seed)
    assert st_.measure is seed and st_.truncation_depth == 0


def test_finite_type_regime_errors(tent_e, tent_crit):
    with pytest.raises(RegimeError):
        finite_type_state(tent_e, 0.5, DiscreteMeasure.delta([0.5]), crit=tent_crit)
    with pytest.raises(RegimeError):
        finite_type_state(tent_e, LN2, DiscreteMeasure.delta([0.5]))
    with pytest.raises(InvalidInputError):
        finite_type_state(tent_e, 2.0, DiscreteMeasure.delta([0.5], weight=2.0))


def test_point_mass_propagation(tent_e):
    beta = 1.5
    state = finite_type_state(tent_e, beta, DiscreteMeasure.delta([0.3]), 1e-8)
    omega = state.unnormalized
    step = tent_e.min_h ** -beta / tent_e.d
    pts = np.array([[0.3]])
    for n in range(1, 6):
        pts = tent_e.ifs.images(pts).reshape(-1, 1)
        for y in pts:
            assert omega.atom_weight(y, 1e-9) >= step ** n * (1 - 1e-12)


def test_finite_type_uses_fallback_tail_bound():
    from ifsthermo import AffinePotential, PotentialFamily, RuelleEngine, preset
    H = PotentialFamily([AffinePotential([1.0], 2.0), AffinePotential([2.0], 1.5)])
    eng = RuelleEngine(preset("tent"), H, depth=10)
    crit = beta_critical(eng)
    # between beta_c and log 2 / log 1.5 the ratio d (min h)^-beta exceeds 1
    beta = crit.beta_c + 0.2
    assert 2 * 1.5 ** -beta > 1
    state = finite_type_state(eng, beta, DiscreteMeasure.delta([0.5]), 1e-8, crit=crit)
    assert state.tail_bound < 1e-8


def test_critical_state_examples(tent_e, tent_critical, cantor_24, sierpinski_e):
    _, sol = tent_critical
    st_ = critical_state(tent_e, sol)
    assert st_.type == "infinite"
    assert st_.measure.total_mass == pytest.approx(1.0, abs=1e-10)
    assert st_.measure.atom_weight([1.0], 1e-9) < 1e-4
    st_ = critical_state(cantor_24, rpf(cantor_24, CANTOR_24_BETA_C))
    assert st_.measure.integrate(lambda p: p[:, 0]) == pytest.approx(4 ** -CANTOR_24_BETA_C, abs=2e-3)
    sol = rpf(sierpinski_e, math.log(3))
    st_ = critical_state(sierpinski_e, sol)
    assert st_.measure.total_mass == pytest.approx(1.0, abs=1e-10)
    assert sol.residual_tau < 1e-4


def test_critical_state_errors(tent_e, tent_critical):
    _, sol = tent_critical
    with pytest.raises(RegimeError):
        critical_state(tent_e, rpf(tent_e, 1.0))
    heavy = type(sol)(**{**sol.__dict__, "tau": DiscreteMeasure.delta([1.0])})
    with pytest.raises(InconsistencyError):
        critical_state(tent_e, heavy)


def test_critical_state_is_dual_fixed_point(tent_e, tent_critical):
    _, sol = tent_critical
    tau = critical_state(tent_e, sol).measure
    moved = dual_apply(tent_e, tau, sol.beta)
    for f in tent_e.suite().positives:
        assert abs(moved.integrate(f) - tau.integrate(f)) < 1e-4


def test_extreme_points(tent_e, tent_crit, cantor_24):
    sup = classify_regime(2.0, tent_crit)
    ext = extreme_points(Algebra.CUNTZ_PIMSNER, tent_e.branch, tent_e.grid, sup)
    np.testing.assert_allclose(ext.points, [[0.5]])
    ext = extreme_points("toeplitz", tent_e.branch, tent_e.grid, sup)
    assert ext.points.shape[0] == len(tent_e.grid)
    c_crit = beta_critical(cantor_24)
    ext = extreme_points("cuntz-pimsner", cantor_24.branch, cantor_24.grid, classify_regime(2.0, c_crit))
    assert ext.points.shape[0] == 0
    ext = extreme_points("toeplitz", tent_e.branch, tent_e.grid, classify_regime(0.3, tent_crit))
    assert ext.points.shape[0] == 0 and ext.kind == "none"


def test_verify_examples(tent_e, tent_crit, tent_critical):
    _, sol = tent_critical
    v = verify_K1_K2(tent_e, critical_state(tent_e, sol, "cuntz-pimsner"), tol=1e-4)
    assert v.passed and v.k1.passed and v.k2.passed
    good = finite_type_state(tent_e, 2 * LN2, DiscreteMeasure.delta([0.5]), algebra="cuntz-pimsner")
    assert verify_K1_K2(tent_e, good).passed
    bad = finite_type_state(tent_e, 2 * LN2, DiscreteMeasure.delta([0.3]), algebra="cuntz-pimsner")
    v = verify_K1_K2(tent_e, bad)
    assert not v.passed and not v.k1.passed and v.k2.passed
    assert v.k1.worst in v.k1.slacks
    # the same measure is a Toeplitz state: K1 is not required
    bad.algebra = Algebra.TOEPLITZ
    assert verify_K1_K2(tent_e, bad).passed


def test_verify_beta_inf(tent_e):
    st_ = finite_type_state(tent_e, math.inf, DiscreteMeasure.delta([0.5]), algebra="cuntz-pimsner")
    v = verify_K1_K2(tent_e, st_)
    assert v.passed and v.k2.max_violation == 0
    st_ = finite_type_state(tent_e, math.inf, DiscreteMeasure.delta([0.3]), algebra="cuntz-pimsner")
    assert not verify_K1_K2(tent_e, st_).passed


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 1), st.integers(0, 2**31))
def test_K2_slack_is_linear(tent_small, x, seed):
    state = finite_type_state(tent_small, 2.0, DiscreteMeasure.delta([x]), 1e-6)
    rng = np.random.default_rng(seed)
    grid = tent_small.grid
    ca, cb = rng.uniform(0.1, 2, 2)
    fa = GridFunction.from_callable(grid, lambda p: ca + np.sin(p[:, 0]) ** 2, "a")
    fb = GridFunction.from_callable(grid, lambda p: cb * p[:, 0], "b")
    s = _slacks(tent_small, state.measure, [fa, fb, fa + fb], 2.0)
    vals = list(s.values())
    assert vals[2] == pytest.approx(vals[0] + vals[1], rel=1e-12, abs=1e-15)


def test_verdict_json(tent_e):
    import json
    st_ = finite_type_state(tent_e, 2.0, DiscreteMeasure.delta([0.5]), algebra="cuntz-pimsner")
    d = json.loads(verify_K1_K2(tent_e, st_).to_json())
    assert set(d["K2"]["slacks"]) == {f.name for f in tent_e.suite().positives}
    d = json.loads(st_.to_json())
    assert list(d) == ["beta", "algebra", "type", "atoms", "normalization", "truncation_depth",
                       "tail_bound"]


def test_subcritical_diagnostic(tent_e, tent_crit, cantor_24):
    rep = subcritical_diagnostic(tent_e, 0.5)
    assert rep.exponent == pytest.approx(math.log(2 * math.exp(-0.5)), abs=1e-2)
    assert rep.status == "divergent"
    rep = subcritical_diagnostic(tent_e, tent_crit.beta_c)
    assert rep.status == "boundary"
    assert np.allclose(np.diff(rep.partial_sums), rep.partial_sums[0])
    rep = subcritical_diagnostic(cantor_24, 0.3)
    assert rep.exponent == pytest.approx(math.log(2 ** -0.3 + 4 ** -0.3), abs=1e-2)


def test_regime_exclusivity(tent_e, tent_crit, tent_critical):
    _, sol = tent_critical
    for beta in (0.5, 1.0, 2.0):
        finite_ok = crit_ok = True
        try:
            finite_type_state(tent_e, beta, DiscreteMeasure.delta([0.5]), crit=tent_crit)
        except RegimeError:
            finite_ok = False
        try:
            critical_state(tent_e, rpf(tent_e, beta) if beta != sol.beta else sol)
        except (RegimeError, InconsistencyError):
            crit_ok = False
        assert not (finite_ok and crit_ok)
