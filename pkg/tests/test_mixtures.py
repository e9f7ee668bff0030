import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfnorm.bounds import bound_thm27
from selfnorm.exceptions import NumericalError, ParameterError
from selfnorm.mixtures import (
    Boundary,
    DiscreteGrid,
    GaussianScale,
    RobbinsSiegmund,
    beta_f,
    crossing_bound,
    gaussian_mixture_identity,
    log_psi,
    measure_from_dict,
    mixture_tail_bound,
    parse_measure,
    psi,
    residual_floor,
    rs_asymptotic,
    rs_asymptotic_bracket,
    slope_limit,
    two_sided_gaussian_boundary,
)

MEASURES = [
    GaussianScale(1.0),
    GaussianScale(0.1),
    RobbinsSiegmund(0.5),
    RobbinsSiegmund(2.0),
    DiscreteGrid((0.05, 0.2, 0.7), (0.3, 0.3, 0.4)),
    DiscreteGrid.atom(0.3),
]
V_GRID = np.logspace(-2, 12, 29)

# Frozen from an independent quadrature over s = log(1/lambda) with scipy quad
# and brentq; it agreed with the package to about 1e-15.
RS_LOG_PSI = {(0.0, 0.0): 0.6931471805599453, (5.0, 10.0): 0.7300918771030362,
              (100.0, 1e3): 2.441015518445999, (3e3, 1e6): 2.0092718271987238}
RS_BETA_C10 = {1e3: 96.65140637217573, 1e6: 3125.726986143246, 1e9: 107593.5251350289}


def test_single_atom_psi_and_beta():
    F = DiscreteGrid.atom(0.4)
    for u, v in ((0.0, 0.0), (3.0, 2.0), (-1.0, 50.0)):
        assert psi(u, v, F) == pytest.approx(math.exp(0.4 * u - 0.08 * v), rel=1e-14)
    for v in (0.0, 1.0, 1e3, 1e8):
        for c in (0.5, 10.0, 1e4):
            exact = math.log(c) / 0.4 + 0.2 * v
            assert beta_f(v, c, F) == pytest.approx(exact, rel=1e-12)


def test_rs_total_mass():
    for delta in (0.1, 0.5, 1.0, 3.0):
        assert psi(0.0, 0.0, RobbinsSiegmund(delta)) == pytest.approx(1.0 / delta, rel=1e-8)


def test_rs_psi_matches_independent_quadrature():
    F = RobbinsSiegmund(0.5)
    for (u, v), want in RS_LOG_PSI.items():
        assert log_psi(u, v, F) == pytest.approx(want, rel=1e-9)


def test_rs_beta_frozen_values():
    F = RobbinsSiegmund(0.5)
    for v, want in RS_BETA_C10.items():
        assert beta_f(v, 10.0, F) == pytest.approx(want, rel=1e-9)
        assert Boundary(F, 10.0).evaluate([v])[0] == pytest.approx(want, rel=1e-9)


def test_rs_beta_follows_asymptotic_trend():
    F = RobbinsSiegmund(0.5)
    vs = [1e7, 1e9, 1e12]
    ratios = [beta_f(v, 10.0, F) / rs_asymptotic(v, 10.0, 0.5) for v in vs]
    gaps = [abs(r - 1.0) for r in ratios]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[-1] < 0.05


def test_gaussian_log_psi_matches_mpmath():
    mp.mp.dps = 30
    for y in (0.5, 1.0, 3.0):
        F = GaussianScale(y)
        for u, v in ((0.0, 0.0), (2.0, 1.0), (-3.0, 4.0), (10.0, 20.0)):
            f = lambda lam: y / mp.sqrt(2 * mp.pi) * mp.exp(lam * u - lam * lam * (v + y * y) / 2)
            want = float(mp.log(mp.quad(f, [0, 1, 10, mp.inf])))
            assert log_psi(u, v, F) == pytest.approx(want, rel=1e-10, abs=1e-12)


def test_gaussian_total_mass_is_half():
    assert psi(0.0, 0.0, GaussianScale(2.5)) == pytest.approx(0.5, rel=1e-14)


@pytest.mark.parametrize("F", MEASURES, ids=lambda F: F.kind)
def test_root_residual_on_v_grid(F):
    for c in (2.0, 10.0, 100.0):
        for v in V_GRID:
            u = beta_f(v, c, F)
            assert abs(psi(u, v, F) - c) <= max(1e-9, residual_floor(u, v, F)) * c


@pytest.mark.parametrize("F", MEASURES, ids=lambda F: F.kind)
def test_vectorized_boundary_matches_scalar_root(F):
    b = Boundary(F, 10.0)
    got = b.evaluate(V_GRID)
    want = [beta_f(v, 10.0, F) for v in V_GRID]
    np.testing.assert_allclose(got, want, rtol=1e-8)
    assert len(b.samples) == len(V_GRID)


@pytest.mark.parametrize("F", MEASURES, ids=lambda F: F.kind)
def test_boundary_increasing_and_concave(F):
    v = np.linspace(0.0, 1e4, 201)
    beta = Boundary(F, 10.0).evaluate(v)
    assert np.all(np.diff(beta) > 0)
    mid = beta[1:-1] - 0.5 * (beta[:-2] + beta[2:])
    assert np.all(mid >= -1e-7)


@given(u1=st.floats(-50, 50), du=st.floats(1e-3, 50), v=st.floats(0, 1e4))
def test_psi_increasing_in_u(u1, du, v):
    for F in (GaussianScale(1.0), RobbinsSiegmund(0.5), DiscreteGrid((0.1, 0.5), (1.0, 1.0))):
        assert log_psi(u1 + du, v, F) > log_psi(u1, v, F)


def test_identity_examples():
    lhs, rhs = gaussian_mixture_identity(0.0, 0.0, 1.7)
    assert lhs == pytest.approx(1.0, rel=1e-10) and rhs == pytest.approx(1.0, rel=1e-15)
    lhs, rhs = gaussian_mixture_identity(0.0, 3.0, 4.0)
    assert lhs == pytest.approx(0.8, rel=1e-10) and rhs == pytest.approx(0.8, rel=1e-15)
    lhs, rhs = gaussian_mixture_identity(2.0, 1.0, 1.0)
    assert rhs == pytest.approx(1.9221155, abs=1e-7)
    assert lhs == pytest.approx(rhs, rel=1e-10)


@given(a=st.floats(-10, 10), b=st.floats(0, 10), y=st.floats(1e-3, 10))
def test_identity_quadrature_matches_closed_form(a, b, y):
    # compared in logs so that values beyond the double range are covered
    log_lhs, log_rhs = gaussian_mixture_identity(a, b, y, log=True)
    assert abs(math.expm1(log_lhs - log_rhs)) <= 1e-8


def test_identity_overflow_is_inf():
    lhs, rhs = gaussian_mixture_identity(5.0, 0.0, 0.125)
    assert lhs == rhs == math.inf


def test_identity_rejects_bad_inputs():
    with pytest.raises(ParameterError):
        gaussian_mixture_identity(1.0, -1.0, 1.0)
    with pytest.raises(ParameterError):
        gaussian_mixture_identity(1.0, 1.0, 0.0)


def test_rs_asymptotic_guards_and_trend():
    limit = math.exp(math.exp(math.e))
    with pytest.raises(ParameterError):
        rs_asymptotic(limit, 10.0, 0.5)
    val = rs_asymptotic(limit * 10, 10.0, 0.5)
    assert math.isfinite(val) and val > 0
    assert rs_asymptotic(1e8, 10.0, 1.0) > rs_asymptotic(1e8, 10.0, 0.5)
    vs = np.array([1e10, 1e50, 1e200, 1e300])
    ratio = rs_asymptotic(vs, 10.0, 0.5) / np.sqrt(2 * vs * np.log(np.log(vs)))
    assert np.all(np.diff(np.abs(ratio - 1)) < 0)
    with pytest.raises(ParameterError):
        rs_asymptotic_bracket(2.0, 10.0, 0.5)


def test_crossing_bound_examples():
    assert crossing_bound(10.0, RobbinsSiegmund(0.5)) == pytest.approx(0.2, rel=1e-15)
    assert crossing_bound(20.0, DiscreteGrid.atom(0.3)) == 0.05
    assert crossing_bound(1e300, GaussianScale(1.0)) < 1e-299
    with pytest.raises(ParameterError):
        crossing_bound(0.0, GaussianScale(1.0))


def test_slope_law_single_atom():
    F = DiscreteGrid.atom(0.6)
    assert slope_limit(F) == 0.3
    b = Boundary(F, 10.0)
    v = np.array([1e6, 1e9, 1e12])
    slope = b.evaluate(v) / v
    assert np.all(np.abs(slope - 0.3) < 1e-5)


def test_gaussian_boundary_is_sublinear():
    b = Boundary(GaussianScale(1.0), 10.0)
    v = np.array([1e4, 1e8, 1e12])
    ratio = b.evaluate(v) / v
    assert np.all(np.diff(ratio) < 0) and ratio[-1] < 1e-4


def test_parse_measure_forms():
    assert parse_measure("rs:delta=0.25") == RobbinsSiegmund(0.25)
    assert parse_measure("gauss:y=2") == GaussianScale(2.0)
    g = parse_measure("grid:points=0.1;0.2,masses=1;3")
    assert g.points == (0.1, 0.2) and g.total_mass() == 4.0
    for F in MEASURES:
        assert measure_from_dict(F.to_dict()) == F
    for bad in ("rs:delta", "foo:x=1", "grid:masses=1"):
        with pytest.raises(ParameterError):
            parse_measure(bad)


def test_measure_validation():
    with pytest.raises(ParameterError):
        RobbinsSiegmund(0.0)
    with pytest.raises(ParameterError):
        GaussianScale(-1.0)
    with pytest.raises(ParameterError):
        DiscreteGrid((0.5,), (1.0,), lambda0=0.4)
    with pytest.raises(ParameterError):
        DiscreteGrid((0.1, 0.2), (0.0, 0.0))


def test_beta_rejects_bad_arguments():
    F = GaussianScale(1.0)
    with pytest.raises(ParameterError):
        beta_f(1.0, 0.0, F)
    with pytest.raises(ParameterError):
        beta_f(-1.0, 1.0, F)
    with pytest.raises(ParameterError):
        Boundary(F, -2.0)


def test_residual_floor_for_linear_boundaries():
    F = DiscreteGrid.atom(0.4)
    assert residual_floor(beta_f(1.0, 10.0, F), 1.0, F) < 1e-14
    # rounding in 0.4 u - 0.08 v with u near 2e11 is far above 1e-9
    u = beta_f(1e12, 10.0, F)
    eps = np.finfo(float).eps
    assert residual_floor(u, 1e12, F) == pytest.approx(0.4 * (math.ulp(u) + 8 * eps * u), rel=1e-3)
    assert residual_floor(u, 1e12, F) > 1e-9
    F = RobbinsSiegmund(0.5)
    assert residual_floor(beta_f(1e12, 10.0, F), 1e12, F) < 1e-9


@given(x=st.floats(0.05, 10))
def test_mixture_pipeline_reproduces_expected_normalizer_bound(x):
    assert mixture_tail_bound(x, 3.0, 3.0) == pytest.approx(bound_thm27(x).value, rel=1e-15)


def test_two_sided_gaussian_boundary():
    y, c = 1.5, 20.0
    v = np.array([0.0, 1.0, 100.0])
    u = two_sided_gaussian_boundary(v, c, y)
    s2 = v + y * y
    np.testing.assert_allclose(y / np.sqrt(s2) * np.exp(u * u / (2 * s2)), c, rtol=1e-12)
