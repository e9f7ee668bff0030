import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfnorm.exceptions import ParameterError
from selfnorm.lil import (
    EE,
    centered_lil_ratio,
    e_k,
    example31_jumps,
    lil_path_report,
    lil_ratio,
    normalized_lil_ratio,
    solve_h,
    stopping_times,
    stout_ratio,
)
from selfnorm.processes import GeneratorSpec, ProcessPath, c_gamma, generate_path

mp.mp.dps = 40


def test_solve_h_at_one_matches_high_precision_root():
    oracle = mp.findroot(lambda h: h - mp.log(1 + h) - 1, 2)
    k = solve_h(1.0)
    assert k.h == pytest.approx(float(oracle), rel=1e-14)
    assert k.h == pytest.approx(2.1462, abs=5e-5)
    assert k.residual < 1e-12


@pytest.mark.parametrize("lam", np.logspace(-3, 1, 25))
def test_solve_h_residual_on_grid(lam):
    k = solve_h(lam)
    assert abs(k.h - math.log1p(k.h) - lam * lam) < 1e-12
    assert k.b_lambda == pytest.approx(k.h / lam)
    assert k.gamma == pytest.approx(k.h / (1 + k.h))
    assert k.c_gamma == pytest.approx(c_gamma(k.gamma))
    assert k.c_lambda == pytest.approx(lam / k.gamma)
    assert k.c_lambda_interpreted


def test_b_lambda_limit():
    assert abs(solve_h(1e-3).b_lambda - math.sqrt(2)) < 1e-2
    assert abs(solve_h(1e-6).b_lambda - math.sqrt(2)) < 1e-5


def test_b_lambda_increasing_and_above_sqrt2():
    grid = np.logspace(-3, 1, 40)
    b = [solve_h(x).b_lambda for x in grid]
    assert all(x < y for x, y in zip(b, b[1:]))
    assert min(b) >= math.sqrt(2)


def test_solve_h_rejects_nonpositive():
    with pytest.raises(ParameterError):
        solve_h(0.0)


def test_e_k_values():
    assert e_k(3) == pytest.approx(float(mp.exp(3 / mp.log(3))), rel=1e-15)
    assert e_k(3) == pytest.approx(15.3439, abs=1e-4)
    assert e_k(2) == pytest.approx(17.9105, abs=1e-4)
    with pytest.raises(ParameterError):
        e_k(1)


def test_e_k_increasing_from_three():
    vals = [e_k(k) for k in range(3, 60)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_stopping_time_on_sqrt_n_path():
    # +-1 increments give V_n = sqrt(n)
    path = generate_path(GeneratorSpec("Rademacher", {}, 2000), 0)
    out = stopping_times(path, solve_h(0.5), 0.1, j_max=4)
    assert out["j"] == [2, 3, 4]
    assert out["t"][0] == math.ceil(e_k(2) ** 2) == 321
    assert out["t"][1] == math.ceil(e_k(3) ** 2)
    for t, tau in zip(out["t"], out["tau"]):
        assert tau is None or tau >= t


def test_stopping_times_nondecreasing_from_three():
    path = generate_path(GeneratorSpec("Rademacher", {}, 20000), 1)
    t = [x for x in stopping_times(path, solve_h(0.5), 0.1)["t"][1:] if x is not None]
    assert t == sorted(t)


def test_stopping_times_empty_infimum():
    path = generate_path(GeneratorSpec("Rademacher", {}, 100), 1)
    out = stopping_times(path, solve_h(0.5), 0.1, j_max=3)
    assert out["t"] == [None, None]


def test_ratios_are_nan_below_guard():
    path = generate_path(GeneratorSpec("Rademacher", {}, 400), 3)
    r = lil_ratio(path)
    v = np.sqrt(path.sum_squares)
    assert np.all(np.isnan(r[v <= EE]))
    assert np.all(np.isfinite(r[v > EE]))
    assert np.allclose(normalized_lil_ratio(path)[v > EE], r[v > EE] / math.sqrt(2))
    with pytest.raises(ParameterError):
        lil_ratio(path, guard=1.0)


def test_lil_ratio_direct_formula():
    path = ProcessPath.from_increments([1.0] * 400)
    r = lil_ratio(path)
    assert r[400] == pytest.approx(400 / (20 * math.sqrt(math.log(math.log(20)))), rel=1e-14)
    assert math.isnan(r[100])


def test_centered_ratio_equals_plain_for_rademacher():
    path = generate_path(GeneratorSpec("Rademacher", {}, 5000), 4)
    k = solve_h(0.5)
    plain = lil_ratio(path)
    centered = centered_lil_ratio(path, k)
    lo = k.lam * np.sqrt(path.sum_squares) / np.sqrt(np.log(np.log(np.maximum(np.sqrt(path.sum_squares), EE + 1))))
    inside = np.isfinite(plain) & (lo >= 1) & (k.c_lambda * lo / k.lam > 1)
    assert inside.sum() > 1000
    assert np.array_equal(centered[inside], plain[inside])


def test_centered_ratio_needs_conditional_law():
    path = generate_path(GeneratorSpec("AR1", {}, 3000), 0)
    with pytest.raises(ParameterError):
        centered_lil_ratio(path, solve_h(0.5))


def test_stout_ratio_formula():
    path = generate_path(GeneratorSpec("Rademacher", {}, 1000), 0)
    n = 1000
    assert stout_ratio(path)[n] == pytest.approx(path.a_values[n] / math.sqrt(2 * n * math.log(math.log(math.sqrt(n)))))


def test_jump_family_report_counts_jumps():
    path = generate_path(GeneratorSpec("Example31", {}, 5000), 6)
    rep = lil_path_report(path, solve_h(0.5), [100, 1000, 5000])
    assert rep.jumps == example31_jumps(path)
    assert rep.jumps >= 0
    assert len(list(rep.rows())) == 3


def test_report_rejects_bad_grid():
    path = generate_path(GeneratorSpec("Rademacher", {}, 10), 0)
    with pytest.raises(ParameterError):
        lil_path_report(path, n_grid=[20])


@given(seed=st.integers(0, 10**6))
def test_ratio_sign_follows_sum(seed):
    path = generate_path(GeneratorSpec("Rademacher", {}, 300), seed)
    r = lil_ratio(path)
    ok = np.isfinite(r)
    assert np.array_equal(np.sign(r[ok]), np.sign(path.a_values[ok]))
