import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfnorm.exceptions import ParameterError
from selfnorm.mixtures import two_sided_gaussian_boundary
from selfnorm.multivariate import (
    MvPathState,
    batched_statistic,
    check_psd,
    cholesky_rank1_update,
    discretization_study,
    mixture_martingale,
    mv_crossed,
    mv_crossing_probability,
    mv_statistic,
    mv_threshold,
    parse_matrix,
    richardson_slack,
    simulate_mv,
)
from selfnorm.processes import GeneratorSpec


def test_single_step_example():
    state = MvPathState.from_increments([[1.0]])
    assert mv_statistic(state, [[1.0]]) == pytest.approx(0.5, rel=1e-15)
    assert mv_threshold(state, [[1.0]], math.e) == pytest.approx(math.log(2) + 2, rel=1e-15)
    assert not mv_crossed(state, [[1.0]], math.e)


def test_empty_state_is_zero():
    state = MvPathState.empty(3)
    assert mv_statistic(state, np.eye(3)) == 0.0
    assert mv_threshold(state, np.eye(3), 4.0) == pytest.approx(2 * math.log(4.0))


def test_update_matches_from_increments():
    rng = np.random.default_rng(0)
    d = rng.normal(size=(20, 3))
    state = MvPathState.empty(3)
    for row in d:
        state = state.update(row)
    ref = MvPathState.from_increments(d)
    np.testing.assert_allclose(state.q, ref.q, rtol=1e-14)
    np.testing.assert_allclose(state.c, ref.c, rtol=1e-13)
    assert state.n == ref.n == 20


def test_statistic_matches_direct_inverse():
    rng = np.random.default_rng(1)
    d = rng.normal(size=(15, 4))
    V = np.diag([1.0, 2.0, 0.5, 3.0])
    state = MvPathState.from_increments(d)
    S = V + d.T @ d
    want = state.q @ np.linalg.inv(S) @ state.q
    assert mv_statistic(state, V) == pytest.approx(want, rel=1e-12)
    want_thr = np.linalg.slogdet(S)[1] + 2 * math.log(3.0) - np.linalg.slogdet(V)[1]
    assert mv_threshold(state, V, 3.0) == pytest.approx(want_thr, rel=1e-12)


def test_mixture_martingale_crosses_with_statistic():
    rng = np.random.default_rng(2)
    V = np.eye(2)
    for _ in range(50):
        state = MvPathState.from_increments(rng.normal(scale=2.0, size=(5, 2)))
        a = 3.0
        assert (mixture_martingale(state, V) >= a) == mv_crossed(state, V, a)


@given(scale=st.floats(1e-3, 1e3), seed=st.integers(0, 1000))
def test_scale_invariance(scale, seed):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(10, 2))
    V = np.array([[2.0, 0.3], [0.3, 1.0]])
    s1 = MvPathState.from_increments(d)
    s2 = MvPathState.from_increments(scale * d)
    V2 = scale * scale * V
    assert mv_statistic(s2, V2) == pytest.approx(mv_statistic(s1, V), rel=1e-9)
    assert mv_threshold(s2, V2, 2.0) == pytest.approx(mv_threshold(s1, V, 2.0), rel=1e-9, abs=1e-12)


@given(q=st.floats(-50, 50), c=st.floats(0, 1e3), v=st.floats(1e-2, 1e2), a=st.floats(1.01, 1e3))
def test_one_dimensional_reduces_to_gaussian_mixture_boundary(q, c, v, a):
    state = MvPathState(np.array([q]), np.array([[c]]))
    u = two_sided_gaussian_boundary(c, a, math.sqrt(v))
    stat = mv_statistic(state, [[v]])
    thr = mv_threshold(state, [[v]], a)
    if abs(abs(q) - u) > 1e-9 * max(1.0, u):
        assert (stat >= thr) == (abs(q) >= u)


def test_rank1_update_matches_fresh_factor():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(6, 4, 4))
    S = A @ np.transpose(A, (0, 2, 1)) + np.eye(4)
    L = np.linalg.cholesky(S)
    x = rng.normal(size=(6, 4))
    got = cholesky_rank1_update(L, x)
    want = np.linalg.cholesky(S + x[:, :, None] * x[:, None, :])
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_batched_statistic_matches_scalar():
    rng = np.random.default_rng(4)
    d = rng.normal(size=(5, 8, 3))
    V = np.eye(3)
    q = d.sum(axis=1)
    S = V + np.einsum("rni,rnj->rij", d, d)
    stat, logdet = batched_statistic(q, S)
    for r in range(5):
        state = MvPathState.from_increments(d[r])
        assert stat[r] == pytest.approx(mv_statistic(state, V), rel=1e-12)
        assert logdet[r] == pytest.approx(np.linalg.slogdet(S[r])[1], rel=1e-12)


def test_validation_errors():
    with pytest.raises(ParameterError, match="symmetric"):
        check_psd([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ParameterError, match="positive definite"):
        check_psd([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ParameterError):
        mv_threshold(MvPathState.empty(1), [[1.0]], 1.0)
    with pytest.raises(ParameterError, match="dimension"):
        mv_statistic(MvPathState.empty(2), np.eye(3))
    with pytest.raises(ParameterError):
        simulate_mv("Poisson", np.eye(2), 10, 10, 0)


def test_parse_matrix():
    np.testing.assert_array_equal(parse_matrix("identity", 3), np.eye(3))
    np.testing.assert_array_equal(parse_matrix("2.5*identity", 2), 2.5 * np.eye(2))
    np.testing.assert_array_equal(parse_matrix("4", 2), 4 * np.eye(2))
    np.testing.assert_array_equal(parse_matrix("2,1;1,2", 2), [[2, 1], [1, 2]])
    with pytest.raises(ParameterError):
        parse_matrix("1,2,3", 2)


def test_simulation_rank1_matches_scratch():
    V = np.array([[1.0, 0.2], [0.2, 2.0]])
    a = simulate_mv("Rademacher", V, 2000, 300, 5)
    b = simulate_mv("Rademacher", V, 2000, 300, 5, update="rank1")
    np.testing.assert_allclose(a.max_excess, b.max_excess, rtol=1e-8, atol=1e-8)
    assert b.rank1_max_rel_err < 1e-8
    assert np.array_equal(a.crossed(2.0), b.crossed(2.0))


def test_simulation_is_deterministic():
    a = simulate_mv("Rademacher", np.eye(2), 500, 400, 11)
    b = simulate_mv("Rademacher", np.eye(2), 500, 400, 11)
    assert np.array_equal(a.max_excess, b.max_excess)
    c = simulate_mv("Rademacher", np.eye(2), 500, 400, 12)
    assert not np.array_equal(a.max_excess, c.max_excess)


def test_huge_level_never_crossed():
    sim = simulate_mv("Rademacher", np.eye(2), 500, 500, 1)
    assert sim.frequency(1e12) == 0.0


def test_crossing_report_passes_small_run():
    reps = mv_crossing_probability("Rademacher", np.eye(2), [2.0, 5.0], 500, 3000, 7)
    for r, a in zip(reps, (2.0, 5.0)):
        assert r.analytic_bound == 1.0 / a
        assert r.verdict == "PASS"
        assert r.horizon_truncated
        assert len(r.config_hash) == 64


def test_brownian_report_extras():
    spec = GeneratorSpec("BrownianDiscretized", {"dt": 0.01}, 200)
    r = mv_crossing_probability(spec, np.eye(2), 2.0, 200, 3000, 9)
    for key in ("tail_corrected", "equality_gap", "discretization_slack", "equality_verdict"):
        assert key in r.extras
    assert r.extras["tail_corrected"] >= r.estimate
    assert r.extras["equality_gap"] == pytest.approx(abs(r.extras["tail_corrected"] - 0.5))


def test_richardson_slack():
    # p(dt) = 0.5 + 0.1 sqrt(dt) at dt = 2h and h recovers 0.5 exactly
    h = 0.01
    p, slack = richardson_slack(0.5 + 0.1 * math.sqrt(2 * h), 0.5 + 0.1 * math.sqrt(h))
    assert p == pytest.approx(0.5, abs=1e-14)
    assert slack == pytest.approx(0.1 * math.sqrt(h), rel=1e-12)


def test_discretization_study_shapes():
    st_ = discretization_study(np.eye(2), 2.0, 1.0, 64, 3, 2000, 0)
    assert st_.dts == (4 / 64, 2 / 64, 1 / 64)
    assert len(st_.gaps) == 3 and len(st_.shrink_ratios) == 2
    assert all(0 <= e <= 1 for e in st_.estimates)
    with pytest.raises(ParameterError):
        discretization_study(np.eye(2), 2.0, 1.0, 10, 3, 100, 0)
