import json
import math
import warnings

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfnorm.exceptions import LogCapWarning, ParameterError, RegimeError
from selfnorm.processes import (
    EXAMPLE31_START,
    FAMILIES,
    CanonicalRegime,
    GeneratorSpec,
    ProcessPath,
    a8_lambda_max,
    bernstein_supermartingale_value,
    c_gamma,
    example31_m,
    example31_probabilities,
    exp_supermartingale_value,
    generate_path,
    iter_chunks,
    lemma_a7_b_squared,
    lemma_a8_value,
    log_supermartingale,
    stout_b_squared,
    substream,
)

mp.mp.dps = 40


def test_substream_is_deterministic_and_distinct():
    a = substream(7, 3).random(5)
    b = substream(7, 3).random(5)
    c = substream(7, 4).random(5)
    d = substream(7, 3, tag=1).random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_substream_rejects_negative_seed():
    with pytest.raises(ParameterError):
        substream(-1, 0)


def test_regime_membership():
    assert CanonicalRegime("AllReal").contains(-5.0)
    assert not CanonicalRegime("AllNonnegative").contains(-0.1)
    open_r = CanonicalRegime("Restricted", 2.0)
    closed_r = CanonicalRegime("Restricted", 2.0, closed=True)
    assert not open_r.contains(2.0) and closed_r.contains(2.0)
    with pytest.raises(RegimeError, match="outside the regime"):
        open_r.check(3.0)
    with pytest.raises(ParameterError):
        CanonicalRegime("Restricted")
    with pytest.raises(ParameterError):
        CanonicalRegime("AllReal", 1.0)


@pytest.mark.parametrize("family", sorted(FAMILIES))
def test_every_family_generates_valid_paths(family):
    spec = GeneratorSpec(family, {}, 300)
    path = generate_path(spec, 11)
    assert path.a_values[0] == 0 and path.b_values[0] == 0
    assert len(path.times) == len(path.a_values) == len(path.b_values) == 301
    assert np.all(np.diff(path.b_squared) >= 0)
    assert np.all(np.diff(path.times) > 0)
    assert path.meta["family"] == family


@pytest.mark.parametrize("family", sorted(FAMILIES))
def test_paths_are_reproducible_bit_exactly(family):
    spec = GeneratorSpec(family, {}, 200)
    p1 = generate_path(spec, 5, replication=2)
    p2 = generate_path(spec, 5, replication=2)
    assert p1.a_values.tobytes() == p2.a_values.tobytes()
    assert p1.b_squared.tobytes() == p2.b_squared.tobytes()


@pytest.mark.parametrize("family", sorted(FAMILIES))
@given(chunk=st.integers(min_value=1, max_value=150))
def test_chunking_does_not_change_running_sums(family, chunk):
    fam = GeneratorSpec(family, {}, 150).build()

    def run(size):
        rngs = [substream(3, r) for r in range(3)]
        parts = list(iter_chunks(fam, rngs, 150, size))
        return {k: np.concatenate([p[k] for p in parts], axis=1) for k in ("a", "sq", "cv")}

    ref, got = run(150), run(chunk)
    for k in ref:
        assert ref[k].tobytes() == got[k].tobytes()


def test_spec_json_round_trip():
    spec = GeneratorSpec("AR1", {"alpha": 0.3}, 50)
    assert GeneratorSpec.from_json(spec.to_json()) == spec
    assert json.loads(spec.to_json()) == {"family": "AR1", "params": {"alpha": 0.3}, "horizon": 50}


def test_spec_rejects_bad_input():
    with pytest.raises(ParameterError, match="unknown generator family"):
        GeneratorSpec("Nope", {}, 10)
    with pytest.raises(ParameterError, match="unknown parameters"):
        GeneratorSpec("AR1", {"beta": 1}, 10)
    with pytest.raises(ParameterError, match="horizon >= 3"):
        GeneratorSpec("Example31", {}, 2)
    with pytest.raises(ParameterError):
        GeneratorSpec("BoundedAboveMartingale", {"M": -1}, 10)


def test_regimes_attached_to_families():
    assert GeneratorSpec("AR1", {}, 5).regime.kind == "AllReal"
    assert GeneratorSpec("Rademacher", {}, 5).regime.kind == "AllReal"
    assert GeneratorSpec("BrownianDiscretized", {}, 5).regime.kind == "AllReal"
    r = GeneratorSpec("BoundedAboveMartingale", {"M": 2.0}, 5).regime
    assert r.kind == "Restricted" and r.lambda0 == 0.5
    r = GeneratorSpec("BernsteinMartingale", {"M": 2.0}, 5).regime
    assert r.kind == "Restricted" and r.lambda0 == 0.5 and not r.closed
    r = GeneratorSpec("TruncatedLemmaA8", {"gamma": 0.5}, 5).regime
    assert r.lambda0 == pytest.approx(1 / c_gamma(0.5))


def test_zero_noise_ar1_is_degenerate():
    path = generate_path(GeneratorSpec("AR1", {"alpha": 0.0, "noise_scale": 0.0}, 20), 1)
    assert np.all(path.a_values == 0) and np.all(path.b_values == 0)


def test_scripted_rademacher_path():
    path = ProcessPath.from_increments([1, -1, 1, 1])
    assert path.a_values.tolist() == [0, 1, 0, 1, 2]
    assert path.b_squared.tolist() == [0, 1, 2, 3, 4]


def test_path_arrays_are_read_only():
    path = generate_path(GeneratorSpec("Rademacher", {}, 10), 0)
    with pytest.raises(ValueError):
        path.a_values[1] = 5.0


def test_csv_export_columns():
    text = ProcessPath.from_increments([0.5, -1.0]).to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "n,A,B,d"
    assert lines[2].split(",") == ["1", "0.5", "0.5", "0.5"]
    assert len(lines) == 4


@given(seed=st.integers(0, 2**32), n=st.integers(1, 400))
def test_rademacher_b_squared_is_n(seed, n):
    path = generate_path(GeneratorSpec("Rademacher", {}, n), seed)
    assert np.array_equal(path.b_squared, np.arange(n + 1, dtype=float))


@given(seed=st.integers(0, 2**32), alpha=st.floats(-0.95, 0.95))
def test_ar1_estimator_identity(seed, alpha):
    path = generate_path(GeneratorSpec("AR1", {"alpha": alpha}, 60), seed)
    y = path.extras["y"]
    # least squares slope recomputed from the observed series
    num = np.cumsum(y[:-1] * y[1:])
    den = np.cumsum(y[:-1] ** 2)
    ok = den > 0
    alpha_hat = num[ok] / den[ok]
    ratio = path.a_values[1:][ok] / path.b_squared[1:][ok]
    assert np.allclose(alpha_hat - alpha, ratio, rtol=1e-9, atol=1e-12)


def test_jump_family_probabilities_sum_to_one_and_mean_zero():
    for n in (EXAMPLE31_START, 100, 10**4, 10**6):
        p1, p2, p3 = (float(x) for x in example31_probabilities(n))
        assert p1 + p2 + p3 == pytest.approx(1.0, abs=1e-15)
        assert min(p1, p2, p3) >= 0
        m = float(example31_m(n))
        assert (-p1 + p3) / math.sqrt(n) - p2 * m == pytest.approx(0.0, abs=1e-12)


def test_jump_family_m_from_zero_mean_equation_high_precision():
    n = mp.mpf(100)
    ln = mp.log(n)
    p1 = mp.mpf(1) / 2 - mp.sqrt(ln / n) - 1 / (n * ln**2)
    p2 = 1 / (n * ln**2)
    p3 = mp.mpf(1) / 2 + mp.sqrt(ln / n)
    m = (p3 - p1) / (mp.sqrt(n) * p2)
    assert float(example31_m(100)) == pytest.approx(float(m), rel=1e-13)


def test_jump_family_m_approaches_asymptotic_form():
    grid = [10**3, 10**4, 10**5, 10**6]
    dev = [abs(float(example31_m(n)) / (2 * math.log(n) ** 2.5) - 1) for n in grid]
    assert all(a > b for a, b in zip(dev, dev[1:]))
    assert dev[-1] < 1e-4


def test_jump_family_start_is_first_valid_index():
    assert example31_probabilities(EXAMPLE31_START)[0] >= 0
    assert example31_probabilities(EXAMPLE31_START - 1)[0] < 0


def test_jump_family_truncated_mean_sum_matches_brute_force():
    fam = GeneratorSpec("Example31", {}, 10).build()
    n = np.array([5, 20, 200, 200, 1500])
    lo = np.array([-1.0, -0.2, -100.0, -0.05, -3.0])
    hi = np.array([1.0, 0.2, 0.05, 100.0, 0.03])
    got = fam.truncated_mean_sum(n, lo, hi)
    for k in range(len(n)):
        total = 0.0
        for i in range(1, n[k] + 1):
            atoms = fam.law(i)
            for x, p in zip(atoms[:3], atoms[3:]):
                if lo[k] <= x < hi[k]:
                    total += x * p
        assert got[k] == pytest.approx(total, rel=1e-12, abs=1e-15)


def test_exp_supermartingale_examples():
    path = ProcessPath.from_increments([1.0, 1.0, 1.0, -1.0])
    assert exp_supermartingale_value(path, 0.0) == 1.0
    assert exp_supermartingale_value(path, 0.5, 4) == pytest.approx(math.exp(0.5), rel=1e-15)


def test_exp_supermartingale_rejects_lambda_outside_regime():
    path = generate_path(GeneratorSpec("BoundedAboveMartingale", {}, 10), 0)
    with pytest.raises(RegimeError, match="<= 1.0"):
        exp_supermartingale_value(path, 2.0)


def test_log_cap_flags_without_clamping():
    path = ProcessPath.from_increments([0.01] * 1000)
    with pytest.warns(LogCapWarning):
        v = exp_supermartingale_value(path, 100.0, log_cap=10.0)
    assert v == pytest.approx(math.exp(500.0), rel=1e-9)


def test_stout_b_squared_examples():
    path = generate_path(GeneratorSpec("Rademacher", {}, 4), 0)
    assert stout_b_squared(path, 1.0, 1.0)[4] == 6.0
    assert stout_b_squared(path, 1e-12, 1.0)[4] == pytest.approx(4.0, rel=1e-11)
    with pytest.raises(ParameterError):
        stout_b_squared(path, 1.5, 1.0)


def test_bernstein_value_examples():
    path = ProcessPath.from_increments([1.0, 0.0], cond_var=[1.0, 1.0])
    assert bernstein_supermartingale_value(path, 0.0, 1.0) == 1.0
    assert bernstein_supermartingale_value(path, 0.5, 1.0) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(RegimeError, match="Bernstein regime violated"):
        bernstein_supermartingale_value(path, 1.0, 1.0)


def test_c_gamma_values():
    assert c_gamma(0.0) == 0.5
    assert c_gamma(1e-9) == pytest.approx(0.5, abs=1e-9)
    oracle = -(mp.mpf("0.5") + mp.log(mp.mpf("0.5"))) / mp.mpf("0.25")
    assert c_gamma(0.5) == pytest.approx(float(oracle), rel=1e-14)
    assert c_gamma(0.5) == pytest.approx(0.772589, abs=5e-7)
    with pytest.raises(ParameterError):
        c_gamma(1.0)


@given(g=st.floats(1e-6, 0.999))
def test_c_gamma_matches_high_precision(g):
    gm = mp.mpf(g)
    assert c_gamma(g) == pytest.approx(float(-(gm + mp.log(1 - gm)) / gm**2), rel=1e-12)


@given(a=st.floats(0.0, 0.99), b=st.floats(0.0, 0.99))
def test_c_gamma_increasing(a, b):
    if a < b - 1e-9:
        assert c_gamma(a) < c_gamma(b)


def test_c_gamma_blows_up_near_one():
    # C_gamma grows like -log(1 - gamma)
    assert c_gamma(1 - 1e-6) > 12
    assert c_gamma(1 - 1e-12) > 25


def test_bernstein_variance_normalizer():
    path = ProcessPath.from_increments([0.5, -0.5, 1.0])
    got = lemma_a7_b_squared(path, 0.5, 1.0)
    assert got[-1] == pytest.approx(2 * c_gamma(0.5) * 1.5, rel=1e-15)
    with pytest.raises(ParameterError):
        lemma_a7_b_squared(path, 0.5, 0.25)


def test_truncated_product_zero_values():
    law = ([-0.8, 0.3, 1.2], [0.3, 0.5, 0.2])
    sym = ([-1.0, 1.0], [0.5, 0.5])
    assert lemma_a8_value([0.0] * 5, 0.5, 1.0, sym) == 1.0
    assert lemma_a8_value([], 0.5, 1.0, law) == 1.0


def test_truncated_product_direct_oracle():
    law = ([-0.8, 0.3, 1.2], [0.3, 0.5, 0.2])
    y = [0.3, -0.8, 1.2]
    g, lam = 0.5, 1.0
    mu = 0.5 * 0.3  # only 0.3 lies in [-0.5, 1.0)
    expect = math.exp(sum(v - mu - v * v / lam for v in y))
    assert lemma_a8_value(y, g, lam, law) == pytest.approx(expect, rel=1e-14)
    with pytest.raises(RegimeError):
        lemma_a8_value(y, g, a8_lambda_max(g) * 1.01, law)


def test_truncated_product_callable_law_and_family_agree():
    fam = GeneratorSpec("TruncatedLemmaA8", {}, 50).build()
    path = generate_path(GeneratorSpec("TruncatedLemmaA8", {}, 50), 4)
    y = np.diff(path.a_values)
    scale = path.extras["scale"][1:]
    lam = 1.0

    def law(i, lo, hi):
        return fam.truncated_mean(scale[i], hi)

    direct = lemma_a8_value(y, fam.p["gamma"], lam, law)
    via_family = math.exp(log_supermartingale(path, lam))
    assert direct == pytest.approx(via_family, rel=1e-12)


def test_rademacher_mean_at_lambda_03():
    rngs = [substream(1, r) for r in range(20000)]
    fam = GeneratorSpec("Rademacher", {}, 100).build()
    last = list(iter_chunks(fam, rngs, 100, 100))[-1].column(100)
    vals = np.exp(fam.log_value(last, 0.3))
    assert vals.mean() <= 1 + 3 * vals.std(ddof=1) / math.sqrt(len(vals))
