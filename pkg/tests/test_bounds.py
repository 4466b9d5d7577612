import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marginlab import bounds
from marginlab.bounds import (DensityPair, Gaussian, Mixture, chi2_divergence, fenchel_identity_check,
                              finite_step_margin_floor, generalization_bound, optimal_gamma_sweep,
                              prop1_direction_bound, weighted_rademacher_bound)
from marginlab.core import Dataset, DomainError, WeightVector, generalized_kl
from marginlab.predictors import HomogeneousMLP, LinearPredictor
from marginlab.trainer import Snapshot


def test_prop1_bound_examples():
    assert prop1_direction_bound(2, 0.0, 1.0, 10.0, 1.0) == pytest.approx(2 * (math.log(2) + 1) / 10)
    assert prop1_direction_bound(2, 0.0, 1.0, 10.0, 1.0) == pytest.approx(0.33863, abs=1e-5)
    assert prop1_direction_bound(5, 0.3, 2.0, 20.0, 0.5) == pytest.approx(prop1_direction_bound(5, 0.3, 2.0, 10.0, 0.5) / 2)
    n = 4
    kl = generalized_kl(np.full(n, 1 / n), np.ones(n))
    assert kl == pytest.approx(-math.log(n))
    assert prop1_direction_bound(n, kl, 3.0, 7.0, 0.5) == pytest.approx(2 * 3.0 / 3.5)
    with pytest.raises(DomainError):
        prop1_direction_bound(2, 0.0, 1.0, 0.0, 1.0)
    with pytest.raises(DomainError):
        prop1_direction_bound(2, 0.0, 1.0, 1.0, -1.0)


def test_fenchel_examples():
    w = np.array([1.0, 2.0, 5.0])
    p = w / w.sum()
    res = fenchel_identity_check(p, w)
    assert res.closed_form == pytest.approx(math.log(3) + float(np.sum(p * np.log(p / w))))
    assert res.abs_diff <= 1e-6
    one = fenchel_identity_check([1.0], [3.0])
    assert one.closed_form == pytest.approx(-math.log(3.0))
    assert one.numeric == pytest.approx(-math.log(3.0), abs=1e-9)
    sym = fenchel_identity_check([0.5, 0.5], [1.0, 1.0])
    assert sym.closed_form == pytest.approx(0.0, abs=1e-15)
    assert abs(sym.numeric) <= 1e-9


def test_fenchel_zero_entries_restrict_to_support():
    res = fenchel_identity_check([0.0, 0.3, 0.7], WeightVector(np.array([2.0, 0.5, 3.0]), 3.0))
    assert res.abs_diff <= 1e-6


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_fenchel_random(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    p = rng.dirichlet(np.ones(n))
    w = rng.uniform(0.1, 10, n)
    assert fenchel_identity_check(p, w).abs_diff <= 1e-6


def test_floor_examples():
    assert finite_step_margin_floor(2.0, 1.0, 2.0, 1.0, 0.1) == pytest.approx(0.1 / math.sqrt(2))
    assert finite_step_margin_floor(2.0, 2.0, 2.0, 0.5, 0.1) == pytest.approx(0.025)
    assert finite_step_margin_floor(1 + 1e-12, 1.0, 2.0, 1.0, 1 - 1e-12) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        finite_step_margin_floor(2.5, 1.0, 2.0, 1.0, 0.1)
    with pytest.raises(DomainError):
        finite_step_margin_floor(1.0, 1.0, 2.0, 1.0, 0.1)
    with pytest.raises(DomainError):
        finite_step_margin_floor(2.0, 1.0, 2.0, 1.0, 0.05)


def test_chi2_identical_is_zero():
    g = Gaussian.isotropic([0.5, -1.0], 1.3)
    assert chi2_divergence(DensityPair(g, g)).value == 0.0
    mc = chi2_divergence(DensityPair(g, g, mc_samples=5000), method="monte_carlo")
    assert mc.method == "monte_carlo"
    assert abs(mc.value) <= 3 * mc.stderr + 1e-12


def test_chi2_unit_shift_against_monte_carlo():
    pair = DensityPair(Gaussian.isotropic([0.0], 1.0), Gaussian.isotropic([1.0], 1.0), mc_samples=1_000_000, seed=3)
    closed = chi2_divergence(pair)
    assert closed.method == "closed_form"
    assert closed.value == pytest.approx(math.e - 1)
    mc = chi2_divergence(pair, method="monte_carlo")
    assert abs(mc.value - closed.value) <= 3 * mc.stderr


def test_chi2_truncated_closed_form_matches_monte_carlo():
    pair = DensityPair(Gaussian.isotropic([0.0, 0.0], 1.0, 2.5), Gaussian.isotropic([0.8, 0.0], 1.0, 2.5),
                       mc_samples=400_000, seed=1)
    closed = chi2_divergence(pair)
    mc = chi2_divergence(pair, method="monte_carlo")
    assert closed.value < math.expm1(0.64)
    assert abs(mc.value - closed.value) <= 4 * mc.stderr


def test_chi2_falls_back_for_mixtures():
    src = Gaussian.isotropic([0.0], 1.0)
    tgt = Mixture((Gaussian.isotropic([-0.5], 1.0), Gaussian.isotropic([0.5], 1.0)), (1.0, 1.0))
    res = chi2_divergence(DensityPair(src, tgt, mc_samples=20_000), method="closed_form")
    assert res.method == "monte_carlo" and res.notice
    assert res.value >= -3 * res.stderr
    unequal = DensityPair(Gaussian.isotropic([0.0], 1.0), Gaussian.isotropic([0.0], 1.2), mc_samples=1000)
    assert chi2_divergence(unequal).method == "monte_carlo"


def test_density_ratio_integrates_to_one():
    pair = DensityPair(Gaussian.isotropic([0.0, 0.0], 1.0, 10.0), Gaussian.isotropic([1.0, 0.0], 1.0, 10.0))
    X = pair.source.sample(np.random.default_rng(0), 200_000)
    assert np.mean(pair.density_ratio(X)) == pytest.approx(1.0, abs=0.02)


def _data_with_ratios(eta, X=None):
    n = len(eta)
    X = np.tile([[1.0, 0.0]], (n, 1)) if X is None else X
    return Dataset(X, np.ones(n), np.asarray(eta, dtype=float))


def test_rademacher_examples():
    data = _data_with_ratios(np.ones(100))
    assert weighted_rademacher_bound(data, 1, 1.0, 1.0) == pytest.approx((math.sqrt(2 * math.log(2)) + 1) / 10)
    assert weighted_rademacher_bound(data, 1, 1.0, 1.0) == pytest.approx(0.21774, abs=1e-5)
    rng = np.random.default_rng(0)
    eta = rng.uniform(0.2, 3, 50)
    a = weighted_rademacher_bound(_data_with_ratios(eta), 3, 0.4, 2.5)
    assert weighted_rademacher_bound(_data_with_ratios(2 * eta), 3, 0.4, 2.5) == pytest.approx(2 * a)
    with mpmath.workdps(40):
        m2 = mpmath.fsum(mpmath.mpf(float(e)) ** 2 for e in eta) / 50
        ref = 2.5 * (mpmath.sqrt(2 * mpmath.log(2) * 3) + 1) * mpmath.mpf(0.4) * mpmath.sqrt(m2) / mpmath.sqrt(50)
    assert a == pytest.approx(float(ref), rel=1e-13)
    with pytest.raises(DomainError):
        weighted_rademacher_bound(Dataset(np.ones((2, 1)), np.ones(2)), 1, 1.0, 1.0)


def test_generalization_bound_terms():
    X = np.array([[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]])
    data = Dataset(X, np.ones(3), np.ones(3))
    lin = LinearPredictor(2)
    theta = np.array([1.0, 1.0])
    m = (X @ theta) / np.linalg.norm(theta)
    low = generalization_bound(data, lin, theta, 0.9 * m.min(), 0.1, chi2=0.0)
    assert low.term_I == 0.0
    high = generalization_bound(data, lin, theta, 1.01 * m.max(), 0.1, chi2=0.0)
    assert high.term_I == 1.0
    assert high.total == pytest.approx(high.term_I + high.term_II + high.epsilon)
    assert high.C_sup_norm == pytest.approx(1.0) and high.H == 1 and high.n == 3
    with pytest.raises(DomainError):
        generalization_bound(data, lin, theta, 4.0, 0.1, chi2=0.0)
    with pytest.raises(DomainError):
        generalization_bound(data, lin, theta, 0.0, 0.1, chi2=0.0)
    with pytest.raises(DomainError):
        generalization_bound(Dataset(X, np.ones(3)), lin, theta, 0.5, 0.1)


def test_term_two_arithmetic():
    n = 100
    X = np.tile([[1.0, 0.0]], (n, 1))
    data = Dataset(X, np.ones(n), np.ones(n))
    mlp = HomogeneousMLP([2, 2, 1])
    theta = mlp.flatten([np.eye(2), np.ones((1, 2))])
    rep = generalization_bound(data, mlp, theta, 1.0, 0.1, chi2=0.0)
    assert rep.term_II == pytest.approx(1 / (math.sqrt(2) * 10))
    eps = math.sqrt(math.log(math.log2(4.0)) / n) + math.sqrt(math.log(10.0) / n)
    assert rep.epsilon == pytest.approx(eps)


def test_plug_in_chi2_when_no_pair():
    eta = np.array([0.5, 1.5, 1.0, 1.0])
    data = _data_with_ratios(eta, np.array([[1.0, 0.1], [1.0, -0.1], [0.5, 0.2], [0.8, 0.0]]))
    rep = generalization_bound(data, LinearPredictor(2), np.array([1.0, 0.0]), 0.5, 0.1)
    assert rep.chi2_method == "plug_in"
    assert rep.chi2 == pytest.approx(np.mean(eta ** 2) - 1)


def test_sweep_minimizer_above_min_margin():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(30, 2))
    theta = np.array([1.0, 0.3])
    y = np.sign(X @ theta)
    data = Dataset(X, y, rng.uniform(0.5, 2, 30))
    sw = optimal_gamma_sweep(data, LinearPredictor(2), theta, 0.05, chi2=0.5)
    m = y * (X @ theta) / np.linalg.norm(theta)
    assert sw.gamma_opt >= m.min()
    assert sw.total_at_opt == min(r.total for r in sw.curve)
    gammas = [r.gamma_used for r in sw.curve]
    assert gammas == sorted(gammas)
    worse = optimal_gamma_sweep(data, LinearPredictor(2), theta, 0.05, chi2=2.0)
    assert worse.total_at_opt > sw.total_at_opt


def test_sweep_single_sample_exhaustive():
    data = Dataset(np.array([[0.6, 0.8]]), np.ones(1), np.ones(1))
    theta = np.array([1.0, 0.0])
    sw = optimal_gamma_sweep(data, LinearPredictor(2), theta, 0.1, chi2=0.0)
    dense = np.geomspace(1e-3, 4 * (1 - 1e-6), 20_000)
    totals = [generalization_bound(data, LinearPredictor(2), theta, g, 0.1, chi2=0.0).total for g in dense]
    assert sw.total_at_opt <= min(totals) + 1e-9


def test_sweep_csv(tmp_path):
    data = Dataset(np.array([[1.0, 0.0], [0.0, 1.0]]), np.ones(2), np.ones(2))
    sw = optimal_gamma_sweep(data, LinearPredictor(2), np.array([1.0, 1.0]), 0.1, chi2=0.0)
    sw.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "gamma,term_I,term_II,epsilon,total"
    assert len(lines) == len(sw.curve) + 1


def _snap(t, log_risk, gap):
    return Snapshot(t, log_risk, 1.0, 0.0, False, 0.0, 0.0, 0.1, None, gap)


def test_prop2_envelope_and_rate_fit():
    snaps = [_snap(t, math.log(1.0 + 1.0 / t), 0.5 / t) for t in (1, 2, 4, 8, 16)]
    ok = bounds.prop2_risk_envelope(snaps, 2.0, 0.0)
    # the first snapshots have gap >= 0.1 and only produce notes
    assert ok.passed and ok.checked == 2
    bad = [_snap(t, math.log(1.0 + 1e-6), 0.05) for t in (1, 2)]
    assert not bounds.prop2_risk_envelope(bad, 2.0, 0.0).passed
    ts = np.array([2, 10, 100, 1000, 10_000])
    fit = bounds.log2_rate_fit(ts, np.log(ts) ** 2 / ts)
    assert fit.K == pytest.approx(1.0) and fit.passed
    assert not bounds.log2_rate_fit(ts, np.array([1.0, 1.0, 1.0, 1.0, 1.0])).passed
