import math

import numpy as np
import pytest
from scipy import stats as sst

from stabsim import stats as st
from stabsim.functionals import TestFunction, XiFunctional
from stabsim.limit_engine import EstimateWithError
from stabsim.point_process import DensityModel, MarkDistribution
from stabsim.stats import ProcessSpec, SampleSet

VOR = XiFunctional("voronoi-volume")
GV = XiFunctional("germ-volume")
NONE = MarkDistribution.none()
A_BOX = TestFunction.indicator_box((0.25, 0.25), (0.75, 0.75))


# ---------------------------------------------------------------------------
# containers


def test_sample_set_validation():
    with pytest.raises(ValueError):
        SampleSet(np.array([]))
    with pytest.raises(ValueError):
        SampleSet(np.array([1.0, np.nan]))
    s = SampleSet(np.arange(6.0).reshape(3, 2))
    assert s.n == 3 and s.dim == 2
    assert np.array_equal(s.column(1).values, [1.0, 3.0, 5.0])


def test_process_spec_validation():
    with pytest.raises(ValueError):
        ProcessSpec.poisson(0.0)
    with pytest.raises(ValueError):
        ProcessSpec.binomial(0)
    with pytest.raises(ValueError):
        ProcessSpec("cox", lam=1.0)
    assert ProcessSpec.binomial(50).scale == 50.0


def test_replicate_functional_columns():
    z = TestFunction.constant(0.0)
    s = st.replicate_functional(VOR, [A_BOX, A_BOX, z], ProcessSpec.poisson(100), DensityModel.uniform(), NONE, 50, 3)
    assert s.values.shape == (50, 3)
    assert np.array_equal(s.values[:, 0], s.values[:, 1])
    assert np.all(s.values[:, 2] == 0.0)
    assert np.corrcoef(s.values[:, 0], s.values[:, 1])[0, 1] == pytest.approx(1.0)


def test_replicate_functional_reproducible():
    args = (VOR, [A_BOX], ProcessSpec.poisson(100), DensityModel.uniform(), NONE, 20, 4)
    a = st.replicate_functional(*args)
    b = st.replicate_functional(*args, jobs=2)
    assert np.array_equal(a.values, b.values)


def test_voronoi_total_is_deterministic():
    # cells tile the plane, so <1_A, mu_lam> = lam |A| for every sample
    s = st.replicate_functional(VOR, [A_BOX], ProcessSpec.poisson(300), DensityModel.uniform(), NONE, 20, 5)
    assert np.allclose(s.values, 75.0, rtol=1e-12)


def test_poisson_and_binomial_means_agree():
    # A sits well inside the support, so the coverage mean is exact at finite lam
    kappa, marks, lam = DensityModel.uniform(), MarkDistribution.fixed(0.5), 300
    target = 0.25 * (1 - math.exp(-math.pi * 0.25))
    p = st.replicate_functional(GV, [A_BOX], ProcessSpec.poisson(lam), kappa, marks, 300, 5)
    b = st.replicate_functional(GV, [A_BOX], ProcessSpec.binomial(lam), kappa, marks, 300, 6)
    ep = EstimateWithError.from_samples(p.values[:, 0]).scaled(1 / lam)
    eb = EstimateWithError.from_samples(b.values[:, 0]).scaled(1 / lam)
    assert abs(ep.z_score(eb.value, eb.std_error)) <= 3
    assert abs(ep.z_score(target)) <= 3
    assert abs(eb.z_score(target)) <= 3


# ---------------------------------------------------------------------------
# normality


def test_normality_rejection_rate_under_null():
    rng = np.random.default_rng(7)
    trials, alpha = 300, 0.05
    rejected = sum(not st.normality_test(SampleSet(rng.normal(3.0, 2.0, 200)), alpha).passed for _ in range(trials))
    # two-sided binomial 99.9% band around the nominal rate
    lo, hi = sst.binom.ppf([0.0005, 0.9995], trials, alpha)
    assert lo <= rejected <= hi


def test_normality_pvalue_matches_lilliefors_table():
    # the 5% critical value of the Lilliefors statistic is ~0.886 / sqrt(n)
    null = st.lilliefors_null(500)
    assert np.quantile(null, 0.95) == pytest.approx(0.886 / math.sqrt(500), rel=0.05)


def test_normality_constant_samples_are_degenerate():
    r = st.normality_test(SampleSet(np.full(200, 2.5)))
    assert r.verdict == "degenerate" and not r.passed


def test_normality_detects_exponential():
    x = np.random.default_rng(8).exponential(size=500)
    r = st.normality_test(SampleSet(x))
    assert r.verdict == "fail" and r.p_value < 1e-3


def test_normality_predicted_variance_details():
    x = np.random.default_rng(9).normal(0, 2.0, 400)
    good = st.normality_test(SampleSet(x), predicted_variance=4.0).details["predicted"]
    bad = st.normality_test(SampleSet(x), predicted_variance=1.0).details["predicted"]
    assert good["p_value"] > 0.01 and bad["p_value"] < 1e-6


def test_normality_too_few_samples():
    with pytest.raises(ValueError):
        st.normality_test(SampleSet(np.arange(50.0)))


# ---------------------------------------------------------------------------
# multivariate


def test_multivariate_accepts_matching_gaussian():
    S = np.array([[2.0, 0.6], [0.6, 1.0]])
    x = np.random.default_rng(10).multivariate_normal([0, 0], S, 3000)
    r = st.multivariate_gaussian_check(SampleSet(x), S, boot=2000)
    assert r.passed
    assert r.details["cov_rel_error"] < 0.15


def test_multivariate_rejects_wrong_covariance():
    S = np.array([[2.0, 0.6], [0.6, 1.0]])
    x = np.random.default_rng(11).multivariate_normal([0, 0], S, 3000)
    assert not st.multivariate_gaussian_check(SampleSet(x), np.eye(2), boot=2000).passed


def test_multivariate_zero_prediction_fails_on_noise():
    x = np.random.default_rng(12).standard_normal((500, 2))
    assert not st.multivariate_gaussian_check(SampleSet(x), np.zeros((2, 2)), boot=2000).passed


def test_multivariate_rank_one():
    z = np.random.default_rng(13).standard_normal(1000)
    x = np.column_stack([z, 2 * z])
    S = np.array([[1.0, 2.0], [2.0, 4.0]])
    assert st.multivariate_gaussian_check(SampleSet(x), S, boot=2000).passed


def test_multivariate_rejects_non_gaussian_margin():
    rng = np.random.default_rng(14)
    x = np.column_stack([rng.exponential(size=2000), rng.exponential(size=2000)])
    assert not st.multivariate_gaussian_check(SampleSet(x), np.eye(2), boot=2000).passed


def test_multivariate_validates_prediction():
    x = np.random.default_rng(15).standard_normal((200, 2))
    with pytest.raises(ValueError):
        st.multivariate_gaussian_check(SampleSet(x), np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        st.multivariate_gaussian_check(SampleSet(x), np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        st.multivariate_gaussian_check(SampleSet(x[:, 0]), np.eye(1))


# ---------------------------------------------------------------------------
# tails


def test_fit_tail_recovers_synthetic_power_law():
    u = np.random.default_rng(16).random(20_000)
    v = np.ceil(u ** (-1 / 3.0))  # P[V > s] = s^-3 at integers
    fit = st.fit_tail(v)
    assert fit.model == "power-law"
    assert fit.exponent_or_rate == pytest.approx(3.0, abs=0.2)


def test_fit_tail_recovers_synthetic_geometric():
    v = np.random.default_rng(17).geometric(0.3, 20_000).astype(float)
    fit = st.fit_tail(v)
    assert fit.model == "exponential"
    assert fit.exponent_or_rate == pytest.approx(math.log(0.7), abs=0.03)


def test_fit_tail_errors():
    with pytest.raises(ValueError):
        st.fit_tail(np.ones(10))
    with pytest.raises(ValueError):
        st.fit_tail(np.append(np.ones(200), np.inf))


def test_fixed_radius_germs_give_step_tail():
    fit = st.tail_estimate(GV, ProcessSpec.homogeneous(1.0), (0.0, 0.0), reps=200, marks=MarkDistribution.fixed(0.5), seed=18)
    assert fit.model == "step"
    assert fit.exponent_or_rate == 1.0


def test_pareto_germs_give_power_tail():
    marks = MarkDistribution.pareto(1.0, 5.0)
    fit = st.tail_estimate(GV, ProcessSpec.poisson(100), (0.5, 0.5), reps=4000, kappa=DensityModel.uniform(), marks=marks, seed=19)
    assert fit.model == "power-law"
    assert 4.0 <= fit.exponent_or_rate <= 6.0


def test_voronoi_tail_is_exponential():
    fit = st.tail_estimate(VOR, ProcessSpec.homogeneous(1.0), (0.0, 0.0), reps=1000, seed=20)
    assert fit.model == "exponential"
    assert fit.exponent_or_rate < 0


def test_tail_inserted_point_limit():
    with pytest.raises(ValueError):
        st.tail_samples(VOR, ProcessSpec.homogeneous(1.0), (0, 0), [(1, 0)] * 3, reps=100)


# ---------------------------------------------------------------------------
# moments


def test_moment_probe_bounded_germs():
    r = 0.5
    e = st.moment_probe(GV, 100.0, DensityModel.uniform(), MarkDistribution.fixed(r), 4.0, 200, seed=21)
    assert 0 < e.value <= (math.pi * r * r) ** 4 + 1e-12


def test_moment_probe_voronoi_cell_moments():
    # typical Poisson-Voronoi cell: E A = 1, E A^2 ~ 1.280 at unit intensity
    k = DensityModel.uniform()
    m1 = st.moment_probe(VOR, 200.0, k, NONE, 1.0, 2000, seed=22, x=(0.5, 0.5))
    m2 = st.moment_probe(VOR, 200.0, k, NONE, 2.0, 2000, seed=22, x=(0.5, 0.5))
    assert abs(m1.z_score(1.0)) <= 3
    assert abs(m2.z_score(1.2802)) <= 3


def test_moment_probe_validation():
    with pytest.raises(ValueError):
        st.moment_probe(VOR, 10.0, DensityModel.uniform(), NONE, 0.5, 200)
    with pytest.raises(ValueError):
        st.moment_probe(VOR, 10.0, DensityModel.uniform(), NONE, 1.0, 10)
