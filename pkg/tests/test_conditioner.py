import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import gaussian_pairs
from lgcde.bandwidth import BandwidthPlan, select_bandwidths
from lgcde.conditioner import (ConditionalDensity, ConditionalEstimator, assemble_R, condition,
                               conditional_quantile, estimate_conditional, repair_psd)
from lgcde.data import Dataset, Partition, make_partition
from lgcde.errors import NoLocalMassError, NumericalError, UnsupportedError, ValidationError
from lgcde.locallik import psi2
from lgcde.marginals import fit_marginal, pseudo_normalize


class ConstFit:
    def __init__(self, rho):
        self.rho = rho

    def rho_at(self, zi, zj):
        return np.full(np.broadcast(zi, zj).shape, self.rho)


def test_assemble_two_variables():
    lcm = assemble_R({(0, 1): ConstFit(0.6)}, [0.1, 0.2])
    np.testing.assert_array_equal(lcm.R, [[1, 0.6], [0.6, 1]])
    assert not lcm.psd_repaired


def test_assemble_independent_is_identity():
    fits = {(0, 1): ConstFit(0.0), (0, 2): ConstFit(0.0), (1, 2): ConstFit(0.0)}
    np.testing.assert_array_equal(assemble_R(fits, [0, 0, 0]).R, np.eye(3))


def test_assemble_missing_pair():
    with pytest.raises(ValidationError):
        assemble_R({(0, 1): ConstFit(0.1)}, [0, 0, 0])


def test_repair_indefinite():
    fits = {(0, 1): ConstFit(0.9), (0, 2): ConstFit(0.9), (1, 2): ConstFit(-0.9)}
    raw = np.array([[1, 0.9, 0.9], [0.9, 1, -0.9], [0.9, -0.9, 1]])
    assert np.linalg.eigvalsh(raw)[0] < 0
    lcm = assemble_R(fits, [0, 0, 0])
    assert lcm.psd_repaired
    assert np.linalg.eigvalsh(lcm.R)[0] >= 1e-6
    np.testing.assert_array_equal(np.diag(lcm.R), 1.0)
    np.testing.assert_array_equal(lcm.R, lcm.R.T)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-0.995, 0.995), min_size=6, max_size=6))
def test_repair_random_matrices(offd):
    R = np.eye(4)
    R[np.triu_indices(4, 1)] = offd
    R = np.triu(R) + np.triu(R, 1).T
    out, flag = repair_psd(R)
    assert np.linalg.eigvalsh(out)[0] >= 1e-6 * 0.999
    assert np.all(np.diag(out) == 1.0)
    assert np.all(np.abs(out[np.triu_indices(4, 1)]) <= 0.995)
    if not flag:
        assert np.array_equal(out, R)


def test_condition_scalar():
    p = condition(np.array([[1, 0.6], [0.6, 1]]), [1.0], 1)
    assert p.mu_star[0] == pytest.approx(0.6, rel=1e-15)
    assert p.sigma_star[0, 0] == pytest.approx(0.64, rel=1e-15)


def test_condition_identity():
    p = condition(np.eye(4), [0.3, -2.0], 2)
    np.testing.assert_array_equal(p.mu_star, 0.0)
    np.testing.assert_array_equal(p.sigma_star, np.eye(2))


def test_condition_linear_algebra_oracle():
    R = np.array([[1, 0.5, 0.3], [0.5, 1, 0.2], [0.3, 0.2, 1]])
    p = condition(R, [1.0, 1.0], 1)
    R12, R22 = R[0, 1:], R[1:, 1:]
    mu = R12 @ np.linalg.inv(R22) @ np.ones(2)
    s = 1 - R12 @ np.linalg.inv(R22) @ R12
    assert p.mu_star[0] == pytest.approx(mu, rel=1e-13)
    assert p.mu_star[0] == pytest.approx(0.66667, abs=5e-6)
    assert p.sigma_star[0, 0] == pytest.approx(s, rel=1e-13)
    assert p.sigma_star[0, 0] == pytest.approx(0.70833, abs=5e-6)


def test_condition_rejects_singular_block():
    R = np.ones((3, 3))
    with pytest.raises(NumericalError):
        condition(R, [0.0, 0.0], 1)


@settings(max_examples=100, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4), st.floats(-0.99, 0.99))
def test_fraction_of_gaussians(z1, z2, rho):
    p = condition(np.array([[1, rho], [rho, 1]]), [z2], 1)
    mu, s2 = p.mu_star[0], p.sigma_star[0, 0]
    lhs = stats.norm.pdf(z1, mu, np.sqrt(s2)) * stats.norm.pdf(z2)
    assert lhs == pytest.approx(psi2(z1, z2, rho), rel=1e-12, abs=1e-300)


def _normal_density(mu=0.0, sd=1.0, lo=-6, hi=6, n=4001):
    x = np.linspace(lo, hi, n)
    f = stats.norm.pdf(x, mu, sd)
    f /= np.trapezoid(f, x)
    return ConditionalDensity((x,), f, 1.0, None, None, np.zeros(1), np.zeros(n, bool))


def test_quantile_of_normal():
    cd = _normal_density()
    assert conditional_quantile(cd, 0.95) == pytest.approx(1.6449, abs=0.01)
    step = cd.grid[0][1] - cd.grid[0][0]
    assert abs(conditional_quantile(cd, 0.5)) <= step


def test_quantile_extrapolation_flag():
    cd = _normal_density(lo=-4, hi=4)
    val, flag = conditional_quantile(cd, 1 - 1e-9, with_flag=True)
    assert val == cd.grid[0][-1] and flag
    val, flag = conditional_quantile(cd, 1e-9, with_flag=True)
    assert val == cd.grid[0][0] and flag
    val, flag = conditional_quantile(cd, 0.3, with_flag=True)
    assert not flag


def test_quantile_monotone():
    cd = _normal_density(0.4, 1.3)
    qs = [cd.quantile(a) for a in (0.005, 0.01, 0.05, 0.5, 0.95)]
    assert qs == sorted(qs)


def test_quantile_needs_scalar_response():
    x = np.linspace(0, 1, 5)
    cd = ConditionalDensity((x, x), np.ones((5, 5)), 1.0, None, None, np.zeros(1), None)
    with pytest.raises(UnsupportedError):
        conditional_quantile(cd, 0.5)


@pytest.fixture(scope="module")
def gaussian_estimate():
    ds = Dataset(gaussian_pairs(5000, 0.5, 21), ("A", "B"))
    part = make_partition(["A"], ["B"], ds)
    plan = BandwidthPlan.fixed(0.5, part.pairs())
    return ds, part, plan, estimate_conditional(ds, part, plan, [1.0])


def test_gaussian_conditional_ise(gaussian_estimate):
    cd = gaussian_estimate[3]
    x = cd.grid[0]
    ise = np.trapezoid((cd.values - stats.norm.pdf(x, 0.5, np.sqrt(0.75))) ** 2, x)
    assert ise < 0.01
    assert cd.integral() == pytest.approx(1.0, abs=1e-3)
    assert cd.normalizer > 0
    assert x.size == 2000


def test_grid_spans_marginal_quantiles(gaussian_estimate):
    ds, _, _, cd = gaussian_estimate
    m = fit_marginal(ds.values[:, 0])
    np.testing.assert_allclose([cd.grid[0][0], cd.grid[0][-1]], m.quantile(np.array([0.001, 0.999])),
                               atol=1e-10)


def test_scalar_path_consistency(gaussian_estimate):
    ds, part, plan, cd = gaussian_estimate
    est = ConditionalEstimator(ds, part, plan)
    z2 = est.conditioning_z([1.0])
    zr, _ = est.pseudo.z_of_x(cd.grid[0][:, None], [0])
    rho = est.fits[(0, 1)].rho_at(zr[:, 0], np.full(zr.shape[0], z2[0]))
    np.testing.assert_allclose(cd.mu_star[:, 0], rho * z2[0], rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(cd.sigma_star[:, 0, 0], 1 - rho * rho, rtol=1e-12)


def test_independent_response_matches_marginal():
    rng = np.random.default_rng(22)
    ds = Dataset(rng.standard_normal((5000, 2)), ("A", "B"))
    part = Partition((0,), (1,))
    cd = estimate_conditional(ds, part, BandwidthPlan.fixed(0.5, part.pairs()), [0.7])
    x = cd.grid[0]
    marg = fit_marginal(ds.values[:, 0]).density(x)
    marg /= np.trapezoid(marg, x)
    assert np.trapezoid((cd.values - marg) ** 2, x) < 0.01


def test_brute_force_unnormalized_value():
    ds = Dataset(gaussian_pairs(60, 0.4, 23))
    part = Partition((0,), (1,))
    plan = BandwidthPlan.fixed(0.7, part.pairs())
    est = ConditionalEstimator(ds, part, plan)
    cd = est.conditional([0.2], grid_size=50)
    z2 = est.conditioning_z([0.2])[0]
    x = cd.grid[0]
    m0 = est.pseudo.transforms[0]
    z1, _ = m0.z_of_x(x)
    rho = est.fits[(0, 1)].rho_at(z1, np.full(z1.shape, z2))
    raw = psi2(z1, z2, rho) / stats.norm.pdf(z2) * m0.density(x) / stats.norm.pdf(z1)
    np.testing.assert_allclose(cd.values * cd.normalizer, raw, rtol=1e-12)


def test_two_responses_default_grid():
    rng = np.random.default_rng(24)
    x = rng.standard_normal((400, 3)) @ np.linalg.cholesky([[1, .4, .3], [.4, 1, .2], [.3, .2, 1]]).T
    ds = Dataset(x, ("A", "B", "C"))
    part = make_partition(["A", "B"], ["C"], ds)
    cd = estimate_conditional(ds, part, BandwidthPlan.fixed(0.8, part.pairs()), [0.5])
    assert cd.values.shape == (100, 100)
    assert cd.integral() == pytest.approx(1.0, abs=1e-3)
    assert np.all(np.linalg.eigvalsh(cd.sigma_star) > 0)


def test_three_responses_need_grid():
    rng = np.random.default_rng(25)
    ds = Dataset(rng.standard_normal((100, 4)))
    part = Partition((0, 1, 2), (3,))
    plan = BandwidthPlan.fixed(1.0, part.pairs())
    with pytest.raises(UnsupportedError, match="grid normalization refused"):
        estimate_conditional(ds, part, plan, [0.0])
    g = np.linspace(-2, 2, 9)
    cd = estimate_conditional(ds, part, plan, [0.0], grid=(g, g, g))
    assert cd.values.shape == (9, 9, 9)


def test_far_conditioning_point():
    ds = Dataset(gaussian_pairs(200, 0.5, 26))
    part = Partition((0,), (1,))
    with pytest.raises(NoLocalMassError, match="no local mass"):
        estimate_conditional(ds, part, BandwidthPlan.fixed(0.5, part.pairs()), [80.0])


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 10_000))
def test_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((150, 3)) @ np.linalg.cholesky([[1, .5, .2], [.5, 1, .3], [.2, .3, 1]]).T
    g = np.exp
    part = Partition((0,), (1, 2))
    ds_a = Dataset(x)
    ds_b = Dataset(np.column_stack([x[:, 0], g(x[:, 1:])]))
    plan_a = select_bandwidths(pseudo_normalize(ds_a), part.pairs())
    plan_b = select_bandwidths(pseudo_normalize(ds_b), part.pairs())
    assert plan_a.per_pair == plan_b.per_pair
    x2 = x[5, 1:]
    a = estimate_conditional(ds_a, part, plan_a, x2, grid_size=200)
    b = estimate_conditional(ds_b, part, plan_b, g(x2), grid_size=200)
    assert np.array_equal(a.mu_star, b.mu_star)
    assert np.array_equal(a.sigma_star, b.sigma_star)
    assert np.array_equal(a.values, b.values)


def test_threads_do_not_change_values():
    ds = Dataset(gaussian_pairs(700, 0.3, 27))
    part = Partition((0,), (1,))
    plan = BandwidthPlan.fixed(0.6, part.pairs())
    a = estimate_conditional(ds, part, plan, [0.1], threads=1)
    b = estimate_conditional(ds, part, plan, [0.1], threads=4)
    assert a.values.tobytes() == b.values.tobytes()
