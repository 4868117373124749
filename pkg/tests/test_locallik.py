import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize, stats

from conftest import gaussian_pairs
from lgcde.errors import NoLocalMassError, ValidationError
from lgcde.locallik import (RHO_MAX, PairFit, fit_rho, fit_rho_many, gradient_hessian, kernel_moments,
                            local_loglik, log_psi2, objective, penalty_drho, penalty_integral, psi2,
                            score_u)

rhos = st.floats(-0.99, 0.99)
coords = st.floats(-4, 4)


def test_psi2_values():
    assert psi2(0.0, 0.0, 0.0) == pytest.approx(1 / (2 * np.pi), rel=1e-15)
    assert psi2(0.0, 0.0, 0.6) == pytest.approx(1 / (2 * np.pi * 0.8), rel=1e-14)
    assert psi2(1.0, 1.0, 0.5) == pytest.approx(0.0943539, abs=5e-7)


@settings(max_examples=50, deadline=None)
@given(coords, coords, rhos)
def test_psi2_matches_scipy(z1, z2, rho):
    ref = stats.multivariate_normal([0, 0], [[1, rho], [rho, 1]]).pdf([z1, z2])
    assert psi2(z1, z2, rho) == pytest.approx(ref, rel=1e-10, abs=1e-300)


def test_domain_errors():
    for bad in (1.0, -1.0, 1.5, np.nan):
        with pytest.raises(ValidationError):
            psi2(0.0, 0.0, bad)
    with pytest.raises(ValidationError):
        penalty_integral(0.0, 0.0, 0.0, (0.0, 1.0))


def test_score_values():
    assert score_u(1.0, 2.0, 0.0) == 2.0
    assert score_u(0.0, 0.0, 0.5) == pytest.approx(0.5 / 0.75, rel=1e-15)


@settings(max_examples=100, deadline=None)
@given(coords, coords, st.floats(-0.95, 0.95))
def test_score_finite_difference(z1, z2, rho):
    eps = 1e-6
    fd = (log_psi2(z1, z2, rho + eps) - log_psi2(z1, z2, rho - eps)) / (2 * eps)
    assert score_u(z1, z2, rho) == pytest.approx(fd, abs=1e-6 * max(1.0, abs(fd)))


def _penalty_quad(z1, z2, rho, h1, h2):
    # substitute y = z + h u so the kernel becomes two standard normal densities
    om = 1.0 - rho * rho
    c = 1.0 / (2.0 * math.pi) ** 2 / math.sqrt(om)

    def f(u2, u1):
        y1, y2 = z1 + h1 * u1, z2 + h2 * u2
        return c * math.exp(-0.5 * (u1 * u1 + u2 * u2)
                            - (y1 * y1 - 2.0 * rho * y1 * y2 + y2 * y2) / (2.0 * om))

    val, _ = integrate.dblquad(f, -10, 10, -10, 10, epsabs=1e-13, epsrel=1e-12)
    return val


def test_penalty_origin():
    assert penalty_integral(0.0, 0.0, 0.0, 1.0) == pytest.approx(1 / (4 * np.pi), rel=1e-15)
    assert _penalty_quad(0.0, 0.0, 0.0, 1.0, 1.0) == pytest.approx(1 / (4 * np.pi), abs=1e-10)


def test_penalty_quadrature_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        z1, z2 = rng.uniform(-2, 2, 2)
        rho = rng.uniform(-0.9, 0.9)
        h1, h2 = rng.uniform(0.3, 1.5, 2)
        assert abs(penalty_integral(z1, z2, rho, (h1, h2)) - _penalty_quad(z1, z2, rho, h1, h2)) < 1e-8


def test_penalty_small_bandwidth_limit():
    assert penalty_integral(0.7, -0.2, 0.3, 1e-5) == pytest.approx(psi2(0.7, -0.2, 0.3), rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(coords, coords, st.floats(-0.9, 0.9), st.floats(0.2, 3))
def test_penalty_derivative(z1, z2, rho, h):
    eps = 1e-6
    fd = (penalty_integral(z1, z2, rho + eps, h) - penalty_integral(z1, z2, rho - eps, h)) / (2 * eps)
    assert penalty_drho(z1, z2, rho, h) == pytest.approx(fd, abs=1e-8)


def test_single_datum_loglik():
    z = np.array([0.4, -0.3])
    val = local_loglik(z[None, :], z, 0.2, (1.0, 1.0))
    expect = log_psi2(z[0], z[1], 0.2) / (2 * np.pi) - penalty_integral(z[0], z[1], 0.2, 1.0)
    assert val == pytest.approx(expect, rel=1e-14)


def test_moment_objective_equals_direct_sum():
    data = gaussian_pairs(300, 0.3, 1)
    pts = np.array([[0.0, 0.0], [1.2, -0.5], [-2.0, -1.0]])
    m = kernel_moments(data, pts, (0.6, 0.8))
    for rho in (-0.7, 0.0, 0.45):
        direct = [local_loglik(data, p, rho, (0.6, 0.8)) for p in pts]
        np.testing.assert_allclose(objective(np.full(3, rho), m), direct, rtol=1e-12, atol=1e-15)


def test_loglik_derivative_is_weighted_score():
    data = gaussian_pairs(200, -0.2, 2)
    z, h, rho, eps = np.array([0.3, 0.1]), (0.7, 0.7), 0.25, 1e-6
    fd = (local_loglik(data, z, rho + eps, h) - local_loglik(data, z, rho - eps, h)) / (2 * eps)
    from lgcde.locallik import product_kernel
    w = product_kernel(data[:, 0] - z[0], data[:, 1] - z[1], h)
    score = np.mean(w * score_u(data[:, 0], data[:, 1], rho)) - penalty_drho(z[0], z[1], rho, h)
    assert fd == pytest.approx(score, abs=1e-6)
    g, _ = gradient_hessian(np.array([rho]), kernel_moments(data, z[None, :], h))
    assert g[0] == pytest.approx(score, abs=1e-12)


def test_loglik_finite_over_range():
    data = gaussian_pairs(100, 0.9, 3)
    vals = [local_loglik(data, (0.5, 0.5), r, 0.5) for r in np.linspace(-RHO_MAX, RHO_MAX, 41)]
    assert np.all(np.isfinite(vals))


def test_gaussian_recovery():
    data = gaussian_pairs(5000, 0.5, 4)
    g = np.linspace(-1, 1, 3)
    pts = np.array([(a, b) for a in g for b in g])
    fit = fit_rho_many(data, pts, 0.5)
    assert np.all((fit.rho >= 0.4) & (fit.rho <= 0.6))


def test_independence_near_zero():
    data = gaussian_pairs(5000, 0.0, 5)
    assert abs(fit_rho(data, (0.0, 0.0), 0.5).rho) < 0.1


def test_no_local_mass():
    data = gaussian_pairs(100, 0.5, 6)
    with pytest.raises(NoLocalMassError, match="no local mass"):
        fit_rho(data, (50.0, 50.0), 0.5)


def test_too_few_points():
    with pytest.raises(ValidationError):
        fit_rho(gaussian_pairs(19, 0.5, 0), (0, 0), 0.5)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(0.3, 2.0))
def test_symmetries(seed, z1, z2, h):
    data = gaussian_pairs(60, 0.4, seed)
    r = fit_rho_many(data, np.array([[z1, z2]]), h).rho[0]
    swapped = fit_rho_many(data[:, ::-1].copy(), np.array([[z2, z1]]), h).rho[0]
    flipped = fit_rho_many(data * [1, -1], np.array([[z1, -z2]]), h).rho[0]
    assert swapped == r
    assert flipped == -r


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(0.2, 3.0))
def test_interior_fits_are_stationary(seed, h):
    data = gaussian_pairs(80, 0.6, seed)
    pts = np.random.default_rng(seed).uniform(-2, 2, (10, 2))
    fit = fit_rho_many(data, pts, h)
    inside = ~fit.boundary & fit.has_mass
    g, _ = gradient_hessian(fit.rho, kernel_moments(data, pts, h))
    assert np.all(np.abs(g[inside]) < 1e-6)


def test_large_bandwidth_gives_global_mle():
    data = gaussian_pairs(300, 0.4, 8)
    res = optimize.minimize_scalar(lambda r: -np.sum(log_psi2(data[:, 0], data[:, 1], r)),
                                   bounds=(-0.99, 0.99), method="bounded",
                                   options={"xatol": 1e-12})
    assert fit_rho(data, (0.0, 0.0), 100.0).rho == pytest.approx(res.x, abs=1e-3)


def test_pairfit_shapes_and_determinism():
    pf = PairFit(gaussian_pairs(300, 0.5, 9), 0.8, threads=1)
    g = np.linspace(-1, 1, 600).reshape(20, 30)
    r1 = pf.rho_at(g, -g)
    pf4 = PairFit(pf.data, 0.8, threads=4)
    r4 = pf4.rho_at(g, -g)
    assert r1.shape == (20, 30)
    assert r1.tobytes() == r4.tobytes()
    assert np.all(np.abs(r1) <= RHO_MAX)
