"""Ground-truth conditional densities, error measure and the naive kernel baseline.

All true conditionals take column 0 as the response and columns ``1..p-1``
as the conditioning block.
"""

from __future__ import annotations

import numpy as np
from scipy import special, stats

from ..conditioner import ConditionalDensity, trapezoid_nd
from ..data import Dataset, Partition
from ..errors import NumericalError, UnsupportedError, ValidationError
from .samplers import (SimSpec, exchangeable_corr, joe_log_abs_deriv, joe_log_abs_dphi_sv,
                       joe_phi_sv, margin_logpdf, margin_ppf, margin_sf)

GRID_QUANTILES = (0.001, 0.999)


def _schur(R):
    R12 = R[0, 1:]
    R22 = R[1:, 1:]
    beta = np.linalg.solve(R22, R12)
    return beta, R[0, 0] - R12 @ beta, R22


def _t_conditional_logpdf(t1, t2, R, dof):
    beta, s2, R22 = _schur(R)
    p2 = t2.size
    maha = t2 @ np.linalg.solve(R22, t2)
    scale = np.sqrt((dof + maha) / (dof + p2) * s2)
    return stats.t.logpdf(t1, dof + p2, loc=beta @ t2, scale=scale)


def _margin_cdf(name, x):
    x = np.asarray(x, dtype=np.float64)
    if name == "std_normal":
        return special.ndtr(x)
    if name == "std_exponential":
        return -np.expm1(-np.maximum(x, 0))
    with np.errstate(divide="ignore"):
        return special.ndtr(np.log(np.maximum(x, 0)))


def _t_scores(name, x, dof):
    """t quantile of the margin probability, taken from whichever tail is more accurate."""
    v = margin_sf(name, x)
    return np.where(v < 0.5, stats.t.isf(v, dof), stats.t.ppf(_margin_cdf(name, x), dof))


def response_margin_ppf(spec: SimSpec, q):
    fam = spec.family
    if fam in ("gaussian_copula", "joe_copula", "t_copula"):
        return margin_ppf(spec.margins, q)
    if fam == "multivariate_t":
        return stats.t.ppf(q, spec.params["dof"])
    if fam == "lognormal_t10_plus_indep_t5":
        return margin_ppf("lognormal", q)
    raise UnsupportedError(f"no marginal for family {fam}")


def truth_grid(spec: SimSpec, size=2000):
    """``size`` equally spaced response values between the true 0.001 and 0.999 quantiles."""
    lo, hi = response_margin_ppf(spec, np.array(GRID_QUANTILES))
    return np.linspace(lo, hi, int(size))


def true_conditional(spec: SimSpec, x2, grid):
    """True density of X1 given ``(X2..Xp) = x2`` on a 1-D grid of X1 values."""
    x1 = np.asarray(grid, dtype=np.float64)
    x2 = np.atleast_1d(np.asarray(x2, dtype=np.float64))
    if x2.size != spec.p - 1:
        raise ValidationError(f"expected {spec.p - 1} conditioning values, got {x2.size}")
    fam, prm = spec.family, spec.params
    with np.errstate(divide="ignore", invalid="ignore"):
        if fam == "gaussian_copula":
            beta, s2, _ = _schur(spec.corr)
            if spec.margins == "std_normal":
                return stats.norm.pdf(x1, beta @ x2, np.sqrt(s2))
            v1 = margin_sf(spec.margins, x1)
            z1 = np.where(v1 < 0.5, -special.ndtri(v1), special.ndtri(_margin_cdf(spec.margins, x1)))
            z2 = -special.ndtri(margin_sf(spec.margins, x2))
            logf = (stats.norm.logpdf(z1, beta @ z2, np.sqrt(s2)) - stats.norm.logpdf(z1)
                    + margin_logpdf(spec.margins, x1))
        elif fam == "multivariate_t":
            return np.exp(_t_conditional_logpdf(x1, x2, spec.corr, float(prm["dof"])))
        elif fam == "t_copula":
            dof = float(prm["dof"])
            t1 = _t_scores(spec.margins, x1, dof)
            t2 = _t_scores(spec.margins, x2, dof)
            logf = (_t_conditional_logpdf(t1, t2, spec.corr, dof) - stats.t.logpdf(t1, dof)
                    + margin_logpdf(spec.margins, x1))
        elif fam == "lognormal_t10_plus_indep_t5":
            dof = float(prm["dof"])
            t1 = _t_scores("lognormal", x1, dof)
            t2 = _t_scores("lognormal", x2[:1], dof)
            R = exchangeable_corr(2, prm["rho"])
            logf = (_t_conditional_logpdf(t1, t2, R, dof) - stats.t.logpdf(t1, dof)
                    + margin_logpdf("lognormal", x1))
        elif fam == "joe_copula":
            theta = float(prm["theta"])
            v1 = margin_sf(spec.margins, x1)
            v2 = margin_sf(spec.margins, x2)
            s2 = np.sum(joe_phi_sv(v2, theta))
            inside = (v1 > 0) & (v1 < 1)
            v1c = np.where(inside, v1, 0.5)
            logc = (joe_log_abs_deriv(spec.p, s2 + joe_phi_sv(v1c, theta), theta)
                    + joe_log_abs_dphi_sv(v1c, theta)
                    - joe_log_abs_deriv(spec.p - 1, np.array(s2), theta))
            logf = np.where(inside, logc + margin_logpdf(spec.margins, x1), -np.inf)
        else:
            raise UnsupportedError(f"no ground-truth conditional for family {fam}")
    # beyond double precision in either tail the density is zero to working accuracy
    return np.nan_to_num(np.exp(logf), nan=0.0, posinf=0.0)


def joe_bivariate_density(u, v, theta):
    """Closed-form Joe copula density for two variables."""
    a = np.power(1.0 - u, theta)
    b = np.power(1.0 - v, theta)
    s = a + b - a * b
    return (np.power(s, 1.0 / theta - 2.0) * np.power(1.0 - u, theta - 1.0)
            * np.power(1.0 - v, theta - 1.0) * (theta - 1.0 + s))


def ise(estimate, truth, grid=None) -> float:
    """Trapezoid integral of the squared difference over a shared grid.

    ``estimate`` is a :class:`ConditionalDensity` or an array of values on ``grid``.
    """
    truth = np.asarray(truth, dtype=np.float64)
    if isinstance(estimate, ConditionalDensity):
        values = estimate.values
        axes = estimate.grid
        if grid is not None:
            g = (np.asarray(grid),) if np.ndim(grid[0]) == 0 else tuple(np.asarray(a) for a in grid)
            if len(g) != len(axes) or any(a.shape != b.shape or not np.array_equal(a, b)
                                          for a, b in zip(g, axes)):
                raise ValidationError("grid mismatch between estimate and truth")
    else:
        if grid is None:
            raise ValidationError("a grid is required when the estimate is a plain array")
        values = np.asarray(estimate, dtype=np.float64)
        axes = (np.asarray(grid),) if np.ndim(grid[0]) == 0 else tuple(np.asarray(a) for a in grid)
    if values.shape != truth.shape or values.shape != tuple(a.size for a in axes):
        raise ValidationError("grid mismatch between estimate and truth")
    return trapezoid_nd((values - truth) ** 2, axes)


def silverman_multivariate(X):
    """Per-dimension rule of thumb ``sd_i * (4 / ((d + 2) n))^(1 / (d + 4))``."""
    n, d = X.shape
    return np.std(X, axis=0, ddof=1) * (4.0 / ((d + 2.0) * n)) ** (1.0 / (d + 4.0))


def naive_kernel_conditional(ds: Dataset, part: Partition, x2, grid):
    """Ratio of product-Gaussian KDEs of the joint and the conditioning margin.

    Returns density values on the tensor grid, renormalized to integrate to one.
    """
    variables = part.variables
    if len(variables) > 4:
        raise UnsupportedError("naive kernel estimator is limited to p <= 4 variables")
    k = part.k
    if k > 2:
        raise UnsupportedError("naive kernel estimator supports one or two responses")
    axes = (np.asarray(grid, dtype=np.float64),) if np.ndim(grid[0]) == 0 \
        else tuple(np.asarray(a, dtype=np.float64) for a in grid)
    if len(axes) != k:
        raise ValidationError(f"grid must have {k} axes")
    X = ds.values[:, list(variables)]
    h = silverman_multivariate(X)
    x2 = np.atleast_1d(np.asarray(x2, dtype=np.float64))
    if x2.size != len(part.conditioning_idx):
        raise ValidationError("wrong number of conditioning values")
    u = (x2[None, :] - X[:, k:]) / h[k:]
    logw = np.sum(-0.5 * u * u, axis=1) - np.sum(np.log(h[k:])) - 0.5 * u.shape[1] * np.log(2 * np.pi)
    log_denom = special.logsumexp(logw) - np.log(X.shape[0])
    if log_denom < np.log(1e-300):
        raise NumericalError("conditioning point outside support")
    w = np.exp(logw - logw.max())
    w /= w.sum()
    kern = [np.exp(-0.5 * ((ax[:, None] - X[None, :, a]) / h[a]) ** 2) / (h[a] * np.sqrt(2 * np.pi))
            for a, ax in enumerate(axes)]
    if k == 1:
        vals = (kern[0] * w[None, :]).sum(axis=1)
    else:
        vals = np.einsum("gt,ht,t->gh", kern[0], kern[1], w)
    norm = trapezoid_nd(vals, axes)
    if not norm > 0:
        raise NumericalError("naive estimate has zero mass on the grid")
    return vals / norm
