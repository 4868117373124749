"""Local dependence between lagged values of a time series, with and without conditioning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .bandwidth import BandwidthPlan, select_bandwidths
from .conditioner import ConditionalEstimator
from .data import MIN_ESTIMATION_N, Dataset, Partition
from .errors import ValidationError
from .marginals import pseudo_normalize

DIAG_POINTS = np.linspace(-2.0, 2.0, 21)


@dataclass
class LocalCovCurve:
    """Local dependence of ``(X_t, X_{t-l})`` along the diagonal ``z_t = z_{t-l}``.

    Attributes
    ----------
    points : ndarray
        Diagonal coordinates on the standard normal scale.
    x_points : ndarray
        The same points on the scale of ``X_t`` (marginal quantiles).
    unconditional : ndarray
        Local correlation of the pair.
    conditional : ndarray
        Off-diagonal entry of the conditional covariance given the intermediate lags.
    plan : BandwidthPlan
    """

    points: np.ndarray
    x_points: np.ndarray
    unconditional: np.ndarray
    conditional: np.ndarray
    plan: BandwidthPlan


def _check_lags(lags):
    lags = [int(l) for l in lags]
    if not lags:
        raise ValidationError("at least one lag is required")
    if any(l < 1 for l in lags):
        raise ValidationError("lags must be positive integers")
    if len(set(lags)) != len(lags):
        raise ValidationError("lags must be distinct")
    return lags


def lag_embed(series, lags) -> Dataset:
    """Columns ``(X_t, X_{t-l1}, X_{t-l2}, ...)`` for ``t = max(lags), ..., n - 1``.

    The embedding needs at least as many rows as the largest lag.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError("series must be one-dimensional")
    lags = _check_lags(lags)
    m = max(lags)
    rows = x.size - m
    if rows < max(m, 1):
        raise ValidationError(f"series of length {x.size} is too short for lag {m}")
    cols = [x[m:]] + [x[m - l:x.size - l] for l in lags]
    names = ["x_t"] + [f"x_t-{l}" for l in lags]
    return Dataset(np.column_stack(cols), tuple(names))


def partial_local_cov(series, lag, given_lags, x_cond, diag_points=None, plan=None,
                      bandwidth="cv", h=None, threads=1) -> LocalCovCurve:
    """Diagonal local correlation of ``(X_t, X_{t-lag})`` and its conditional counterpart.

    Parameters
    ----------
    series : array_like
    lag : int
        Lag of the second member of the pair.
    given_lags : list of int
        Intermediate lags that are conditioned on.
    x_cond : array_like
        Values of the intermediate lags, one per entry of ``given_lags``.
    diag_points : array_like, optional
        Standard-normal-scale diagonal points; 21 points on [-2, 2] by default.
    plan : BandwidthPlan, optional
        Bandwidths for the embedded columns; selected by ``bandwidth``/``h`` when absent.
    """
    given = [int(g) for g in given_lags]
    if not given:
        raise ValidationError("at least one conditioning lag is required")
    lags = _check_lags([lag] + given)
    x = np.asarray(series, dtype=np.float64)
    if x.size <= max(lags) + MIN_ESTIMATION_N:
        raise ValidationError(
            f"series of length {x.size} needs more than {max(lags) + MIN_ESTIMATION_N} values")
    ds = lag_embed(x, lags)
    ps = pseudo_normalize(ds)
    if plan is None:
        plan = select_bandwidths(ps, strategy=bandwidth, h=h, threads=threads)
    q = len(lags) + 1
    part = Partition((0, 1), tuple(range(2, q)))
    est = ConditionalEstimator(ds, part, plan, threads, pseudo=ps)
    d = np.asarray(DIAG_POINTS if diag_points is None else diag_points, dtype=np.float64)

    uncond = est.fits[(0, 1)].rho_at(d, d)
    z2 = est.conditioning_z(x_cond)
    z = np.empty((d.size, q))
    z[:, 0] = d
    z[:, 1] = d
    z[:, 2:] = z2
    _, params = est.local_params(z)
    cond = params.sigma_star[:, 0, 1]
    x_points = ps.transforms[0].quantile(special.ndtr(d))
    return LocalCovCurve(d, x_points, np.asarray(uncond), np.asarray(cond), plan)
