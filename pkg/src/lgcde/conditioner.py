"""Conditional density from pairwise local correlations.

At a point ``z`` on the pseudo scale the local correlation matrix is
partitioned into response and conditioning blocks and the standard Gaussian
conditioning formulas give a local mean and covariance for the response.
The resulting Gaussian density in ``z`` is carried back to the data scale by
the marginal factor ``f_i(x_i) / phi(z_i)`` and normalized on a grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .bandwidth import BandwidthPlan
from .data import Dataset, Partition
from .errors import NoLocalMassError, NumericalError, UnsupportedError, ValidationError
from .locallik import RHO_MAX, PairFit
from .marginals import PseudoSample, norm_logpdf, pseudo_normalize

EIG_FLOOR = 1e-6
GRID_QUANTILES = (0.001, 0.999)
DEFAULT_GRID = {1: 2000, 2: 100}
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class LocalCorrMatrix:
    """Stack of local correlation matrices, shape ``(..., q, q)``."""

    R: np.ndarray
    psd_repaired: np.ndarray


@dataclass
class ConditionalGaussianParams:
    mu_star: np.ndarray
    sigma_star: np.ndarray


def repair_psd(R, floor=EIG_FLOOR, max_rounds=50):
    """Clip eigenvalues below ``floor`` and rescale back to a unit diagonal.

    Works on stacks of matrices. Rounds repeat until every matrix has smallest
    eigenvalue at least ``floor``; off-diagonals are kept within ``RHO_MAX``.

    Returns
    -------
    R : ndarray
    repaired : ndarray of bool
    """
    R = np.array(R, dtype=np.float64, copy=True)
    shape = R.shape[:-2]
    q = R.shape[-1]
    R = R.reshape(-1, q, q)
    repaired = np.zeros(R.shape[0], dtype=bool)
    target = floor
    for _ in range(max_rounds):
        w, v = np.linalg.eigh(R)
        bad = w[:, 0] < floor
        if not bad.any():
            break
        repaired |= bad
        wb = np.maximum(w[bad], target)
        Rb = np.einsum("nij,nj,nkj->nik", v[bad], wb, v[bad])
        d = np.sqrt(np.einsum("nii->ni", Rb))
        Rb = Rb / d[:, :, None] / d[:, None, :]
        Rb = 0.5 * (Rb + np.swapaxes(Rb, 1, 2))
        Rb = np.clip(Rb, -RHO_MAX, RHO_MAX)
        idx = np.arange(q)
        Rb[:, idx, idx] = 1.0
        R[bad] = Rb
        target *= 2.0
    else:
        raise NumericalError("could not repair local correlation matrix to positive definiteness")
    return R.reshape(shape + (q, q)), repaired.reshape(shape)


def assemble_R(fits, z, variables=None) -> LocalCorrMatrix:
    """Build local correlation matrices from pairwise fits.

    Parameters
    ----------
    fits : mapping
        ``(i, j) -> PairFit`` (or any object with ``rho_at``) for every pair of ``variables``.
    z : array_like, shape (..., q)
        Evaluation points on the pseudo scale; last axis follows ``variables``.
    variables : sequence of int, optional
        Column index for each coordinate of ``z``. Defaults to ``range(q)``.
    """
    z = np.asarray(z, dtype=np.float64)
    q = z.shape[-1]
    variables = list(range(q)) if variables is None else list(variables)
    if len(variables) != q:
        raise ValidationError("variables must match the last axis of z")
    R = np.zeros(z.shape[:-1] + (q, q))
    for a in range(q):
        R[..., a, a] = 1.0
        for b in range(a + 1, q):
            i, j = variables[a], variables[b]
            key = (min(i, j), max(i, j))
            if key not in fits:
                raise ValidationError(f"missing local correlation fit for pair {key}")
            za, zb = (z[..., a], z[..., b]) if i < j else (z[..., b], z[..., a])
            rho = fits[key].rho_at(za, zb)
            R[..., a, b] = rho
            R[..., b, a] = rho
    R, repaired = repair_psd(R)
    return LocalCorrMatrix(R, repaired)


def condition(R, z2, k) -> ConditionalGaussianParams:
    """Conditional mean and covariance of the first ``k`` coordinates given the rest.

    ``mu = R12 R22^-1 z2`` and ``Sigma = R11 - R12 R22^-1 R21``, computed through
    a Cholesky factor of ``R22``.
    """
    if isinstance(R, LocalCorrMatrix):
        R = R.R
    if isinstance(k, Partition):
        k = k.k
    R = np.asarray(R, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    q = R.shape[-1]
    if not 1 <= k < q:
        raise ValidationError(f"response size k={k} invalid for {q} variables")
    R11 = R[..., :k, :k]
    R21 = R[..., k:, :k]
    R22 = R[..., k:, k:]
    z2 = np.broadcast_to(z2, R.shape[:-2] + (q - k,))
    try:
        L = np.linalg.cholesky(R22)
    except np.linalg.LinAlgError:
        raise NumericalError("conditioning block of the local correlation matrix is not positive definite") from None
    rhs = np.concatenate([R21, z2[..., None]], axis=-1)
    W = np.linalg.solve(L, rhs)
    WR, Wz = W[..., :k], W[..., k]
    mu = np.einsum("...ji,...j->...i", WR, Wz)
    S = R11 - np.einsum("...ji,...jl->...il", WR, WR)
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    return ConditionalGaussianParams(mu, S)


def gaussian_logpdf(x, mu, sigma):
    """Log density of N(mu, sigma) for stacks; raises if any covariance is not positive definite."""
    x = np.asarray(x, dtype=np.float64)
    k = sigma.shape[-1]
    try:
        L = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise NumericalError("conditional covariance is not positive definite") from None
    dev = (x - mu)[..., None]
    y = np.linalg.solve(L, dev)[..., 0]
    logdet = 2.0 * np.log(np.einsum("...ii->...i", L)).sum(axis=-1)
    return -0.5 * (k * LOG_2PI + logdet + np.sum(y * y, axis=-1))


def trapezoid_nd(values, axes):
    """Iterated trapezoid rule over a tensor grid."""
    out = values
    for ax in reversed(axes):
        out = integrate.trapezoid(out, ax, axis=-1)
    return float(out)


@dataclass
class ConditionalDensity:
    """Normalized conditional density on a tensor grid of response values.

    ``values[g]`` is the density at the grid point ``tuple(axis[g_i] for axis in grid)``.
    """

    grid: tuple
    values: np.ndarray
    normalizer: float
    mu_star: np.ndarray
    sigma_star: np.ndarray
    conditioning_point: np.ndarray
    psd_repaired: np.ndarray
    clamped: np.ndarray = field(default=None)
    response_names: tuple = ()

    @property
    def k(self):
        return len(self.grid)

    def integral(self):
        return trapezoid_nd(self.values, self.grid)

    def quantile(self, alpha, with_flag=False):
        return conditional_quantile(self, alpha, with_flag)


def conditional_quantile(cd: ConditionalDensity, alpha: float, with_flag: bool = False):
    """Smallest grid value whose cumulative trapezoid mass reaches ``alpha``, linearly interpolated.

    Levels that fall in the outermost grid cells return the grid endpoint and
    set the extrapolation flag.
    """
    if cd.k != 1:
        raise UnsupportedError("quantiles are only defined for a scalar response")
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must lie in (0, 1)")
    x = cd.grid[0]
    f = cd.values
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(x))])
    cum /= cum[-1]
    if alpha > cum[-2]:
        value, flag = float(x[-1]), True
    elif alpha < cum[1]:
        value, flag = float(x[0]), True
    else:
        i = int(np.searchsorted(cum, alpha, side="left"))
        c0, c1 = cum[i - 1], cum[i]
        t = 0.0 if c1 == c0 else (alpha - c0) / (c1 - c0)
        value, flag = float(x[i - 1] + t * (x[i] - x[i - 1])), False
    return (value, flag) if with_flag else value


class ConditionalEstimator:
    """Fitted pairwise local correlation model for one dataset and partition.

    Parameters
    ----------
    ds : Dataset
    part : Partition
    plan : BandwidthPlan
        Must cover every pair of the partition's variables.
    """

    def __init__(self, ds: Dataset, part: Partition, plan: BandwidthPlan, threads=1,
                 pseudo: PseudoSample | None = None):
        ds.require_estimable()
        if max(part.variables) >= ds.p:
            raise ValidationError("partition refers to a column outside the dataset")
        self.ds = ds
        self.part = part
        self.plan = plan
        self.threads = threads
        self.pseudo = pseudo if pseudo is not None else pseudo_normalize(ds)
        self.fits = {
            (i, j): PairFit(self.pseudo.pair(i, j), plan[(i, j)], i, j, threads)
            for i, j in part.pairs()
        }

    @property
    def variables(self):
        return self.part.variables

    def response_grid(self, grid_size=None):
        k = self.part.k
        if k >= 3:
            raise UnsupportedError(
                "grid normalization refused for k >= 3 responses; pass an explicit grid")
        size = int(grid_size or DEFAULT_GRID[k])
        if size < 2:
            raise ValidationError("grid_size must be at least 2")
        axes = []
        for r in self.part.response_idx:
            lo, hi = self.pseudo.transforms[r].quantile(np.array(GRID_QUANTILES))
            axes.append(np.linspace(lo, hi, size))
        return tuple(axes)

    def conditioning_z(self, x2):
        x2 = np.atleast_1d(np.asarray(x2, dtype=np.float64))
        if x2.shape != (len(self.part.conditioning_idx),):
            raise ValidationError(
                f"expected {len(self.part.conditioning_idx)} conditioning values, got {x2.size}")
        z2, clamped = self.pseudo.z_of_x(x2, self.part.conditioning_idx)
        if clamped.any():
            raise NoLocalMassError("no local mass: conditioning point outside the support of the data")
        return z2

    def local_params(self, z):
        """Local correlation matrices and conditional parameters at pseudo points ``z`` (..., q)."""
        lcm = assemble_R(self.fits, z, self.variables)
        params = condition(lcm, np.asarray(z)[..., self.part.k:], self.part.k)
        return lcm, params

    def conditional(self, x2, grid_size=None, grid=None) -> ConditionalDensity:
        part = self.part
        k = part.k
        z2 = self.conditioning_z(x2)
        if grid is None:
            axes = self.response_grid(grid_size)
        else:
            axes = (np.asarray(grid, dtype=np.float64),) if k == 1 and np.ndim(grid[0]) == 0 \
                else tuple(np.asarray(a, dtype=np.float64) for a in grid)
            if len(axes) != k or any(a.ndim != 1 or a.size < 2 for a in axes):
                raise ValidationError(f"explicit grid must give {k} axes of at least 2 points")
            if any(np.any(np.diff(a) <= 0) for a in axes):
                raise ValidationError("grid axes must be strictly increasing")
        shape = tuple(a.size for a in axes)

        z_axes, clamp_axes, logratio = [], [], np.zeros(shape)
        for a, (r, ax) in enumerate(zip(part.response_idx, axes)):
            za, ca = self.pseudo.z_of_x(ax[:, None], [r])
            za, ca = za[:, 0], ca[:, 0]
            with np.errstate(divide="ignore"):
                lr = np.log(self.pseudo.transforms[r].density(ax)) - norm_logpdf(za)
            expand = [None] * k
            expand[a] = slice(None)
            z_axes.append(za[tuple(expand)])
            clamp_axes.append(ca[tuple(expand)])
            logratio = logratio + lr[tuple(expand)]
        clamped = np.zeros(shape, dtype=bool)
        for ca in clamp_axes:
            clamped = clamped | ca

        zfull = np.empty(shape + (len(part.variables),))
        for a in range(k):
            zfull[..., a] = np.broadcast_to(z_axes[a], shape)
        zfull[..., k:] = z2

        lcm, params = self._params_on_grid(zfull, z_axes, z2)
        zresp = zfull[..., :k]
        logdens = gaussian_logpdf(zresp, params.mu_star, params.sigma_star) + logratio
        values = np.where(clamped, 0.0, np.exp(logdens))
        if not np.all(np.isfinite(values)):
            raise NumericalError("non-finite conditional density values")
        normalizer = trapezoid_nd(values, axes)
        if not normalizer > 0:
            raise NumericalError("conditional density has zero mass on the grid")
        return ConditionalDensity(
            grid=axes, values=values / normalizer, normalizer=normalizer,
            mu_star=params.mu_star, sigma_star=params.sigma_star,
            conditioning_point=np.atleast_1d(np.asarray(x2, dtype=np.float64)),
            psd_repaired=lcm.psd_repaired, clamped=clamped,
            response_names=tuple(self.ds.names[r] for r in part.response_idx),
        )

    def _params_on_grid(self, zfull, z_axes, z2):
        # Fit each pair only on the coordinates it depends on, then broadcast.
        part = self.part
        k = part.k
        shape = zfull.shape[:-1]
        q = zfull.shape[-1]
        R = np.zeros(shape + (q, q))
        for a in range(q):
            R[..., a, a] = 1.0

        def coord(a):
            return z_axes[a] if a < k else np.asarray(z2[a - k])

        for a in range(q):
            for b in range(a + 1, q):
                i, j = part.variables[a], part.variables[b]
                key = (min(i, j), max(i, j))
                za, zb = (coord(a), coord(b)) if i < j else (coord(b), coord(a))
                rho = self.fits[key].rho_at(*np.broadcast_arrays(za, zb))
                R[..., a, b] = rho
                R[..., b, a] = rho
        R, repaired = repair_psd(R)
        lcm = LocalCorrMatrix(R, repaired)
        return lcm, condition(lcm, zfull[..., k:], k)


def estimate_conditional(ds: Dataset, part: Partition, plan: BandwidthPlan, x2,
                         grid_size=None, grid=None, threads=1) -> ConditionalDensity:
    """Estimate the density of the response block given ``X2 = x2``.

    Parameters
    ----------
    ds, part, plan
        Data, response/conditioning split and pairwise bandwidths.
    x2 : array_like
        Conditioning values on the data scale, in ``part.conditioning_idx`` order.
    grid_size : int, optional
        Points per response axis (2000 for one response, 100 per axis for two).
    grid : array or sequence of arrays, optional
        Explicit response axes; required when there are three or more responses.
    """
    return ConditionalEstimator(ds, part, plan, threads).conditional(x2, grid_size, grid)
