"""Local Gaussian correlation between two standard-normal margins.

The local log-likelihood at an evaluation point ``z`` with a product
Gaussian kernel is

    L(rho) = n^-1 sum_t K_h(Z_t - z) log psi(Z_t, rho) - int K_h(y - z) psi(y, rho) dy

where ``psi`` is the standardized bivariate normal density. Because
``log psi`` is affine in ``z1^2 + z2^2`` and ``z1 z2``, the data term only
depends on three kernel-weighted moments, so each evaluation point costs one
O(n) pass and the maximization in ``rho`` is done on closed forms. The
penalty integral is a Gaussian convolution and is also closed form.

Arithmetic is arranged so that swapping the two coordinates leaves every
result bit-identical and negating one coordinate negates ``rho`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._parallel import concat_chunks
from .errors import NoLocalMassError, NumericalError, ValidationError

RHO_MAX = 0.995
STARTS = (-0.5, 0.0, 0.5)
TIE_TOL = 1e-12
MIN_WEIGHT = 1e-300
LOG_2PI = np.log(2.0 * np.pi)
_LOG_MIN_WEIGHT = np.log(MIN_WEIGHT)


def _check_rho(rho):
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(np.abs(rho) >= 1.0) or np.any(np.isnan(rho)):
        raise ValidationError("correlation must satisfy |rho| < 1")
    return rho


def _as_pair(h):
    h = np.broadcast_to(np.asarray(h, dtype=np.float64), (2,))
    if np.any(~(h > 0)) or np.any(~np.isfinite(h)):
        raise ValidationError(f"bandwidths must be positive and finite, got {h.tolist()}")
    return float(h[0]), float(h[1])


def log_psi2(z1, z2, rho):
    rho = _check_rho(rho)
    om = 1.0 - rho * rho
    quad = (z1 * z1 + z2 * z2) - 2.0 * rho * (z1 * z2)
    return -LOG_2PI - 0.5 * np.log(om) - quad / (2.0 * om)


def psi2(z1, z2, rho):
    """Standardized bivariate normal density (zero means, unit variances, correlation ``rho``)."""
    return np.exp(log_psi2(z1, z2, rho))


def score_u(z1, z2, rho):
    """Derivative of ``log psi2`` with respect to ``rho``."""
    rho = _check_rho(rho)
    om = 1.0 - rho * rho
    return rho / om + ((z1 * z2) * (1.0 + rho * rho) - rho * (z1 * z1 + z2 * z2)) / (om * om)


def _penalty_parts(z1, z2, rho, h1, h2):
    c1 = 1.0 + h1 * h1
    c2 = 1.0 + h2 * h2
    det = c1 * c2 - rho * rho
    quad = (c2 * (z1 * z1) + c1 * (z2 * z2)) - 2.0 * rho * (z1 * z2)
    val = np.exp(-quad / (2.0 * det)) / (2.0 * np.pi * np.sqrt(det))
    return val, det, quad


def penalty_integral(z1, z2, rho, h):
    """``int K_h(y - z) psi2(y, rho) dy`` for the product Gaussian kernel.

    Equals the density at ``z`` of N(0, [[1 + h1^2, rho], [rho, 1 + h2^2]]).
    """
    rho = _check_rho(rho)
    h1, h2 = _as_pair(h)
    return _penalty_parts(z1, z2, rho, h1, h2)[0]


def penalty_drho(z1, z2, rho, h):
    """Derivative of :func:`penalty_integral` in ``rho``."""
    rho = _check_rho(rho)
    h1, h2 = _as_pair(h)
    val, det, quad = _penalty_parts(z1, z2, rho, h1, h2)
    return val * ((rho + z1 * z2) / det - rho * quad / (det * det))


def product_kernel(v1, v2, h):
    h1, h2 = _as_pair(h)
    return np.exp(-0.5 * ((v1 / h1) ** 2 + (v2 / h2) ** 2)) / (2.0 * np.pi * h1 * h2)


def local_loglik(data, z, rho, h):
    """Local log-likelihood evaluated term by term from the raw pairs."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 1:
        raise ValidationError("data must be an (n, 2) array with n >= 1")
    rho = _check_rho(rho)
    z1, z2 = float(z[0]), float(z[1])
    w = product_kernel(data[:, 0] - z1, data[:, 1] - z2, h)
    lp = log_psi2(data[:, 0], data[:, 1], rho)
    return np.mean(w * lp) - penalty_integral(z1, z2, rho, h)


@dataclass
class Moments:
    """Kernel-weighted moments at ``m`` evaluation points.

    ``s0 = n^-1 sum K``, ``sa = n^-1 sum K (Z1^2 + Z2^2)``, ``sb = n^-1 sum K Z1 Z2``.
    """

    s0: np.ndarray
    sa: np.ndarray
    sb: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    h1: float
    h2: float
    has_mass: np.ndarray

    def subset(self, mask):
        return Moments(self.s0[mask], self.sa[mask], self.sb[mask], self.z1[mask],
                       self.z2[mask], self.h1, self.h2, self.has_mass[mask])


def kernel_moments(data, points, h, leave_one_out=False, threads=1) -> Moments:
    """Compute :class:`Moments` of ``data`` (n, 2) at ``points`` (m, 2).

    With ``leave_one_out`` the points must be the data themselves and row ``t``
    excludes observation ``t`` (normalized by ``n - 1``).
    """
    data = np.asarray(data, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    h1, h2 = _as_pair(h)
    n = data.shape[0]
    if leave_one_out and points.shape[0] != n:
        raise ValidationError("leave-one-out moments need the data as evaluation points")
    d1, d2 = data[:, 0], data[:, 1]
    a = d1 * d1 + d2 * d2
    b = d1 * d2

    def chunk(lo, hi):
        u1 = (points[lo:hi, 0, None] - d1[None, :]) / h1
        u2 = (points[lo:hi, 1, None] - d2[None, :]) / h2
        q = u1 * u1 + u2 * u2
        if leave_one_out:
            rows = np.arange(hi - lo)
            q[rows, rows + lo] = np.inf
        w = np.exp(-0.5 * q)
        return w.sum(axis=1), (w * a).sum(axis=1), (w * b).sum(axis=1), q.min(axis=1)

    s0, sa, sb, qmin = concat_chunks(chunk, points.shape[0], threads)
    n_eff = n - 1 if leave_one_out else n
    c = 1.0 / (2.0 * np.pi * h1 * h2 * n_eff)
    has_mass = (-0.5 * qmin - np.log(2.0 * np.pi * h1 * h2)) >= _LOG_MIN_WEIGHT
    return Moments(s0 * c, sa * c, sb * c, points[:, 0].copy(), points[:, 1].copy(), h1, h2, has_mass)


def objective(rho, m: Moments):
    om = 1.0 - rho * rho
    data_term = m.s0 * (-LOG_2PI - 0.5 * np.log(om)) - (m.sa - 2.0 * rho * m.sb) / (2.0 * om)
    pen = _penalty_parts(m.z1, m.z2, rho, m.h1, m.h2)[0]
    return data_term - pen


def gradient_hessian(rho, m: Moments):
    om = 1.0 - rho * rho
    r2 = 1.0 + rho * rho
    num = m.sb * r2 - rho * m.sa
    g_data = m.s0 * rho / om + num / (om * om)
    h_data = m.s0 * r2 / (om * om) + ((2.0 * rho * m.sb - m.sa) * om + 4.0 * rho * num) / (om * om * om)
    pen, det, quad = _penalty_parts(m.z1, m.z2, rho, m.h1, m.h2)
    b = m.z1 * m.z2
    gp = (rho + b) / det - rho * quad / (det * det)
    gp_prime = ((det + 2.0 * rho * (rho + b)) - (quad - 2.0 * rho * b)) / (det * det) \
        - 4.0 * rho * rho * quad / (det * det * det)
    return g_data - pen * gp, h_data - pen * (gp * gp + gp_prime)


def _golden(m: Moments, lo=-RHO_MAX, hi=RHO_MAX, iters=90):
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a = np.full(m.s0.shape, lo)
    b = np.full(m.s0.shape, hi)
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = objective(c, m), objective(d, m)
    for _ in range(iters):
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        d_new = np.where(left, c, a + inv_phi * (b - a))
        c_new = np.where(left, b - inv_phi * (b - a), d)
        fd_new = np.where(left, fc, objective(d_new, m))
        fc_new = np.where(left, objective(c_new, m), fd)
        c, d, fc, fd = c_new, d_new, fc_new, fd_new
    x = np.clip(0.5 * (a + b), -RHO_MAX, RHO_MAX)
    cands = np.stack([x, np.full_like(x, lo), np.full_like(x, hi)])
    vals = objective(cands, m)
    return cands[np.argmax(vals, axis=0), np.arange(x.size)]


def _newton(m: Moments, start, max_iter=100, step_cap=0.5):
    """Safeguarded Newton ascent from ``start``; returns ``(rho, converged)``."""
    rho = np.full(m.s0.shape, float(start))
    f = objective(rho, m)
    active = np.ones(rho.shape, dtype=bool)
    scale = np.abs(m.s0) + np.abs(m.sa) + np.abs(m.sb) + _penalty_parts(m.z1, m.z2, 0.0, m.h1, m.h2)[0]
    for _ in range(max_iter):
        if not active.any():
            break
        g, hess = gradient_hessian(rho, m)
        at_edge = (np.abs(rho) >= RHO_MAX) & (g * np.sign(rho) > 0)
        flat = np.abs(g) <= 1e-14 * scale
        active &= ~(at_edge | flat)
        if not active.any():
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(hess < 0, -g / hess, np.sign(g) * 0.25)
        step = np.clip(np.where(np.isfinite(step), step, 0.0), -step_cap, step_cap)
        step = np.where(active, step, 0.0)
        accepted = ~active
        trial, f_trial = rho, f
        for _ in range(60):
            trial = np.clip(rho + step, -RHO_MAX, RHO_MAX)
            f_trial = objective(trial, m)
            ok = f_trial >= f - 1e-15 * np.abs(f)
            accepted = accepted | ok
            if accepted.all():
                break
            step = np.where(accepted, step, 0.5 * step)
        moved = np.where(accepted, trial, rho)
        done = np.abs(moved - rho) <= 1e-13
        rho = np.where(active, moved, rho)
        f = np.where(active & accepted, f_trial, f)
        active &= ~done
    return rho, ~active


@dataclass
class LocalFit:
    """Result of maximizing the local likelihood at one or more points."""

    rho: np.ndarray
    boundary: np.ndarray
    loglik: np.ndarray
    has_mass: np.ndarray

    def require_mass(self):
        if not np.all(self.has_mass):
            raise NoLocalMassError()
        return self


def maximize(m: Moments, max_newton: int = 100) -> LocalFit:
    """Multistart Newton over the compact parameter range, golden-section fallback.

    Among starts whose objectives lie within ``1e-12`` of the best, the one
    with the smallest ``|rho|`` wins.
    """
    cands, vals = [], []
    for s in STARTS:
        rho, conv = _newton(m, s, max_iter=max_newton)
        if not conv.all():
            sub = m.subset(~conv)
            rg = _golden(sub)
            better = objective(rg, sub) > objective(rho[~conv], sub)
            rho = rho.copy()
            rho[~conv] = np.where(better, rg, rho[~conv])
        cands.append(rho)
        vals.append(objective(rho, m))
    cands = np.stack(cands)
    vals = np.stack(vals)
    best = vals.max(axis=0)
    near = vals >= best - TIE_TOL
    absr = np.where(near, np.abs(cands), np.inf)
    amin = absr.min(axis=0)
    pick = np.where(absr == amin, vals, -np.inf).argmax(axis=0)
    cols = np.arange(cands.shape[1])
    rho = cands[pick, cols]
    if np.any(~np.isfinite(rho)):
        raise NumericalError("local likelihood maximization produced a non-finite correlation")
    return LocalFit(rho, np.abs(rho) >= RHO_MAX, vals[pick, cols], m.has_mass)


def fit_rho_many(data, points, h, threads=1) -> LocalFit:
    """Fit the local correlation at each row of ``points``. No mass check is applied."""
    return maximize(kernel_moments(data, points, h, threads=threads))


def fit_rho(data, z, h) -> LocalFit:
    """Fit the local correlation of ``data`` (n, 2) at the single point ``z``.

    Raises
    ------
    NoLocalMassError
        If every kernel weight at ``z`` is below 1e-300.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValidationError("data must be an (n, 2) array")
    if data.shape[0] < 20:
        raise ValidationError(f"need at least 20 observations, got {data.shape[0]}")
    fit = fit_rho_many(data, np.asarray(z, dtype=np.float64).reshape(1, 2), h).require_mass()
    return LocalFit(fit.rho[0], fit.boundary[0], fit.loglik[0], fit.has_mass[0])


class PairFit:
    """Local correlation function of one variable pair on the pseudo scale.

    Parameters
    ----------
    data : ndarray, shape (n, 2)
        Pseudo-observations of columns ``i`` and ``j``.
    h : float or pair of float
        Kernel bandwidths.
    """

    def __init__(self, data, h, i=0, j=1, threads=1):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.h = _as_pair(h)
        self.i, self.j = int(i), int(j)
        self.threads = threads

    def fit(self, zi, zj) -> LocalFit:
        zi, zj = np.broadcast_arrays(np.asarray(zi, dtype=np.float64), np.asarray(zj, dtype=np.float64))
        shape = zi.shape
        pts = np.column_stack([zi.ravel(), zj.ravel()])
        fit = fit_rho_many(self.data, pts, self.h, threads=self.threads)
        return LocalFit(fit.rho.reshape(shape), fit.boundary.reshape(shape),
                        fit.loglik.reshape(shape), fit.has_mass.reshape(shape))

    def rho_at(self, zi, zj):
        return self.fit(zi, zj).require_mass().rho

    def __repr__(self):
        return f"PairFit(i={self.i}, j={self.j}, h={self.h}, n={self.data.shape[0]})"
