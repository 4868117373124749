"""Rank Gaussianization of margins and smooth univariate marginal models.

Pseudo-observations use midranks, ``Phi^{-1}(rank / (n + 1))``. The
back-transform at arbitrary points uses a Gaussian-kernel KDE whose CDF is
the exact integral of the kernel sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special, stats

from ._parallel import concat_chunks
from .data import MIN_ESTIMATION_N, Dataset
from .errors import ValidationError

P_CLAMP = 1e-12
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def norm_ppf(p):
    return special.ndtri(p)


def norm_logpdf(z):
    return -0.5 * z * z - _LOG_SQRT_2PI


def rank_gaussianize(column) -> np.ndarray:
    """Map a column to ``Phi^{-1}(R / (n + 1))`` with midranks ``R``."""
    column = np.asarray(column, dtype=np.float64)
    r = stats.rankdata(column, method="average")
    return special.ndtri(r / (column.size + 1.0))


def silverman_bandwidth(x) -> float:
    """``0.9 * min(sd, IQR / 1.34) * n^(-1/5)``; falls back to whichever spread is positive."""
    x = np.asarray(x, dtype=np.float64)
    sd = np.std(x, ddof=1) if x.size > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    iqr = (q75 - q25) / 1.34
    spread = min(sd, iqr) if (sd > 0 and iqr > 0) else max(sd, iqr)
    if not spread > 0:
        raise ValidationError("zero IQR and zero standard deviation; cannot choose a bandwidth")
    return 0.9 * spread * x.size ** (-0.2)


class KdeMarginal:
    """Gaussian-kernel density estimate of one margin with exact CDF and quantile.

    Parameters
    ----------
    data : array_like
        Sample of the margin. At least 20 non-constant values.
    bandwidth : float, optional
        Kernel standard deviation. Silverman's rule when omitted.
    """

    def __init__(self, data, bandwidth: float | None = None):
        data = np.sort(np.asarray(data, dtype=np.float64).ravel())
        if data.size < MIN_ESTIMATION_N:
            raise ValidationError(f"need at least {MIN_ESTIMATION_N} observations, got {data.size}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("marginal sample contains non-finite values")
        self.data = data
        self.h = float(bandwidth) if bandwidth is not None else silverman_bandwidth(data)
        if not self.h > 0:
            raise ValidationError("bandwidth must be positive")
        self.data.setflags(write=False)

    @property
    def n(self):
        return self.data.size

    def _reduce(self, x, kernel):
        shape = np.shape(x)
        flat = np.asarray(x, dtype=np.float64).ravel()

        def chunk(lo, hi):
            u = (flat[lo:hi, None] - self.data[None, :]) / self.h
            return kernel(u).sum(axis=1) / self.n

        if flat.size == 0:
            return np.zeros(shape)
        return concat_chunks(chunk, flat.size).reshape(shape)

    def density(self, x):
        return self._reduce(x, lambda u: np.exp(-0.5 * u * u)) / (self.h * np.sqrt(2 * np.pi))

    def cdf(self, x):
        return self._reduce(x, special.ndtr)

    def sf(self, x):
        return self._reduce(x, lambda u: special.ndtr(-u))

    def quantile(self, q, tol: float = 1e-13, max_iter: int = 200):
        """Invert the CDF by bracketed Newton steps with bisection fallback."""
        shape = np.shape(q)
        q = np.atleast_1d(np.asarray(q, dtype=np.float64))
        if np.any((q <= 0) | (q >= 1)):
            raise ValidationError("quantile levels must lie in (0, 1)")
        lo = np.full(q.shape, self.data[0] - 40.0 * self.h)
        hi = np.full(q.shape, self.data[-1] + 40.0 * self.h)
        x = np.clip(np.interp(q, (np.arange(self.n) + 0.5) / self.n, self.data), lo, hi)
        scale = self.data[-1] - self.data[0] + self.h
        for _ in range(max_iter):
            f = self.cdf(x) - q
            lo = np.where(f < 0, x, lo)
            hi = np.where(f >= 0, x, hi)
            d = self.density(x)
            with np.errstate(divide="ignore", invalid="ignore"):
                xn = x - f / d
            bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
            xn = np.where(bad, 0.5 * (lo + hi), xn)
            done = np.abs(xn - x) <= tol * scale
            x = xn
            if np.all(done):
                break
        return x.reshape(shape)

    def z_of_x(self, x):
        """Return ``(z, clamped)`` with ``z = Phi^{-1}(F(x))`` and F clamped to [1e-12, 1 - 1e-12]."""
        x = np.asarray(x, dtype=np.float64)
        # lower tail probability below the sample median, upper tail above it
        upper = x > self.data[(self.n - 1) // 2]
        s = np.empty(x.shape)
        s[~upper] = self.cdf(x[~upper])
        s[upper] = self.sf(x[upper])
        clamped = s < P_CLAMP
        s = np.maximum(s, P_CLAMP)
        z = special.ndtri(s)
        return np.where(upper, -z, z), clamped

    def x_of_z(self, z):
        z = np.asarray(z, dtype=np.float64)
        return self.quantile(special.ndtr(z))

    def __repr__(self):
        return f"KdeMarginal(n={self.n}, h={self.h:.4g})"


def fit_marginal(column, bandwidth: float | None = None) -> KdeMarginal:
    return KdeMarginal(column, bandwidth)


@dataclass(frozen=True, eq=False)
class PseudoSample:
    """Rank-Gaussianized copy of a dataset plus lazily fitted marginal models."""

    z_values: np.ndarray
    source: Dataset

    @property
    def n(self):
        return self.z_values.shape[0]

    @property
    def p(self):
        return self.z_values.shape[1]

    @cached_property
    def transforms(self) -> tuple[KdeMarginal, ...]:
        return tuple(KdeMarginal(self.source.values[:, i]) for i in range(self.source.p))

    def pair(self, i: int, j: int) -> np.ndarray:
        return np.ascontiguousarray(self.z_values[:, [i, j]])

    def z_of_x(self, x, columns):
        """Map raw values to the z-scale, column by column.

        A value equal to an observed sample value of that column maps to the
        sample's own pseudo-observation so that evaluation stays on the exact
        rank transform; other values go through the KDE CDF.

        Returns
        -------
        z : ndarray
            Same shape as ``x``; last axis indexes ``columns``.
        clamped : ndarray of bool
        """
        x = np.asarray(x, dtype=np.float64)
        z = np.empty_like(x)
        clamped = np.zeros(x.shape, dtype=bool)
        for a, col in enumerate(columns):
            xa = x[..., a]
            za, ca = self.transforms[col].z_of_x(xa)
            raw = self.source.values[:, col]
            order = np.argsort(raw, kind="stable")
            sorted_raw = raw[order]
            pos = np.clip(np.searchsorted(sorted_raw, xa), 0, raw.size - 1)
            hit = sorted_raw[pos] == xa
            za = np.where(hit, self.z_values[order[pos], col], za)
            ca = ca & ~hit
            z[..., a] = za
            clamped[..., a] = ca
        return z, clamped


def pseudo_normalize(ds: Dataset) -> PseudoSample:
    z = np.column_stack([rank_gaussianize(ds.values[:, i]) for i in range(ds.p)])
    z.setflags(write=False)
    return PseudoSample(z, ds)


def z_of_x(x, models):
    """Vector version over ``p`` marginal models; last axis of ``x`` indexes models.

    Returns ``(z, clamped)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != len(models):
        raise ValidationError(f"expected {len(models)} coordinates, got {x.shape[-1]}")
    out = [m.z_of_x(x[..., i]) for i, m in enumerate(models)]
    return np.stack([o[0] for o in out], axis=-1), np.stack([o[1] for o in out], axis=-1)


def x_of_z(z, models):
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != len(models):
        raise ValidationError(f"expected {len(models)} coordinates, got {z.shape[-1]}")
    return np.stack([m.x_of_z(z[..., i]) for i, m in enumerate(models)], axis=-1)
