"""Likelihood cross-validation for the pairwise bandwidths."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .locallik import kernel_moments, log_psi2, maximize
from .marginals import PseudoSample

H_MIN = 0.2
H_MAX = 3.0
GRID_POINTS = 15
REFINE_RTOL = 1e-3
MAX_SKIP_FRACTION = 0.10


@dataclass
class CvResult:
    value: float
    skipped: int
    n: int


def cv_details(data, h, threads=1) -> CvResult:
    """Leave-one-out local likelihood score and the number of skipped terms."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValidationError("data must be an (n, 2) array")
    n = data.shape[0]
    if n < 20:
        raise ValidationError(f"need at least 20 observations, got {n}")
    m = kernel_moments(data, data, h, leave_one_out=True, threads=threads)
    fit = maximize(m)
    ok = fit.has_mass
    skipped = int(n - ok.sum())
    if skipped > MAX_SKIP_FRACTION * n:
        raise NumericalError(
            f"no local mass for {skipped} of {n} leave-one-out fits at h={h}; more than 10% skipped")
    terms = log_psi2(data[ok, 0], data[ok, 1], fit.rho[ok])
    return CvResult(float(np.sum(terms) / ok.sum()), skipped, n)


def cv_objective(data, h, threads=1) -> float:
    """``n^-1 sum_t log psi2(Z_t, rho_hat^(-t)(Z_t; h))``; larger is better."""
    return cv_details(data, h, threads).value


@dataclass
class BandwidthPlan:
    """One scalar bandwidth per unordered variable pair."""

    per_pair: dict = field(default_factory=dict)
    strategy: str = "cv"

    def __post_init__(self):
        clean = {}
        for (i, j), h in self.per_pair.items():
            if i == j:
                raise ValidationError("bandwidth pair must join two distinct variables")
            h = float(h)
            if not h > 0 or not np.isfinite(h):
                raise ValidationError(f"bandwidth for pair ({i}, {j}) must be positive")
            clean[(min(i, j), max(i, j))] = h
        self.per_pair = dict(sorted(clean.items()))

    def __getitem__(self, pair):
        i, j = pair
        try:
            return self.per_pair[(min(i, j), max(i, j))]
        except KeyError:
            raise ValidationError(f"no bandwidth for pair {pair}") from None

    def to_json(self) -> dict:
        return {"pairs": [{"i": i, "j": j, "h": h} for (i, j), h in self.per_pair.items()]}

    @classmethod
    def from_json(cls, obj: dict, strategy="fixed"):
        return cls({(int(e["i"]), int(e["j"])): float(e["h"]) for e in obj["pairs"]}, strategy)

    @classmethod
    def fixed(cls, h, pairs):
        return cls({p: h for p in pairs}, "fixed")


def bandwidth_grid():
    g = np.exp(np.linspace(np.log(H_MIN), np.log(H_MAX), GRID_POINTS))
    g[0], g[-1] = H_MIN, H_MAX
    return g


def select_pair_bandwidth(data, threads=1):
    """Maximize CV over the log-spaced grid, then golden-section refine around the best point.

    Returns ``(h, cv_value, evaluated)`` where ``evaluated`` maps every tried bandwidth to
    its CV score; ``h`` has the largest score among them.
    """
    scores = {}

    def score(h):
        h = float(h)
        if h not in scores:
            scores[h] = cv_objective(data, h, threads)
        return scores[h]

    grid = bandwidth_grid()
    vals = [score(h) for h in grid]
    k = int(np.argmax(vals))
    lo = np.log(grid[max(k - 1, 0)])
    hi = np.log(grid[min(k + 1, grid.size - 1)])
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    c = hi - inv_phi * (hi - lo)
    d = lo + inv_phi * (hi - lo)
    fc, fd = score(np.exp(c)), score(np.exp(d))
    while hi - lo > REFINE_RTOL:
        if fc >= fd:
            hi, d, fd = d, c, fc
            c = hi - inv_phi * (hi - lo)
            fc = score(np.exp(c))
        else:
            lo, c, fc = c, d, fd
            d = lo + inv_phi * (hi - lo)
            fd = score(np.exp(d))
    best_h = max(scores, key=lambda h: (scores[h], -h))
    return best_h, scores[best_h], scores


def select_bandwidths(ps: PseudoSample, pairs=None, strategy="cv", h=None, threads=1) -> BandwidthPlan:
    """Choose a bandwidth for every pair.

    Parameters
    ----------
    ps : PseudoSample
    pairs : list of (int, int), optional
        Column pairs to cover; all pairs of ``ps`` by default.
    strategy : {"cv", "fixed"}
    h : float
        Bandwidth used for every pair when ``strategy="fixed"``.
    """
    if pairs is None:
        pairs = [(i, j) for i in range(ps.p) for j in range(i + 1, ps.p)]
    pairs = [(min(i, j), max(i, j)) for i, j in pairs]
    if strategy == "fixed":
        if h is None:
            raise ValidationError("fixed strategy needs a bandwidth")
        return BandwidthPlan.fixed(h, pairs)
    if strategy != "cv":
        raise ValidationError(f"unknown bandwidth strategy {strategy!r}")
    if ps.n < 20:
        raise ValidationError(f"need at least 20 observations, got {ps.n}")
    plan = {}
    for i, j in pairs:
        plan[(i, j)] = select_pair_bandwidth(ps.pair(i, j), threads)[0]
    return BandwidthPlan(plan, "cv")
