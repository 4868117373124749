"""Conditional Value-at-Risk from the local Gaussian conditional density, with backtesting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .bandwidth import BandwidthPlan, select_bandwidths
from .conditioner import ConditionalEstimator
from .data import Dataset, Partition
from .errors import NoLocalMassError, NumericalError, ValidationError
from .marginals import pseudo_normalize

DEFAULT_LEVELS = (0.005, 0.01, 0.05)
MIN_WARMUP = 100


@dataclass
class DayRecord:
    day: int
    realized: float
    var: list
    exceeded: list
    extrapolated: list
    skipped: bool = False


@dataclass
class BacktestReport:
    """Exceedance summary of a VaR backtest.

    ``exceed_proportion[i]`` is the share of evaluated, non-skipped days whose
    portfolio return fell below the estimated ``levels[i]`` return quantile.
    """

    levels: list
    exceed_proportion: list
    exceedances: list
    n_eval: int
    skipped: int
    method: str
    plan_policy: str
    window: str
    days: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"levels": list(self.levels), "exceed_proportion": list(self.exceed_proportion),
                "exceedances": list(self.exceedances), "n_eval": self.n_eval, "skipped": self.skipped,
                "method": self.method, "plan_policy": self.plan_policy, "window": self.window}


def wilson_interval(successes, trials, conf=0.95):
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValidationError("trials must be positive")
    zq = stats.norm.ppf(0.5 + conf / 2.0)
    phat = successes / trials
    denom = 1.0 + zq * zq / trials
    centre = (phat + zq * zq / (2.0 * trials)) / denom
    half = zq * np.sqrt(phat * (1.0 - phat) / trials + zq * zq / (4.0 * trials * trials)) / denom
    return centre - half, centre + half


def parse_plan_policy(policy):
    """``"frozen"`` or ``"periodic(r)"`` / ``("periodic", r)``; returns the refit period or None."""
    if policy in (None, "frozen"):
        return None
    if isinstance(policy, tuple) and len(policy) == 2 and policy[0] == "periodic":
        r = int(policy[1])
    elif isinstance(policy, str) and policy.startswith("periodic(") and policy.endswith(")"):
        try:
            r = int(policy[len("periodic("):-1])
        except ValueError:
            raise ValidationError(f"bad plan policy {policy!r}") from None
    else:
        raise ValidationError(f"unknown plan policy {policy!r}; use 'frozen' or 'periodic(r)'")
    if r < 1:
        raise ValidationError("refit period must be positive")
    return r


def lagged_design(returns):
    """Rows ``(portfolio_t, components_{t-1})`` for ``t = 1, ..., n - 1``."""
    r = np.asarray(returns, dtype=np.float64)
    return np.column_stack([r[1:, 0], r[:-1, 1:]])


def var_backtest(returns, warmup=500, levels=DEFAULT_LEVELS, plan_policy="frozen", window="expanding",
                 window_length=None, bandwidth="cv", h=None, grid_size=2000, threads=1) -> BacktestReport:
    """Backtest one-day conditional VaR of the portfolio in column 0.

    On each day ``t >= warmup`` the model is fitted to the lagged pairs observed
    before ``t``, the portfolio return density is estimated given the components
    of day ``t - 1``, and the ``alpha`` return quantile is compared with the
    realized return. Reported VaR values are losses, i.e. negated quantiles.

    Parameters
    ----------
    returns : (n, m) array
        Portfolio return column followed by ``m - 1`` component columns.
    warmup : int
        Days used before the first evaluation; also the rolling window length by default.
    plan_policy : {"frozen", "periodic(r)"}
        Bandwidths chosen on the first evaluated day and kept, or re-chosen every ``r`` days.
    window : {"expanding", "rolling"}
    """
    r = np.asarray(returns, dtype=np.float64)
    if r.ndim != 2 or r.shape[1] < 2:
        raise ValidationError("returns must have a portfolio column and at least one component")
    if not np.all(np.isfinite(r)):
        raise ValidationError("returns must be finite")
    n, m = r.shape
    warmup = int(warmup)
    if warmup < MIN_WARMUP:
        raise ValidationError(f"warmup must be at least {MIN_WARMUP}")
    if warmup >= n:
        raise ValidationError("warmup leaves no days to evaluate")
    levels = [float(a) for a in levels]
    if not levels or any(not 0.0 < a < 1.0 for a in levels):
        raise ValidationError("levels must lie in (0, 1)")
    period = parse_plan_policy(plan_policy)
    if window not in ("expanding", "rolling"):
        raise ValidationError("window must be 'expanding' or 'rolling'")
    length = int(window_length or warmup)
    if window == "rolling" and length < MIN_WARMUP:
        raise ValidationError(f"rolling window must hold at least {MIN_WARMUP} days")

    design = lagged_design(r)  # row s pairs portfolio day s+1 with components day s
    part = Partition((0,), tuple(range(1, m)))
    names = ("portfolio",) + tuple(f"c{i}" for i in range(1, m))
    plan: BandwidthPlan | None = None
    days = []
    exceed = np.zeros(len(levels), dtype=int)
    skipped = 0
    for k, t in enumerate(range(warmup, n)):
        lo = 0 if window == "expanding" else max(0, t - 1 - length)
        train = Dataset(design[lo:t - 1], names)
        ps = pseudo_normalize(train)
        if plan is None or (period is not None and k % period == 0):
            plan = select_bandwidths(ps, part.pairs(), strategy=bandwidth, h=h, threads=threads)
        realized = float(r[t, 0])
        try:
            est = ConditionalEstimator(train, part, plan, threads, pseudo=ps)
            cd = est.conditional(r[t - 1, 1:], grid_size=grid_size)
        except NoLocalMassError:
            skipped += 1
            days.append(DayRecord(t, realized, [np.nan] * len(levels), [False] * len(levels),
                                  [False] * len(levels), True))
            continue
        qs = [cd.quantile(a, with_flag=True) for a in levels]
        hit = [realized < q for q, _ in qs]
        exceed += np.array(hit, dtype=int)
        days.append(DayRecord(t, realized, [-q for q, _ in qs], hit, [f for _, f in qs]))
    n_eval = n - warmup
    used = n_eval - skipped
    if used == 0:
        raise NumericalError("every evaluation day was skipped for lack of local mass")
    props = [float(e) / used for e in exceed]
    policy = "frozen" if period is None else f"periodic({period})"
    return BacktestReport(levels, props, [int(e) for e in exceed], n_eval, skipped, "lgde", policy,
                          window, days)
