import numpy as np
import pytest
from scipy import stats

from lgcde.errors import ValidationError
from lgcde.risk import lagged_design, parse_plan_policy, var_backtest, wilson_interval


def _iid_returns(n, seed):
    c = np.random.default_rng(seed).standard_normal((n, 3))
    return np.column_stack([c.mean(axis=1), c])


def test_wilson_interval_oracle():
    lo, hi = wilson_interval(20, 400)
    z = stats.norm.ppf(0.975)
    p = 0.05
    c = (p + z * z / 800) / (1 + z * z / 400)
    hw = z * np.sqrt(p * (1 - p) / 400 + z * z / (4 * 400 ** 2)) / (1 + z * z / 400)
    assert (lo, hi) == pytest.approx((c - hw, c + hw), rel=1e-14)
    assert lo < 0.05 < hi


def test_plan_policy_parsing():
    assert parse_plan_policy("frozen") is None
    assert parse_plan_policy("periodic(20)") == 20
    assert parse_plan_policy(("periodic", 5)) == 5
    for bad in ("weekly", "periodic(x)", "periodic(0)"):
        with pytest.raises(ValidationError):
            parse_plan_policy(bad)


def test_lag_structure():
    r = np.arange(12.0).reshape(4, 3)
    np.testing.assert_array_equal(lagged_design(r), [[3, 1, 2], [6, 4, 5], [9, 7, 8]])


def test_median_level_on_symmetric_data():
    r = _iid_returns(1100, 1)
    rep = var_backtest(r, warmup=100, levels=[0.5], bandwidth="fixed", h=1.0, grid_size=300)
    assert rep.n_eval == 1000
    assert rep.exceed_proportion[0] == pytest.approx(0.5, abs=0.05)


def test_report_fields_and_monotonicity():
    r = _iid_returns(260, 2)
    rep = var_backtest(r, warmup=200, bandwidth="fixed", h=1.0, grid_size=300)
    assert rep.n_eval == 60 and rep.skipped == 0 and len(rep.days) == 60
    p = rep.exceed_proportion
    assert p[2] >= p[1] >= p[0]
    assert all(0 <= v <= 1 for v in p)
    for d in rep.days:
        assert d.var[0] >= d.var[1] >= d.var[2]
        assert d.exceeded[2] >= d.exceeded[1] >= d.exceeded[0]


def test_portfolio_equal_to_component():
    c = np.random.default_rng(3).standard_normal((180, 2))
    r = np.column_stack([c[:, 0], c])
    rep = var_backtest(r, warmup=150, bandwidth="fixed", h=0.8, grid_size=200)
    assert rep.n_eval == 30


def test_periodic_and_rolling_run():
    r = _iid_returns(230, 4)
    a = var_backtest(r, warmup=200, plan_policy="periodic(10)", window="rolling", window_length=120,
                     grid_size=200)
    assert a.plan_policy == "periodic(10)" and a.window == "rolling"
    b = var_backtest(r, warmup=200, plan_policy="periodic(10)", window="rolling", window_length=120,
                     grid_size=200)
    assert a.exceed_proportion == b.exceed_proportion
    assert [d.var for d in a.days] == [d.var for d in b.days]


def test_skipped_days_are_counted():
    r = _iid_returns(130, 5)
    r[115, 1:] = 1e4  # conditioning values of day 116 are far outside the data
    rep = var_backtest(r, warmup=110, bandwidth="fixed", h=1.0, grid_size=200)
    assert rep.skipped == 1
    assert rep.days[6].skipped


def test_input_checks():
    r = _iid_returns(300, 6)
    with pytest.raises(ValidationError):
        var_backtest(r, warmup=50)
    with pytest.raises(ValidationError):
        var_backtest(r, warmup=300)
    with pytest.raises(ValidationError):
        var_backtest(r[:, :1], warmup=100)
    with pytest.raises(ValidationError):
        var_backtest(r, warmup=100, levels=[1.5])
