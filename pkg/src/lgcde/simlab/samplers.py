"""Seeded generators for the benchmark distributions.

Copula draws are produced in survival form ``V = 1 - U`` so that the upper
tail keeps full precision when exponential or log-normal margins are applied.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from ..data import Dataset, check_seed, make_rng
from ..errors import ValidationError

FAMILIES = (
    "gaussian_copula",
    "joe_copula",
    "t_copula",
    "multivariate_t",
    "lognormal_t10_plus_indep_t5",
    "nonlinear_ar1",
)
MARGINS = ("std_normal", "std_exponential", "lognormal")

_DEFAULTS = {
    "gaussian_copula": {"rho": 0.5},
    "joe_copula": {"theta": 3.83},
    "t_copula": {"rho": 0.5, "dof": 10.0},
    "multivariate_t": {"rho": 0.5, "dof": 4.0},
    "lognormal_t10_plus_indep_t5": {"rho": 0.5, "dof": 10.0, "noise_rho": 0.5, "noise_dof": 5.0},
    "nonlinear_ar1": {"a": 0.8, "b": 0.5, "burn_in": 200},
}


def exchangeable_corr(p, rho):
    R = np.full((p, p), float(rho))
    np.fill_diagonal(R, 1.0)
    return R


def _corr_param(params, p, key="rho"):
    val = params.get("corr")
    R = np.asarray(val, dtype=np.float64) if val is not None else exchangeable_corr(p, params[key])
    if R.shape != (p, p) or not np.allclose(R, R.T) or not np.allclose(np.diag(R), 1.0):
        raise ValidationError("correlation matrix must be symmetric with unit diagonal")
    if np.linalg.eigvalsh(R)[0] <= 0:
        raise ValidationError("correlation matrix must be positive definite")
    return R


@dataclass(frozen=True)
class SimSpec:
    """Description of a generative model.

    ``params`` overrides the family defaults (``theta`` for Joe, ``rho``/``corr``
    and ``dof`` for the elliptical families, ``a``/``b`` for the nonlinear AR(1)).
    ``margins`` applies to the copula families only.
    """

    family: str
    n: int
    p: int = 2
    params: dict = field(default_factory=dict)
    margins: str = "std_normal"
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.margins not in MARGINS:
            raise ValidationError(f"unknown margins {self.margins!r}; choose from {MARGINS}")
        if int(self.n) < 1:
            raise ValidationError("n must be positive")
        p_min = 1 if self.family == "nonlinear_ar1" else 2
        if int(self.p) < p_min:
            raise ValidationError(f"family {self.family} needs p >= {p_min}")
        check_seed(self.seed)
        unknown = set(self.params) - set(_DEFAULTS[self.family]) - {"corr"}
        if unknown:
            raise ValidationError(f"unknown parameters for {self.family}: {sorted(unknown)}")
        merged = {**_DEFAULTS[self.family], **self.params}
        object.__setattr__(self, "params", merged)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "p", int(self.p))
        if self.family == "joe_copula" and not merged["theta"] >= 1:
            raise ValidationError("Joe copula needs theta >= 1")
        for key in ("dof", "noise_dof"):
            if key in merged and not merged[key] > 0:
                raise ValidationError(f"{key} must be positive")
        if self.family in ("gaussian_copula", "t_copula", "multivariate_t"):
            _corr_param(merged, self.p)
        if self.family == "lognormal_t10_plus_indep_t5":
            _corr_param({"rho": merged["rho"]}, 2)
            if self.p > 3:
                _corr_param({"rho": merged["noise_rho"]}, self.p - 2)

    def with_seed(self, seed):
        return SimSpec(self.family, self.n, self.p, dict(self.params), self.margins, seed)

    @property
    def corr(self):
        return _corr_param(self.params, self.p)


# Margins: functions of the survival probability v = 1 - u.

def margin_isf(name, v):
    if name == "std_normal":
        return -special.ndtri(v)
    if name == "std_exponential":
        return -np.log(v)
    if name == "lognormal":
        return np.exp(-special.ndtri(v))
    raise ValidationError(f"unknown margins {name!r}")


def margin_sf(name, x):
    x = np.asarray(x, dtype=np.float64)
    if name == "std_normal":
        return special.ndtr(-x)
    if name == "std_exponential":
        return np.where(x > 0, np.exp(-np.maximum(x, 0)), 1.0)
    if name == "lognormal":
        with np.errstate(divide="ignore"):
            return special.ndtr(-np.log(np.maximum(x, 0)))
    raise ValidationError(f"unknown margins {name!r}")


def margin_logpdf(name, x):
    x = np.asarray(x, dtype=np.float64)
    if name == "std_normal":
        return stats.norm.logpdf(x)
    if name == "std_exponential":
        return stats.expon.logpdf(x)
    if name == "lognormal":
        return stats.lognorm.logpdf(x, 1.0)
    raise ValidationError(f"unknown margins {name!r}")


def margin_ppf(name, q):
    q = np.asarray(q, dtype=np.float64)
    if name == "std_normal":
        return stats.norm.ppf(q)
    if name == "std_exponential":
        return stats.expon.ppf(q)
    if name == "lognormal":
        return stats.lognorm.ppf(q, 1.0)
    raise ValidationError(f"unknown margins {name!r}")


# Joe copula. With w = 1 - exp(-t), the generator inverse is psi(t) = 1 - w^alpha,
# alpha = 1/theta, and its d-th derivative is -w^alpha * sum_j a[d, j] y^j with
# y = 1/expm1(t). All a[d, :] share the sign (-1)^(d-1), so the sum has no cancellation.

def joe_deriv_coeffs(d, theta):
    alpha = 1.0 / theta
    a = np.zeros(d + 1)
    a[0] = 1.0
    for _ in range(d):
        nxt = np.zeros(d + 1)
        for j in range(d + 1):
            if a[j] == 0.0:
                continue
            if j + 1 <= d:
                nxt[j + 1] += (alpha - j) * a[j]
            nxt[j] -= j * a[j]
        a = nxt
    return a


def joe_log_abs_deriv(d, t, theta):
    """``log |psi^(d)(t)|`` for the Joe generator inverse, ``d >= 1``."""
    t = np.asarray(t, dtype=np.float64)
    a = joe_deriv_coeffs(d, theta)
    nz = np.flatnonzero(a)
    logw = np.log(-np.expm1(-t)).reshape(-1)
    logy = -np.log(np.expm1(t)).reshape(-1)
    terms = np.log(np.abs(a[nz]))[:, None] + nz[:, None] * logy[None, :]
    out = logw / theta + special.logsumexp(terms, axis=0)
    return out.reshape(t.shape)


def joe_phi_sv(v, theta):
    """Generator ``phi(u) = -log(1 - (1-u)^theta)`` written in ``v = 1 - u``."""
    return -np.log1p(-np.power(v, theta))


def joe_log_abs_dphi_sv(v, theta):
    """``log |phi'(u)|`` in ``v = 1 - u``."""
    vt = np.power(v, theta)
    return np.log(theta) + (theta - 1.0) * np.log(v) - np.log1p(-vt)


def joe_tau(theta, terms=200000):
    """Kendall's tau of the Joe copula from its series representation."""
    k = np.arange(1, terms + 1, dtype=np.float64)
    return 1.0 - 4.0 * np.sum(1.0 / (k * (theta * k + 2.0) * (theta * (k - 1.0) + 2.0)))


def sample_joe_survival(n, p, theta, rng, iters=60):
    """Draw ``V = 1 - U`` from the exchangeable Joe copula by conditional inversion.

    Coordinate ``j`` solves ``psi^(j)(s + phi(u)) / psi^(j)(s) = r`` for ``u`` by
    bisection in ``v`` on (0, 1); 60 halvings put the bracket below 1e-18.
    """
    r = np.maximum(rng.random((n, p)), np.finfo(np.float64).tiny)
    V = np.empty((n, p))
    V[:, 0] = r[:, 0]
    if theta == 1.0:
        V[:, 1:] = r[:, 1:]
        return V
    s = joe_phi_sv(V[:, 0], theta)
    for j in range(1, p):
        log_den = joe_log_abs_deriv(j, s, theta)
        log_target = np.log(r[:, j])
        lo = np.zeros(n)
        hi = np.ones(n)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            with np.errstate(divide="ignore"):
                c = joe_log_abs_deriv(j, s + joe_phi_sv(mid, theta), theta) - log_den
            # the conditional CDF decreases in v
            above = c > log_target
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
        V[:, j] = 0.5 * (lo + hi)
        s = s + joe_phi_sv(V[:, j], theta)
    return V


def _mvt(n, R, dof, rng):
    z = rng.standard_normal((n, R.shape[0])) @ np.linalg.cholesky(R).T
    w = rng.chisquare(dof, size=n)
    return z / np.sqrt(w / dof)[:, None]


def sample(spec: SimSpec) -> Dataset:
    """Draw ``spec.n`` observations; equal specs give bit-identical datasets."""
    rng = make_rng(spec.seed)
    n, p, prm = spec.n, spec.p, spec.params
    names = tuple(f"X{i + 1}" for i in range(p))
    fam = spec.family
    if fam == "gaussian_copula":
        z = rng.standard_normal((n, p)) @ np.linalg.cholesky(spec.corr).T
        x = z if spec.margins == "std_normal" else margin_isf(spec.margins, special.ndtr(-z))
    elif fam == "joe_copula":
        x = margin_isf(spec.margins, sample_joe_survival(n, p, float(prm["theta"]), rng))
    elif fam == "t_copula":
        t = _mvt(n, spec.corr, float(prm["dof"]), rng)
        x = margin_isf(spec.margins, stats.t.sf(t, prm["dof"]))
    elif fam == "multivariate_t":
        x = _mvt(n, spec.corr, float(prm["dof"]), rng)
    elif fam == "lognormal_t10_plus_indep_t5":
        t = _mvt(n, exchangeable_corr(2, prm["rho"]), float(prm["dof"]), rng)
        head = margin_isf("lognormal", stats.t.sf(t, prm["dof"]))
        if p > 2:
            tail = _mvt(n, exchangeable_corr(p - 2, prm["noise_rho"]), float(prm["noise_dof"]), rng)
            x = np.column_stack([head, tail])
        else:
            x = head
    elif fam == "nonlinear_ar1":
        x = nonlinear_ar1(n, prm["a"], prm["b"], rng, int(prm["burn_in"]))[:, None]
        names = ("x",)
    else:  # pragma: no cover - guarded by SimSpec
        raise ValidationError(fam)
    return Dataset(x, names)


def nonlinear_ar1(n, a, b, rng, burn_in=200):
    """``X_t = a X_{t-1} + b sqrt(|X_{t-1}|) + Z_t`` with standard normal innovations."""
    eps = rng.standard_normal(n + burn_in)
    x = np.empty(n + burn_in)
    prev = 0.0
    for t in range(n + burn_in):
        prev = a * prev + b * np.sqrt(abs(prev)) + eps[t]
        x[t] = prev
    return x[burn_in:]
