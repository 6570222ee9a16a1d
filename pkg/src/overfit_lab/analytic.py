"""Closed-form Sharpe ratios and expected in-sample / out-of-sample PnL moments."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize

from .errors import NumericalError, SingularMatrixError, ValidationError
from .model import BacktestWindow, ModelSpec, WeightRule, derive_matrices, require_valid
from .special import SeriesControl, log_gamma, log_hyp1f1

DROPPED_ZERO = "dropped_zero"
SIMULATED_ESTIMATE = "simulated_estimate"


@dataclass(frozen=True)
class SpecialConstants:
    c1: float
    c1_tilde: float
    c2: float
    c2_tilde: float


@dataclass(frozen=True)
class MomentSummary:
    is_mean: float
    is_var: float
    oos_mean: float
    oos_var: float
    constants: SpecialConstants | None = None
    epsilon_policy: str = DROPPED_ZERO
    epsilon: float = 0.0
    m: int | None = None
    p: int | None = None
    t1: int | None = None

    def to_dict(self):
        d = asdict(self)
        return d


@dataclass(frozen=True)
class SharpeReport:
    sr_true: float | None
    sr_eis: float
    sr_eoos: float
    replication_ratio: float
    annualization_factor: float = 1.0
    replication_defined: bool = True
    informationless: bool = False
    source: str = "analytic"

    def to_dict(self):
        return asdict(self)


def _tr(a):
    return float(np.trace(a))


# ---------------------------------------------------------------- true Sharpe

def _true_parts(spec: ModelSpec):
    """Return (mean, quartic part, quadratic part) of the true PnL moments."""
    dm = derive_matrices(spec)
    g, f, s, mu = dm.g, dm.f, spec.sigma_s, spec.mu_s
    gs = g @ s
    mean = _tr(gs) + mu @ g @ mu
    quartic = 2 * _tr(gs @ gs) + 4 * mu @ g @ s @ g @ mu
    quadratic = _tr(f @ s) + mu @ f @ mu
    return float(mean), float(quartic), float(quadratic)


def true_sharpe(spec: ModelSpec) -> float:
    mean, quartic, quadratic = _true_parts(spec)
    var = quartic + quadratic
    if mean == 0 and var <= 0:
        return 0.0
    if var <= 0:
        raise NumericalError("true PnL variance is not positive")
    return mean / math.sqrt(var)


def true_sharpe_supremum(spec: ModelSpec) -> float:
    """Limit of true_sharpe(c*beta) as c -> infinity."""
    mean, quartic, _ = _true_parts(spec)
    if quartic <= 0:
        return 0.0
    return mean / math.sqrt(quartic)


def scale_for_true_sharpe(spec: ModelSpec, target: float) -> ModelSpec:
    """Rescale beta so that true_sharpe equals target.

    SR(c beta)^2 = c^4 a^2 / (c^4 x + c^2 y), so c^2 = target^2 y / (a^2 - target^2 x).
    """
    if target < 0:
        raise ValidationError("target Sharpe ratio must be non-negative")
    if target == 0:
        return spec.with_beta(np.zeros_like(spec.beta))
    a, x, y = _true_parts(spec)
    sup = a / math.sqrt(x) if x > 0 else 0.0
    if a <= 0 or target >= sup:
        raise ValidationError(f"target Sharpe {target} unreachable; supremum over scaling is {sup}")
    c2 = target**2 * y / (a**2 - target**2 * x)
    return spec.with_beta(spec.beta * math.sqrt(c2))


# ---------------------------------------------------------------- moments

def special_constants(m: int, p: int, t1: int) -> SpecialConstants:
    if t1 <= p + 1:
        raise ValidationError(f"degenerate window: t1={t1} must exceed p+1={p + 1}")
    n = t1 - p - 1
    c1 = 1 + (p + 1) / n
    c1t = (2 * p + 5) / n + 2 * m * (p * p + p + 2 * t1) / (t1 * n)
    c2 = m * p / n
    c2t = (m * p * (2 * m + p + t1 + 4) / (t1 * (t1 + 2))
           - 2 * m * m * p * p / (t1 * t1 * (t1 + 2))
           - m * p / n)
    return SpecialConstants(c1, c1t, c2, c2t)


def is_special_case(spec: ModelSpec, atol: float = 1e-12) -> bool:
    return (spec.weight_rule is WeightRule.PRECISION
            and not spec.has_intercept
            and np.all(spec.mu_s == 0)
            and np.allclose(spec.sigma_s, np.eye(spec.p), rtol=0, atol=atol))


def _epsilon_policy(epsilon):
    if epsilon is None:
        return DROPPED_ZERO, 0.0
    return SIMULATED_ESTIMATE, float(epsilon)


def expected_moments_special(spec: ModelSpec, window: BacktestWindow,
                             epsilon: float | None = None) -> MomentSummary:
    require_valid(spec)
    if not is_special_case(spec):
        raise ValidationError("special case requires Z=Σ_ε⁻¹, μ_s=0, Σ_s=I")
    m, p = spec.m, spec.p
    window.check(p)
    t1 = window.t1
    gamma = derive_matrices(spec).gamma
    tr_g = _tr(gamma)
    tr_g2 = _tr(gamma @ gamma)
    c = special_constants(m, p, t1)
    policy, eps = _epsilon_policy(epsilon)
    return MomentSummary(
        is_mean=tr_g + p * m / t1,
        is_var=2 * tr_g2 + (c.c1 + c.c1_tilde) * tr_g + c.c2 + c.c2_tilde + eps,
        oos_mean=tr_g,
        oos_var=2 * tr_g2 + c.c1 * tr_g + c.c2,
        constants=c, epsilon_policy=policy, epsilon=eps, m=m, p=p, t1=t1,
    )


def expected_moments_general(spec: ModelSpec, window: BacktestWindow,
                             epsilon: float | None = None) -> MomentSummary:
    """Expected IS/OOS mean and variance for arbitrary Z, mu_s, Sigma_s (OLS fit).

    The IS variance drops the covariance terms between the inverse Gram matrix and
    the signal quartics unless an estimate is passed as `epsilon`.
    """
    require_valid(spec)
    m, p = spec.m, spec.p
    window.check(p)
    t = window.t1
    n = t - p - 1
    dm = derive_matrices(spec)
    g, f = dm.g, dm.f
    s, mu = spec.sigma_s, spec.mu_s
    ze = spec.z_matrix() @ spec.sigma_eps
    tr_ze = _tr(ze)
    tr_ze2 = _tr(ze @ ze)

    second = s + np.outer(mu, mu)
    if np.linalg.cond(second) > 1e12:
        raise SingularMatrixError("Σ_s + μ_s μ_sᵀ is singular")
    second_inv = np.linalg.inv(second)
    tilt = second_inv @ (s - np.outer(mu, mu))
    d = second_inv / n
    mu_sum = float(mu.sum())

    gs, fs = g @ s, f @ s
    base_mean = _tr(gs) + mu @ g @ mu
    base_var = 2 * _tr(gs @ gs) + 4 * mu @ g @ s @ g @ mu + _tr(fs) + mu @ f @ mu

    def overfit_trace(a):
        return _tr(2 * a @ second + (mu @ a @ mu) * tilt + p * a @ s)

    den = t * t * (t + 1) * (t + 2)
    policy, eps = _epsilon_policy(epsilon)
    is_mean = base_mean + p / t * tr_ze
    is_var = (base_var
              + 3 / n * overfit_trace(f)
              + tr_ze2 * (p * t * (t + 1) * (p + t + 4) - 2 * (p - t - 2) * (p - t) * mu_sum) / den
              - tr_ze**2 * 2 * (p - t) * ((p - 2) * mu_sum + t * (p - mu_sum) + p) / den
              + 2 / n * tr_ze * overfit_trace(g)
              - 2 * p / t * tr_ze * base_mean
              + eps)
    tr_sd = _tr(s @ d)
    oos_var = (base_var
               + mu @ (2 * d @ s @ f + _tr(fs) * d + tr_sd * f) @ mu
               + _tr(d @ s @ f @ s) + tr_sd * _tr(fs)
               + tr_ze2 * (tr_sd + mu @ d @ mu))
    consts = special_constants(m, p, t) if is_special_case(spec) else None
    return MomentSummary(float(is_mean), float(is_var), float(base_mean), float(oos_var),
                         consts, policy, eps, m, p, t)


# ---------------------------------------------------------------- Sharpe ratios

def expected_sharpes(moments: MomentSummary, annualization: float = 1.0,
                     sr_true: float | None = None) -> SharpeReport:
    if not (moments.is_var > 0 and moments.oos_var > 0):
        raise NumericalError(f"non-positive variance (is_var={moments.is_var}, oos_var={moments.oos_var})")
    sr_eis = moments.is_mean / math.sqrt(moments.is_var)
    sr_eoos = moments.oos_mean / math.sqrt(moments.oos_var)
    informationless = moments.oos_mean == 0.0
    if sr_eis == 0.0:
        ratio, defined = math.nan, False
    else:
        ratio, defined = sr_eoos / sr_eis, True
    ann = float(annualization)
    return SharpeReport(
        sr_true=None if sr_true is None else sr_true * ann,
        sr_eis=sr_eis * ann, sr_eoos=sr_eoos * ann, replication_ratio=ratio,
        annualization_factor=ann, replication_defined=defined, informationless=informationless,
    )


def sharpe_report(spec: ModelSpec, window: BacktestWindow, annualization: float = 1.0,
                  moments: MomentSummary | None = None) -> tuple[MomentSummary, SharpeReport]:
    if moments is None:
        moments = expected_moments_general(spec, window)
    return moments, expected_sharpes(moments, annualization, true_sharpe(spec))


def annualization_factor(periods_per_year: float) -> float:
    if periods_per_year <= 0:
        raise ValidationError("periods per year must be positive")
    return math.sqrt(periods_per_year)


def analytic_row(spec: ModelSpec, window: BacktestWindow, annualization: float = 1.0) -> dict:
    """One row of the batch CSV."""
    mom, rep = sharpe_report(spec, window, annualization)
    c = mom.constants
    return {
        "m": spec.m, "p": spec.p, "t1": window.t1,
        "sr_true": rep.sr_true, "sr_eis": rep.sr_eis, "sr_eoos": rep.sr_eoos,
        "replication_ratio": rep.replication_ratio,
        "is_mean": mom.is_mean, "is_var": mom.is_var,
        "oos_mean": mom.oos_mean, "oos_var": mom.oos_var,
        "c1": c.c1 if c else "", "c1_tilde": c.c1_tilde if c else "",
        "c2": c.c2 if c else "", "c2_tilde": c.c2_tilde if c else "",
    }


ANALYTIC_COLUMNS = ["m", "p", "t1", "sr_true", "sr_eis", "sr_eoos", "replication_ratio",
                    "is_mean", "is_var", "oos_mean", "oos_var", "c1", "c1_tilde", "c2", "c2_tilde"]


def _moment_polynomials(spec, window):
    """Moments are polynomial in u = c^2 when beta -> c beta: means linear, variances quadratic."""
    pts = [0.0, 1.0, 4.0]
    rows = [expected_moments_general(spec.with_beta(spec.beta * math.sqrt(u)), window) for u in pts]
    vand = np.vander(pts, 3, increasing=True)

    def fit(values):
        return np.linalg.solve(vand, np.array(values))

    return {
        "is_mean": fit([r.is_mean for r in rows]),
        "is_var": fit([r.is_var for r in rows]),
        "oos_mean": fit([r.oos_mean for r in rows]),
        "oos_var": fit([r.oos_var for r in rows]),
    }


def scale_for_expected_sharpe(spec: ModelSpec, window: BacktestWindow, target: float,
                              which: str = "eis") -> ModelSpec:
    """Rescale beta so the analytic SR_EIS (or SR_EOOS) hits `target` (per step).

    Solves target^2 * var(u) = mean(u)^2 for u = c^2 and keeps the largest root on
    the branch where the mean is positive.
    """
    if which not in ("eis", "eoos"):
        raise ValidationError("which must be 'eis' or 'eoos'")
    key = "is" if which == "eis" else "oos"
    poly = _moment_polynomials(spec, window)
    mean, var = poly[f"{key}_mean"], poly[f"{key}_var"]
    # mean = a0 + a1 u ; var = v0 + v1 u + v2 u^2
    a0, a1 = mean[0], mean[1]
    v0, v1, v2 = var
    coeffs = [target**2 * v2 - a1 * a1, target**2 * v1 - 2 * a0 * a1, target**2 * v0 - a0 * a0]
    roots = np.roots(coeffs)
    good = [r.real for r in roots if abs(r.imag) < 1e-12 * max(1.0, abs(r.real))
            and r.real >= 0 and a0 + a1 * r.real > 0]
    if not good:
        sup = a1 / math.sqrt(v2) if v2 > 0 else math.nan
        raise ValidationError(f"target {target} unreachable by scaling beta (limit {sup})")
    return spec.with_beta(spec.beta * math.sqrt(max(good)))


# ---------------------------------------------------------------- closed-form ratios

def univariate_replication(beta: float, t1: int) -> float:
    """Replication ratio for one asset and one signal with unit signal and noise scales."""
    if t1 <= 2:
        raise ValidationError("t1 must exceed 2")
    b2 = beta * beta
    if b2 == 0:
        return 0.0
    t = float(t1)
    is_mean = b2 + 1 / t
    is_var = 2 * b2 * b2 + (1 + 15 / (t - 2) - 2 / t) * b2 + 4 / t - 3 / (t + 2) - 1 / t**2
    oos_var = 2 * b2 * b2 + (1 + 2 / (t - 2)) * b2 + 1 / (t - 2)
    return (b2 / math.sqrt(oos_var)) / (is_mean / math.sqrt(is_var))


def uniform_beta_replication(k: float, p: int, m: int, t1: int) -> float:
    """Replication ratio with beta = k * ones(m, p) and identity covariances."""
    if t1 <= p + 1:
        raise ValidationError(f"degenerate window: t1={t1} must exceed p+1={p + 1}")
    if k == 0:
        return 0.0
    c = special_constants(m, p, t1)
    x = k * k * p * m
    is_part = x / (x + p * m / t1)
    num = 2 * x * x + (c.c1 + c.c1_tilde) * x + c.c2 + c.c2_tilde
    den = 2 * x * x + c.c1 * x + c.c2
    return is_part * math.sqrt(num / den)


def uniform_beta_sr_eis(k: float, p: int, m: int, t1: int) -> float:
    c = special_constants(m, p, t1)
    x = k * k * p * m
    return (x + p * m / t1) / math.sqrt(2 * x * x + (c.c1 + c.c1_tilde) * x + c.c2 + c.c2_tilde)


def uniform_beta_k_for_true_sharpe(sr: float, p: int, m: int) -> float:
    """With beta = k*ones, tr(Gamma) = k^2 p m and SR = x / sqrt(2x^2 + x)."""
    if not 0 <= sr < 1 / math.sqrt(2):
        raise ValidationError(f"true Sharpe must lie in [0, 1/sqrt(2)), got {sr}")
    x = sr * sr / (1 - 2 * sr * sr)
    return math.sqrt(x / (p * m))


def uniform_beta_k_for_eis(target: float, p: int, m: int, t1: int) -> float | None:
    """k such that the analytic SR_EIS equals target on its increasing branch, None if unreachable.

    SR_EIS is positive at k=0 (pure overfitting) and may dip before rising towards
    1/sqrt(2); for large p*m/t1 the target can already be exceeded at k=0.
    """
    f = lambda lx: uniform_beta_sr_eis(math.sqrt(math.exp(lx) / (p * m)), p, m, t1) - target  # noqa: E731
    lo, hi = -40.0, 40.0
    grid = np.linspace(lo, hi, 161)
    vals = np.array([f(v) for v in grid])
    i_min = int(np.argmin(vals))
    if vals[i_min] > 0 or vals[-1] < 0:
        return None
    j = i_min + int(np.argmax(vals[i_min:] >= 0))
    if j == i_min:
        return None
    lx = optimize.brentq(f, grid[j - 1], grid[j], xtol=1e-14, rtol=1e-14)
    return math.sqrt(math.exp(lx) / (p * m))


def ar1_true_sharpe(beta: float, phi: float) -> float:
    if not abs(phi) < 1:
        raise ValidationError("non-stationary signal: |phi| must be < 1")
    return abs(beta) / math.sqrt(1 + 2 * beta * beta - phi * phi)


def ar1_beta_for_true_sharpe(sr: float, phi: float) -> float:
    """Inverse of ar1_true_sharpe for beta >= 0."""
    if not abs(phi) < 1:
        raise ValidationError("non-stationary signal: |phi| must be < 1")
    if not 0 <= sr < 1 / math.sqrt(2):
        raise ValidationError("true Sharpe must lie in [0, 1/sqrt(2))")
    return math.sqrt(sr * sr * (1 - phi * phi) / (1 - 2 * sr * sr))


# ---------------------------------------------------------------- Kan comparison

def _kan_control(t, theta):
    z = t * theta * theta / 2
    return SeriesControl(rel_tol=1e-14, max_terms=max(10000, int(4 * z) + 1000))


def _kan_check(theta, m, t):
    if theta < 0:
        raise ValidationError("theta must be non-negative")
    if t <= m + 2:
        raise ValidationError("Gamma argument non-positive: need t > m + 2")


def kan_expected_is_sr(theta: float, m: int, t: int) -> float:
    """Expected sample Sharpe of the in-sample Markowitz portfolio (theta per step)."""
    _kan_check(theta, m, t)
    log_pref = (log_gamma((m + 1) / 2) + log_gamma((t - m - 1) / 2)
                - log_gamma(m / 2) - log_gamma((t - m) / 2))
    z = -t * theta * theta / 2
    return math.exp(log_pref + log_hyp1f1(-0.5, m / 2, z, _kan_control(t, theta)))


def kan_expected_oos_sr(theta: float, m: int, t: int) -> float:
    """Expected true Sharpe of the estimated Markowitz portfolio (theta per step)."""
    _kan_check(theta, m, t)
    if theta == 0:
        return 0.0
    log_pref = (2 * math.log(theta) + 0.5 * math.log(t) - 0.5 * math.log(2)
                + log_gamma((m + 1) / 2) + log_gamma((t - m + 2) / 2) + log_gamma(t / 2)
                - log_gamma((m + 2) / 2) - log_gamma((t - m + 1) / 2) - log_gamma((t + 1) / 2))
    z = -t * theta * theta / 2
    return math.exp(log_pref + log_hyp1f1(0.5, (m + 2) / 2, z, _kan_control(t, theta)))


def kan_comparison_curve(theta: float, t: int, m_values, p_ours=1) -> list[dict]:
    """Replication ratios of the Kan model and of the uniform-beta model per m.

    Our points use beta = k*ones(m, p) with k chosen so the true Sharpe equals theta.
    """
    p_list = [int(p_ours)] if np.isscalar(p_ours) else [int(v) for v in p_ours]
    rows = []
    for m in m_values:
        m = int(m)
        kis = kan_expected_is_sr(theta, m, t)
        koos = kan_expected_oos_sr(theta, m, t)
        rows.append({"m": m, "model": "kan", "p": "", "theta": theta, "t": t,
                     "sr_is": kis, "sr_oos": koos, "replication_ratio": koos / kis})
        for p in p_list:
            k = uniform_beta_k_for_true_sharpe(theta, p, m)
            sr_eis = uniform_beta_sr_eis(k, p, m, t)
            ratio = uniform_beta_replication(k, p, m, t)
            rows.append({"m": m, "model": "linear", "p": p, "theta": theta, "t": t,
                         "sr_is": sr_eis, "sr_oos": sr_eis * ratio, "replication_ratio": ratio})
    return rows


# ---------------------------------------------------------------- grid helpers for plot data

def replication_vs_t1(spec: ModelSpec, t1_values, t2: int = 1, annualization: float = 1.0) -> list[dict]:
    rows = []
    for t1 in t1_values:
        _, rep = sharpe_report(spec, BacktestWindow(int(t1), t2), annualization)
        rows.append({"t1": int(t1), "sr_eis": rep.sr_eis, "sr_eoos": rep.sr_eoos,
                     "replication_ratio": rep.replication_ratio})
    return rows


def replication_vs_p(sr_eis_target: float, p_values, m_values, t1: int) -> list[dict]:
    """Uniform-beta replication at a fixed analytic SR_EIS (per step); infeasible points skipped."""
    rows = []
    for m in m_values:
        for p in p_values:
            if t1 <= p + 1:
                continue
            k = uniform_beta_k_for_eis(sr_eis_target, int(p), int(m), t1)
            if k is None:
                continue
            rows.append({"m": int(m), "p": int(p), "t1": t1, "k": k,
                         "replication_ratio": uniform_beta_replication(k, int(p), int(m), t1)})
    return rows


def heatmap_sr_t1(sr_values, t1_values) -> list[dict]:
    """Univariate replication ratio over (true SR per step, T1)."""
    rows = []
    for sr in sr_values:
        beta = math.sqrt(sr * sr / (1 - 2 * sr * sr)) if sr > 0 else 0.0
        for t1 in t1_values:
            rows.append({"sr_true": sr, "t1": int(t1), "replication_ratio": univariate_replication(beta, int(t1))})
    return rows
