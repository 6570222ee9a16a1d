"""Implied signal strength and the resampling study over a user dataset."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize

from . import analytic
from .errors import NumericalError, SingularMatrixError, ValidationError
from .estimation import ols_fit, StackedData, whiten_signals
from .model import BacktestWindow, ModelSpec
from .simulation import path_rng, sample_stats

DEFAULT_TOL = 1e-8
DEFAULT_BRACKET = 1e3
MAX_BRACKET = 1e6


@dataclass(frozen=True)
class CalibrationTarget:
    observed_oos_sr: float
    p_active: int
    t1: int
    sigma_eps_hat: np.ndarray
    include_intercept: bool = True

    def __post_init__(self):
        sig = np.atleast_2d(np.asarray(self.sigma_eps_hat, dtype=float))
        object.__setattr__(self, "sigma_eps_hat", sig)
        if self.p_active < 1:
            raise ValidationError("p_active must be >= 1")
        if self.t1 <= self.n_regressors + 1:
            raise ValidationError(f"t1={self.t1} must exceed p+1={self.n_regressors + 1}")

    @property
    def n_regressors(self):
        return self.p_active + (1 if self.include_intercept else 0)


@dataclass(frozen=True)
class ImpliedBeta:
    k: float
    beta: np.ndarray
    sr_eoos: float
    clipped: bool   # observed target was <= 0 and mapped to k = 0


def calibration_spec(target: CalibrationTarget, k: float) -> ModelSpec:
    """Whitened-signal model with equal coefficient k on every active signal."""
    m = target.sigma_eps_hat.shape[0]
    p = target.n_regressors
    beta = np.full((m, p), float(k))
    sigma_s = np.eye(p)
    mu = np.zeros(p)
    if target.include_intercept:
        beta[:, 0] = 0.0
        sigma_s[0, 0] = 0.0
        mu[0] = 1.0
    return ModelSpec(beta, mu, sigma_s, target.sigma_eps_hat, has_intercept=target.include_intercept)


def implied_sr_eoos(target: CalibrationTarget, k: float) -> float:
    """Analytic SR_EOOS of the calibration model at coefficient k (full moment evaluation)."""
    mom = analytic.expected_moments_general(calibration_spec(target, k), BacktestWindow(target.t1, 1))
    return mom.oos_mean / math.sqrt(mom.oos_var)


class _EoosCurve:
    """SR_EOOS(k) = a u / sqrt(v0 + v1 u + v2 u^2) with u = k^2.

    The OOS mean is linear and the OOS variance quadratic in u, so three full
    evaluations pin the curve down exactly; a fourth one checks it.
    """

    def __init__(self, target):
        pts = np.array([0.0, 1.0, 4.0])
        moms = [analytic.expected_moments_general(calibration_spec(target, math.sqrt(u)),
                                                  BacktestWindow(target.t1, 1)) for u in pts]
        vand = np.vander(pts, 3, increasing=True)
        self.mean = np.linalg.solve(vand, [mo.oos_mean for mo in moms])
        self.var = np.linalg.solve(vand, [mo.oos_var for mo in moms])
        check = implied_sr_eoos(target, 0.37)
        if abs(self(0.37) - check) > 1e-12 * max(1.0, abs(check)):
            raise NumericalError("SR_EOOS is not polynomial in k^2 as expected")

    def __call__(self, k):
        u = k * k
        return (self.mean[0] + self.mean[1] * u) / math.sqrt(self.var[0] + self.var[1] * u + self.var[2] * u * u)

    def supremum(self):
        return self(1e6)


def sr_eoos_supremum(target: CalibrationTarget) -> float:
    """Limit of SR_EOOS as k -> infinity (evaluated at k = 1e6)."""
    return implied_sr_eoos(target, 1e6)


def _check_monotone(curve, hi):
    ks = np.concatenate([[0.0], np.geomspace(hi * 1e-8, hi, 63)])
    vals = np.array([curve(k) for k in ks])
    if np.any(np.diff(vals) <= -1e-14 * np.abs(vals[1:]).max()):
        raise NumericalError("SR_EOOS is not increasing in k on the bracket")


def implied_beta(target: CalibrationTarget, tol: float = DEFAULT_TOL,
                 bracket: float = DEFAULT_BRACKET) -> ImpliedBeta:
    goal = target.observed_oos_sr
    if goal <= 0:
        spec = calibration_spec(target, 0.0)
        return ImpliedBeta(0.0, spec.beta, 0.0, goal < 0)
    curve = _EoosCurve(target)
    sup = curve.supremum()
    if goal >= sup:
        raise ValidationError(f"target SR_EOOS {goal} is above the supremum {sup}")
    hi = bracket
    while curve(hi) < goal:
        hi *= 10
        if hi > MAX_BRACKET:
            raise NumericalError(f"could not bracket target {goal} below k={MAX_BRACKET}")
    _check_monotone(curve, hi)
    k = optimize.brentq(lambda v: curve(v) - goal, 0.0, hi,
                        xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    got = curve(k)
    if abs(got - goal) > tol:
        raise NumericalError(f"root finder missed target: |{got} - {goal}| > {tol}")
    return ImpliedBeta(k, calibration_spec(target, k).beta, got, False)


# ---------------------------------------------------------------- datasets

@dataclass(frozen=True)
class Dataset:
    dates: list
    returns: np.ndarray        # (T,)
    signals: np.ndarray        # (T, N), nan where missing
    names: list

    @property
    def n_signals(self):
        return self.signals.shape[1]

    def coverage(self):
        """(first, last) row index with a value, per signal column; (-1, -1) when empty."""
        out = []
        for j in range(self.n_signals):
            idx = np.flatnonzero(np.isfinite(self.signals[:, j]))
            out.append((int(idx[0]), int(idx[-1])) if idx.size else (-1, -1))
        return out


def load_dataset(path, return_column: str | None = None, date_column: str | None = None) -> Dataset:
    """CSV with a date column, one return column and N signal columns (blank = missing)."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}") from None
    if len(rows) < 3:
        raise ValidationError(f"{path}: need a header and at least two rows")
    header = rows[0]
    d_col = header.index(date_column) if date_column else 0
    r_col = header.index(return_column) if return_column else (1 if d_col == 0 else 0)
    sig_cols = [j for j in range(len(header)) if j not in (d_col, r_col)]

    def num(v):
        v = v.strip()
        return float(v) if v else math.nan

    try:
        body = rows[1:]
        returns = np.array([num(r[r_col]) for r in body])
        signals = np.array([[num(r[j]) for j in sig_cols] for r in body]).reshape(len(body), len(sig_cols))
    except (ValueError, IndexError) as exc:
        raise ValidationError(f"{path}: malformed row ({exc})") from None
    return Dataset([r[d_col] for r in body], returns, signals, [header[j] for j in sig_cols])


def kelly_normalize(ds: Dataset, window: int = 12, min_obs: int = 12) -> Dataset:
    """Scale returns by trailing rolling volatility and signals by expanding volatility.

    Both scalings use data strictly before the current row.  Rows without enough
    history become missing.
    """
    r = ds.returns
    t = r.size
    r_out = np.full(t, np.nan)
    for i in range(window, t):
        past = r[i - window:i]
        sd = np.nanstd(past, ddof=1)
        if np.isfinite(sd) and sd > 0:
            r_out[i] = r[i] / sd
    s = ds.signals
    s_out = np.full_like(s, np.nan)
    for j in range(s.shape[1]):
        col = s[:, j]
        for i in range(t):
            past = col[:i][np.isfinite(col[:i])]
            if past.size >= min_obs:
                sd = past.std(ddof=1)
                if sd > 0:
                    s_out[i, j] = col[i] / sd
    return Dataset(ds.dates, r_out, s_out, ds.names)


# ---------------------------------------------------------------- resampling

@dataclass(frozen=True)
class ResampleConfig:
    n_draws: int = 1000
    min_leg_years: float = 5.0
    min_total_years: float = 10.0
    max_total_years: float = 70.0
    min_signals: int = 1
    max_signals: int = 39
    periods_per_year: int = 12
    seed: int = 0
    whiten_in_sample_only: bool = False
    signal_lag: int = 1
    max_attempt_factor: int = 100

    def __post_init__(self):
        if self.n_draws < 1:
            raise ValidationError("n_draws must be >= 1")
        if self.min_leg_years <= 0:
            raise ValidationError("min_leg_years must be positive")
        if self.min_total_years < 2 * self.min_leg_years:
            raise ValidationError("min_total_years must allow two legs of min_leg_years")
        if self.max_total_years < self.min_total_years:
            raise ValidationError("max_total_years < min_total_years")
        if not 1 <= self.min_signals <= self.max_signals:
            raise ValidationError("bad signal-count range")
        if self.signal_lag < 0:
            raise ValidationError("signal_lag must be >= 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


def _aligned(ds: Dataset, lag: int):
    """Pair signals on row t with the return on row t+lag."""
    if lag == 0:
        return ds.signals, ds.returns
    return ds.signals[:-lag], ds.returns[lag:]


def _one_draw(sig, ret, cols, start, t1, t2, cfg, ppy):
    t = t1 + t2
    s_raw = sig[start:start + t, cols].T
    r = ret[start:start + t][None, :]
    p = len(cols)
    s = np.vstack([np.ones(t), s_raw])
    wh = whiten_signals(s, intercept_row=0,
                        fit_columns=slice(0, t1) if cfg.whiten_in_sample_only else None)
    s = wh.signals
    fit = ols_fit(StackedData(r[:, :t1], s[:, :t1]))
    resid = fit.residuals[0]
    sig_eps = float(resid.var(ddof=1))
    if not sig_eps > 0:
        raise SingularMatrixError("zero residual variance")
    z = 1.0 / sig_eps
    pnl = z * (fit.beta @ s)[0] * r[0]
    st_is, st_oos = sample_stats(pnl[:t1]), sample_stats(pnl[t1:])
    target = CalibrationTarget(st_oos.sharpe if st_oos.sharpe_defined else 0.0, p, t1,
                               np.array([[sig_eps]]), include_intercept=True)
    imp = implied_beta(target)
    spec = calibration_spec(target, imp.k)
    mom, rep = analytic.sharpe_report(spec, BacktestWindow(t1, t2))
    return {
        "p": p, "t1": t1, "t2": t2, "start": start,
        "is_mean": st_is.mean, "is_var": st_is.variance, "sr_is": st_is.sharpe,
        "oos_mean": st_oos.mean, "oos_var": st_oos.variance, "sr_oos": st_oos.sharpe,
        "sigma_eps_hat": sig_eps, "k": imp.k, "clipped": imp.clipped,
        "sr_true": rep.sr_true, "sr_eis": rep.sr_eis, "sr_eoos": rep.sr_eoos,
        "replication_ratio": rep.replication_ratio if rep.replication_defined else None,
        "t1_years": t1 / ppy,
    }


def resample_study(ds: Dataset, cfg: ResampleConfig) -> list[dict]:
    """Random signal subsets and chronological IS/OOS splits, one record per accepted draw."""
    sig, ret = _aligned(ds, cfg.signal_lag)
    t_all, n_sig = sig.shape
    if n_sig == 0:
        raise ValidationError("dataset has no signal columns")
    valid = np.isfinite(sig)
    ret_ok = np.isfinite(ret)
    ppy = cfg.periods_per_year
    min_leg = int(math.ceil(cfg.min_leg_years * ppy))
    min_tot = max(int(math.ceil(cfg.min_total_years * ppy)), 2 * min_leg)
    max_tot = int(math.floor(cfg.max_total_years * ppy))
    p_hi = min(cfg.max_signals, n_sig)
    if cfg.min_signals > p_hi:
        raise ValidationError(f"dataset has {n_sig} signals, fewer than min_signals={cfg.min_signals}")
    records = []
    attempts = 0
    cap = cfg.max_attempt_factor * cfg.n_draws
    draw = 0
    while len(records) < cfg.n_draws:
        if attempts >= cap:
            raise NumericalError(f"draw rejection cap {cap} exhausted with {len(records)} accepted draws")
        rng = path_rng(cfg.seed, attempts, 7)
        attempts += 1
        p = int(rng.integers(cfg.min_signals, p_hi + 1))
        cols = np.sort(rng.choice(n_sig, size=p, replace=False))
        ok_rows = np.all(valid[:, cols], axis=1) & ret_ok
        # longest requirement: contiguous full coverage
        idx = np.flatnonzero(ok_rows)
        if idx.size == 0:
            continue
        first, last = idx[0], idx[-1]
        if not ok_rows[first:last + 1].all():
            continue
        span = last - first + 1
        hi_tot = min(max_tot, span)
        if hi_tot < min_tot:
            continue
        total = int(rng.integers(min_tot, hi_tot + 1))
        if total - 2 * min_leg < 0:
            continue
        t1 = int(rng.integers(min_leg, total - min_leg + 1))
        if t1 <= p + 2:
            continue
        start = first + int(rng.integers(0, span - total + 1))
        try:
            rec = _one_draw(sig, ret, cols, start, t1, total - t1, cfg, ppy)
        except (SingularMatrixError, NumericalError):
            continue
        rec["draw"] = draw
        rec["attempt"] = attempts - 1
        rec["signals"] = [ds.names[c] for c in cols]
        records.append(rec)
        draw += 1
    return records


# ---------------------------------------------------------------- aggregation

def _influence_se(infl, groups=None):
    """SE of a mean from per-draw influence values; with groups, clustered by group."""
    n = infl.size
    if groups is None:
        return float(np.std(infl, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    _, inv = np.unique(groups, return_inverse=True)
    sums = np.bincount(inv, weights=infl - infl.mean())
    g = sums.size
    if g < 2:
        return math.nan
    return float(math.sqrt(g / (g - 1) * np.sum(sums**2)) / n)


def _ratio_se(num, den, groups=None):
    """Ratio of means with delta-method SE for paired samples."""
    a, b = num.mean(), den.mean()
    r = a / b
    return r, _influence_se((num - r * den) / abs(b), groups)


def bin_records(records: list[dict], by: str = "p", n_bins: int = 20, cluster: str | None = None) -> list[dict]:
    """Bin draws by `by` ('p', 't1' or 'sr_true') and average the replication statistics.

    Equal-count quantile bins; axes with at most n_bins distinct values are binned by value.
    Draws sharing the same value of record[cluster] (e.g. one dataset) are treated as
    dependent when computing standard errors.
    """
    if by not in ("p", "t1", "sr_true"):
        raise ValidationError("bin axis must be p, t1 or sr_true")
    recs = [r for r in records if r.get("sr_is") is not None and np.isfinite(r["sr_is"])
            and np.isfinite(r["sr_oos"])]
    if not recs:
        return []
    x = np.array([r[by] for r in recs], dtype=float)
    uniq = np.unique(x)
    if uniq.size <= n_bins:
        labels = np.searchsorted(uniq, x)
        edges = None
    else:
        edges = np.unique(np.quantile(x, np.linspace(0, 1, n_bins + 1)))
        labels = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, len(edges) - 2)
    cols = {k: np.array([r[k] for r in recs], dtype=float) for k in ("sr_is", "sr_oos", "sr_eis", "sr_eoos")}
    groups = np.array([r[cluster] for r in recs]) if cluster else None
    out = []
    for b in np.unique(labels):
        sel = labels == b
        n = int(sel.sum())
        sr_is, sr_oos = cols["sr_is"][sel], cols["sr_oos"][sel]
        eis, eoos = cols["sr_eis"][sel], cols["sr_eoos"][sel]
        g = None if groups is None else groups[sel]
        emp_roe, emp_roe_se = _ratio_se(sr_oos, sr_is, g)
        ana_roe, ana_roe_se = _ratio_se(eoos, eis, g)
        pos = eis != 0
        # paired difference of the two ratios-of-means, via their influence functions
        infl = ((sr_oos - emp_roe * sr_is) / sr_is.mean()) - ((eoos - ana_roe * eis) / eis.mean())
        diff_se = _influence_se(infl, g)
        with np.errstate(divide="ignore", invalid="ignore"):
            emp_eor = sr_oos / sr_is
            ana_eor = eoos[pos] / eis[pos]
        row = {
            "axis": by, "bin": int(b), "n": n,
            "x_mean": float(x[sel].mean()), "x_lo": float(x[sel].min()), "x_hi": float(x[sel].max()),
            "emp_ratio_of_means": emp_roe, "emp_ratio_of_means_se": emp_roe_se,
            "emp_mean_of_ratios": float(np.mean(emp_eor)),
            "emp_mean_of_ratios_se": _influence_se(emp_eor, g),
            "ana_ratio_of_means": ana_roe, "ana_ratio_of_means_se": ana_roe_se,
            "ana_mean_of_ratios": float(np.mean(ana_eor)) if ana_eor.size else math.nan,
            "diff_se": diff_se,
            "mean_sr_is": float(sr_is.mean()), "mean_sr_oos": float(sr_oos.mean()),
            "mean_sr_eis": float(eis.mean()), "mean_sr_eoos": float(eoos.mean()),
        }
        out.append(row)
    return out


def overall_summary(records: list[dict], cluster: str | None = None) -> dict:
    """Aggregate replication statistics over all draws."""
    recs = [r for r in records if np.isfinite(r["sr_is"]) and np.isfinite(r["sr_oos"])]
    groups = np.array([r[cluster] for r in recs]) if cluster else None
    sr_is = np.array([r["sr_is"] for r in recs])
    sr_oos = np.array([r["sr_oos"] for r in recs])
    eis = np.array([r["sr_eis"] for r in recs])
    eoos = np.array([r["sr_eoos"] for r in recs])
    emp_roe, emp_roe_se = _ratio_se(sr_oos, sr_is, groups)
    ana_roe, ana_roe_se = _ratio_se(eoos, eis, groups)
    emp_eor = sr_oos / sr_is
    n = len(recs)
    return {
        "n": n,
        "emp_ratio_of_means": emp_roe, "emp_ratio_of_means_se": emp_roe_se,
        "emp_mean_of_ratios": float(emp_eor.mean()),
        "emp_mean_of_ratios_se": _influence_se(emp_eor, groups),
        "ana_ratio_of_means": ana_roe, "ana_ratio_of_means_se": ana_roe_se,
        "ana_mean_of_ratios": float(np.mean(eoos / eis)),
        "clipped_fraction": float(np.mean([r["clipped"] for r in recs])) if recs else math.nan,
    }


def synthetic_dataset(n_rows: int, beta: np.ndarray, sigma_eps: float = 1.0, seed: int = 0,
                      start_year: int = 1900) -> Dataset:
    """Monthly dataset from r_{t+1} = beta . s_t + eps with iid N(0, 1) signals.

    Row t holds s_t and r_t, matching the default one-step signal lag of resample_study.
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    rng = path_rng(seed, 0, 11)
    s = rng.standard_normal((n_rows, beta.size))
    eps = rng.standard_normal(n_rows) * math.sqrt(sigma_eps)
    r = np.empty(n_rows)
    r[0] = eps[0]
    r[1:] = s[:-1] @ beta + eps[1:]
    dates = [f"{start_year + i // 12:04d}-{i % 12 + 1:02d}" for i in range(n_rows)]
    return Dataset(dates, r, s, [f"s{j}" for j in range(beta.size)])
