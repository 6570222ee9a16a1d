"""Regression fits, covariance estimation and signal preprocessing.

Data are stored stacked: returns R is m x T and signals S is p x T, where
column t of R is the return that follows the signal in column t of S.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import SingularMatrixError, ValidationError
from .model import symmetrize

GRAM_RTOL = 1e-12


@dataclass(frozen=True)
class StackedData:
    returns: np.ndarray
    signals: np.ndarray

    def __post_init__(self):
        r = np.atleast_2d(np.asarray(self.returns, dtype=float))
        s = np.atleast_2d(np.asarray(self.signals, dtype=float))
        if r.shape[1] != s.shape[1]:
            raise ValidationError(f"returns have T={r.shape[1]} columns but signals have {s.shape[1]}")
        object.__setattr__(self, "returns", r)
        object.__setattr__(self, "signals", s)

    @property
    def m(self):
        return self.returns.shape[0]

    @property
    def p(self):
        return self.signals.shape[0]

    @property
    def t(self):
        return self.returns.shape[1]


@dataclass(frozen=True)
class FitResult:
    beta: np.ndarray
    residuals: np.ndarray

    def __iter__(self):
        return iter((self.beta, self.residuals))


def _collinear_rows(gram):
    w, v = np.linalg.eigh(gram)
    vec = v[:, 0]
    return [int(i) for i in np.flatnonzero(np.abs(vec) > 1e-3 * np.abs(vec).max())]


def _check_gram(gram, what="signal"):
    w = np.linalg.eigvalsh(gram)
    if w[-1] <= 0 or w[0] <= GRAM_RTOL * w[-1]:
        rows = _collinear_rows(gram)
        raise SingularMatrixError(f"singular Gram matrix; collinear {what} rows {rows}")


def ols_fit(data: StackedData) -> FitResult:
    r, s = data.returns, data.signals
    if data.t < data.p:
        raise SingularMatrixError(f"T={data.t} < p={data.p}: Gram matrix is rank deficient")
    gram = s @ s.T
    _check_gram(gram)
    beta = np.linalg.solve(gram, s @ r.T).T
    return FitResult(beta, r - beta @ s)


def ridge_fit(data: StackedData, gamma: float) -> np.ndarray:
    """beta = R S^T (S S^T + gamma*T*I)^-1.  The penalty is scaled by the sample count."""
    if gamma < 0:
        raise ValidationError("ridge gamma must be >= 0")
    if gamma == 0:
        return ols_fit(data).beta
    s = data.signals
    gram = s @ s.T + gamma * data.t * np.eye(data.p)
    return np.linalg.solve(gram, s @ data.returns.T).T


def ols_fit_batch(returns: np.ndarray, signals: np.ndarray, gamma: float = 0.0):
    """OLS / ridge over a batch: returns (n,m,T), signals (n,p,T).

    Gives (beta (n,m,p), ok mask).  Singular batch members get beta = nan.
    """
    n, p, t = signals.shape
    gram = signals @ signals.transpose(0, 2, 1)
    if gamma > 0:
        gram = gram + gamma * t * np.eye(p)
    rhs = signals @ returns.transpose(0, 2, 1)
    w = np.linalg.eigvalsh(gram)
    ok = (w[:, -1] > 0) & (w[:, 0] > GRAM_RTOL * w[:, -1])
    beta = np.full((n, returns.shape[1], p), np.nan)
    if ok.any():
        beta[ok] = np.linalg.solve(gram[ok], rhs[ok]).transpose(0, 2, 1)
    return beta, ok


def hat_diagonal(signals: np.ndarray) -> np.ndarray:
    """Diagonal of S^T (S S^T)^-1 S."""
    s = np.asarray(signals, dtype=float)
    gram = s @ s.T
    _check_gram(gram)
    return np.einsum("it,it->t", s, np.linalg.solve(gram, s))


# ---------------------------------------------------------------- panel regression

@dataclass(frozen=True)
class PanelGrouping:
    """group_of[i, j] is the coefficient index of (asset i, signal j); -1 fixes it at zero."""

    group_of: np.ndarray
    n_groups: int

    def __post_init__(self):
        g = np.asarray(self.group_of, dtype=int)
        if g.ndim != 2:
            raise ValidationError("group_of must be an m x p array")
        object.__setattr__(self, "group_of", g)
        if np.any(g < -1) or np.any(g >= self.n_groups):
            raise ValidationError("group index out of range")
        if self.n_groups > g.size:
            raise ValidationError("n_groups cannot exceed m*p")
        used = np.unique(g[g >= 0])
        if len(used) != self.n_groups:
            raise ValidationError("every group index must be used at least once")

    @classmethod
    def singletons(cls, m, p):
        return cls(np.arange(m * p).reshape(m, p), m * p)

    @classmethod
    def shared_per_signal(cls, m, p):
        return cls(np.tile(np.arange(p), (m, 1)), p)

    @classmethod
    def momentum_families(cls, m, n_families, intercepts="per_asset"):
        """Signal layout: column 0 intercept, then family f / asset a at 1 + f*m + a.

        Each asset loads only on its own signal of each family, with one coefficient
        per family shared by all assets.  Cross-asset loadings are fixed at zero.
        """
        p = 1 + n_families * m
        g = -np.ones((m, p), dtype=int)
        for a in range(m):
            for f in range(n_families):
                g[a, 1 + f * m + a] = f
        if intercepts == "per_asset":
            g[:, 0] = n_families + np.arange(m)
            n = n_families + m
        elif intercepts == "pooled":
            g[:, 0] = n_families
            n = n_families + 1
        elif intercepts == "none":
            n = n_families
        else:
            raise ValidationError(f"unknown intercepts option {intercepts!r}")
        return cls(g, n)

    def to_dict(self):
        return {"group_of": self.group_of.tolist(), "n_groups": self.n_groups}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["group_of"], dtype=int), int(d["n_groups"]))


def panel_normal_equations(gram, cross, grouping):
    """Grouped normal equations from gram = S S^T (p x p) and cross = S R^T (p x m)."""
    go = grouping.group_of
    m, p = go.shape
    k = grouping.n_groups
    xtx = np.zeros((k, k))
    xty = np.zeros(k)
    for i in range(m):
        cols = np.flatnonzero(go[i] >= 0)
        gi = go[i, cols]
        np.add.at(xtx, (gi[:, None], gi[None, :]), gram[np.ix_(cols, cols)])
        np.add.at(xty, gi, cross[cols, i])
    return xtx, xty


def expand_groups(theta, grouping):
    go = grouping.group_of
    return np.where(go >= 0, np.asarray(theta)[np.maximum(go, 0)], 0.0)


def panel_fit(data: StackedData, grouping: PanelGrouping) -> np.ndarray:
    if grouping.group_of.shape != (data.m, data.p):
        raise ValidationError(f"grouping is {grouping.group_of.shape}, data is ({data.m}, {data.p})")
    s = data.signals
    xtx, xty = panel_normal_equations(s @ s.T, s @ data.returns.T, grouping)
    w = np.linalg.eigvalsh(xtx)
    if w[-1] <= 0 or w[0] <= GRAM_RTOL * w[-1]:
        raise SingularMatrixError("grouped design is rank deficient")
    return expand_groups(np.linalg.solve(xtx, xty), grouping)


# ---------------------------------------------------------------- covariance

def sample_covariance(x: np.ndarray, demean: bool = True) -> np.ndarray:
    """Covariance of the rows of x (d x T).

    demean=True uses the T-1 denominator; demean=False treats the mean as known zero
    and divides by T.  Both are unbiased.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = x.shape[1]
    if t < 2:
        raise ValidationError("need at least 2 observations for a covariance")
    if demean:
        xc = x - x.mean(axis=1, keepdims=True)
        return symmetrize(xc @ xc.T / (t - 1))
    return symmetrize(x @ x.T / t)


def shrink_covariance(sigma_hat: np.ndarray, t_eff: int) -> np.ndarray:
    """Trace-preserving linear shrinkage towards the average eigenvalue when m > t_eff."""
    sig = np.atleast_2d(np.asarray(sigma_hat, dtype=float))
    if sig.shape[0] != sig.shape[1]:
        raise ValidationError("covariance must be square")
    scale = max(np.abs(sig).max(), 1e-300)
    if np.abs(sig - sig.T).max() > 1e-10 * scale:
        raise ValidationError("covariance must be symmetric")
    if t_eff < 1:
        raise ValidationError("t_eff must be >= 1")
    m = sig.shape[0]
    q = m / t_eff
    if q <= 1:
        return sig.copy()
    lam = np.trace(sig) / m
    return sig / q + (1 - 1 / q) * lam * np.eye(m)


# ---------------------------------------------------------------- preprocessing

def _active_rows(p, intercept_row):
    rows = np.arange(p)
    if intercept_row is not None:
        rows = rows[rows != intercept_row]
    return rows


def standardize_signals(s: np.ndarray, intercept_row: int | None = None):
    """Per-row mean 0 / sample std 1.  Returns (standardized, means, stds).

    The intercept row, if given, passes through with mean 0 and std 1 recorded.
    """
    s = np.atleast_2d(np.asarray(s, dtype=float))
    p, t = s.shape
    if t < 2:
        raise ValidationError("need at least 2 observations to standardize")
    means = np.zeros(p)
    stds = np.ones(p)
    rows = _active_rows(p, intercept_row)
    means[rows] = s[rows].mean(axis=1)
    sd = s[rows].std(axis=1, ddof=1)
    bad = rows[~(sd > 0)]
    if len(bad):
        raise ValidationError(f"signal row {int(bad[0])} has zero variance")
    stds[rows] = sd
    return (s - means[:, None]) / stds[:, None], means, stds


def destandardize(z: np.ndarray, means: np.ndarray, stds: np.ndarray) -> np.ndarray:
    return z * stds[:, None] + means[:, None]


@dataclass(frozen=True)
class Whitening:
    signals: np.ndarray
    transform: np.ndarray   # applied to centred signals
    mean: np.ndarray


def whiten_signals(s: np.ndarray, intercept_row: int | None = None,
                   fit_columns: slice | np.ndarray | None = None) -> Whitening:
    """Centre and whiten with the inverse Cholesky factor of the sample covariance.

    Statistics come from `fit_columns` (default: all columns) and are applied to every
    column.  The intercept row passes through untouched.
    """
    s = np.atleast_2d(np.asarray(s, dtype=float))
    p, _ = s.shape
    rows = _active_rows(p, intercept_row)
    fit = s[:, fit_columns] if fit_columns is not None else s
    mean = np.zeros(p)
    mean[rows] = fit[rows].mean(axis=1)
    cov = sample_covariance(fit[rows], demean=True)
    w = np.linalg.eigvalsh(cov)
    if w[-1] <= 0 or w[0] <= 1e-12 * w[-1]:
        raise SingularMatrixError(
            f"signal covariance is singular (rows {[int(rows[i]) for i in _collinear_rows(cov)]}); "
            "remove redundant signals")
    chol = None
    jitter = 0.0
    base = 1e-12 * np.trace(cov) / len(rows)
    for attempt in range(4):
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(len(rows)))
            break
        except np.linalg.LinAlgError:
            jitter = base if attempt == 0 else jitter * 10
    if chol is None:
        raise SingularMatrixError("Cholesky failed after jitter escalation; remove redundant signals")
    inv_chol = np.linalg.solve(chol, np.eye(len(rows)))
    transform = np.eye(p)
    transform[np.ix_(rows, rows)] = inv_chol
    out = s.copy()
    out[rows] = inv_chol @ (s[rows] - mean[rows, None])
    return Whitening(out, transform, mean)


# ---------------------------------------------------------------- CSV ingestion

def _read_dated_csv(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}") from None
    if not rows:
        raise ValidationError(f"empty CSV: {path}")
    header, body = rows[0], [r for r in rows[1:] if r]
    dates = [r[0] for r in body]
    try:
        values = np.array([[float(v) for v in r[1:]] for r in body], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric value ({exc})") from None
    return header[1:], dates, values.reshape(len(body), len(header) - 1)


def load_stacked_csv(returns_path, signals_path) -> tuple[StackedData, list[str]]:
    """Two CSVs (date + one column per asset / per signal), rows matched by date string."""
    _, d_ret, ret = _read_dated_csv(returns_path)
    _, d_sig, sig = _read_dated_csv(signals_path)
    if len(d_ret) != len(d_sig):
        raise ValidationError(f"row counts differ: {len(d_ret)} returns vs {len(d_sig)} signals")
    for i, (a, b) in enumerate(zip(d_ret, d_sig)):
        if a != b:
            raise ValidationError(f"date mismatch at row {i + 1}: {a!r} vs {b!r}")
    return StackedData(ret.T, sig.T), d_ret
