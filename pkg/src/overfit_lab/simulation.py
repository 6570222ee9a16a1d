"""Monte-Carlo oracle: signal/return generators, backtests and averaged experiments.

Every path draws from its own RNG stream keyed on (seed, path_index, stream tag),
so results do not depend on chunking, execution order or thread count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg

from . import analytic
from .errors import NumericalError, SingularMatrixError, ValidationError
from .estimation import (
    PanelGrouping,
    expand_groups,
    ols_fit_batch,
    panel_normal_equations,
    sample_covariance,
    shrink_covariance,
)
from .model import BacktestWindow, ModelSpec, WeightRule, require_valid

SIGNAL_STREAM = 1
NOISE_STREAM = 2
MODEL_STREAM = 3


def path_rng(seed: int, path_index: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(path_index), int(tag))))


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class GaussianIID:
    kind: str = "gaussian_iid"


@dataclass(frozen=True)
class AR1:
    """Vector AR(1) s_t = phi s_{t-1} + u_t.  The covariance given to the generator is Cov(u)."""

    phi: np.ndarray
    kind: str = "ar1"


@dataclass(frozen=True)
class AR1StudentT:
    phi: np.ndarray
    dof: np.ndarray
    kind: str = "ar1_student_t"


@dataclass(frozen=True)
class GaussianNoise:
    kind: str = "gaussian"


@dataclass(frozen=True)
class StudentTNoise:
    dof: np.ndarray
    kind: str = "student_t"


@dataclass(frozen=True)
class SimulationConfig:
    signal_kind: object = field(default_factory=GaussianIID)
    noise_kind: object = field(default_factory=GaussianNoise)
    n_paths: int = 1000
    seed: int = 0
    burn_in: int = 0

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValidationError("n_paths must be >= 1")
        if self.burn_in < 0:
            raise ValidationError("burn_in must be >= 0")
        sk = self.signal_kind
        if isinstance(sk, (AR1, AR1StudentT)):
            phi = np.atleast_2d(np.asarray(sk.phi, dtype=float))
            rho = max(abs(np.linalg.eigvals(phi))) if phi.size else 0.0
            if rho >= 1:
                raise ValidationError(f"unstable AR(1): spectral radius {rho:.6g} >= 1")
        for dof in _dofs(self):
            if np.any(np.asarray(dof) <= 2):
                raise ValidationError("Student-t degrees of freedom must exceed 2")

    def with_paths(self, n_paths=None, seed=None):
        return SimulationConfig(self.signal_kind, self.noise_kind,
                                self.n_paths if n_paths is None else n_paths,
                                self.seed if seed is None else seed, self.burn_in)

    def to_dict(self):
        def enc(k):
            d = {"kind": k.kind}
            if hasattr(k, "phi"):
                d["phi"] = np.atleast_2d(k.phi).tolist()
            if hasattr(k, "dof"):
                d["dof"] = np.atleast_1d(k.dof).tolist()
            return d
        return {"signal_kind": enc(self.signal_kind), "noise_kind": enc(self.noise_kind),
                "n_paths": self.n_paths, "seed": self.seed, "burn_in": self.burn_in}

    @classmethod
    def from_dict(cls, d):
        sk = d.get("signal_kind", {"kind": "gaussian_iid"})
        nk = d.get("noise_kind", {"kind": "gaussian"})
        if isinstance(sk, str):
            sk = {"kind": sk}
        if isinstance(nk, str):
            nk = {"kind": nk}
        kinds = {
            "gaussian_iid": lambda x: GaussianIID(),
            "ar1": lambda x: AR1(np.atleast_2d(np.asarray(x["phi"], dtype=float))),
            "ar1_student_t": lambda x: AR1StudentT(np.atleast_2d(np.asarray(x["phi"], dtype=float)),
                                                   np.atleast_1d(np.asarray(x["dof"], dtype=float))),
        }
        noises = {
            "gaussian": lambda x: GaussianNoise(),
            "student_t": lambda x: StudentTNoise(np.atleast_1d(np.asarray(x["dof"], dtype=float))),
        }
        try:
            signal = kinds[sk["kind"]](sk)
            noise = noises[nk["kind"]](nk)
        except KeyError as exc:
            raise ValidationError(f"unknown or incomplete simulation kind: {exc}") from None
        return cls(signal, noise, int(d.get("n_paths", 1000)), int(d.get("seed", 0)), int(d.get("burn_in", 0)))


def _dofs(config):
    out = []
    if isinstance(config.signal_kind, AR1StudentT):
        out.append(config.signal_kind.dof)
    if isinstance(config.noise_kind, StudentTNoise):
        out.append(config.noise_kind.dof)
    return out


# ---------------------------------------------------------------- generators

def psd_factor(cov: np.ndarray) -> np.ndarray:
    """L with L L^T = cov; Cholesky when possible, eigen-factor for singular PSD input."""
    cov = np.atleast_2d(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        if w[0] < -1e-10 * max(w[-1], 1e-300):
            raise ValidationError("covariance is not positive semidefinite") from None
        return v * np.sqrt(np.clip(w, 0, None))


def stationary_covariance(phi: np.ndarray, shock_cov: np.ndarray) -> np.ndarray:
    """P solving P = phi P phi^T + shock_cov."""
    return linalg.solve_discrete_lyapunov(np.atleast_2d(phi), np.atleast_2d(shock_cov))


def shock_covariance_for_stationary(phi: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Shock covariance that makes `sigma` the stationary covariance."""
    phi = np.atleast_2d(phi)
    return sigma - phi @ sigma @ phi.T


def _unit_t(rng, dof, size):
    dof = np.asarray(dof, dtype=float)
    return rng.standard_t(dof, size=size) * np.sqrt((dof - 2) / dof)


def _phi_matrix(phi, q):
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    if phi.shape == (1, 1) and q > 1:
        return phi[0, 0] * np.eye(q)
    if phi.shape != (q, q):
        raise ValidationError(f"phi must be {q}x{q}, got {phi.shape}")
    return phi


def _signal_batch(p, t, sigma_s, config, path_indices, has_intercept=False):
    sigma_s = np.atleast_2d(np.asarray(sigma_s, dtype=float))
    if sigma_s.shape != (p, p):
        raise ValidationError(f"sigma_s must be {p}x{p}")
    active = np.arange(1, p) if has_intercept else np.arange(p)
    q = len(active)
    n = len(path_indices)
    out = np.empty((n, p, t))
    if has_intercept:
        out[:, 0, :] = 1.0
    if q == 0:
        return out
    cov = sigma_s[np.ix_(active, active)]
    fac = psd_factor(cov)
    sk = config.signal_kind
    if isinstance(sk, GaussianIID):
        draws = np.stack([path_rng(config.seed, i, SIGNAL_STREAM).standard_normal((t, q)) for i in path_indices])
        out[:, active, :] = (draws @ fac.T).transpose(0, 2, 1)
        return out

    phi = _phi_matrix(sk.phi, q)
    init_fac = psd_factor(stationary_covariance(phi, cov))
    steps = config.burn_in + t - 1
    init = np.empty((n, q))
    shocks = np.empty((n, steps, q))
    for j, i in enumerate(path_indices):
        rng = path_rng(config.seed, i, SIGNAL_STREAM)
        init[j] = rng.standard_normal(q)
        if isinstance(sk, AR1StudentT):
            dof = np.broadcast_to(np.asarray(sk.dof, dtype=float), (q,))
            shocks[j] = _unit_t(rng, dof, (steps, q))
        else:
            shocks[j] = rng.standard_normal((steps, q))
    x = init @ init_fac.T
    shocks = shocks @ fac.T
    path = np.empty((n, t, q))
    k0 = config.burn_in
    for k in range(k0):
        x = x @ phi.T + shocks[:, k]
    path[:, 0] = x
    if q == 1:
        from scipy.signal import lfilter
        seq = np.concatenate([x[:, None, :], shocks[:, k0:]], axis=1)[..., 0]
        path[..., 0] = lfilter([1.0], [1.0, -phi[0, 0]], seq, axis=1)
    else:
        for k in range(1, t):
            x = x @ phi.T + shocks[:, k0 + k - 1]
            path[:, k] = x
    out[:, active, :] = path.transpose(0, 2, 1)
    return out


def _noise_batch(m, t, sigma_eps, config, path_indices):
    fac = psd_factor(np.atleast_2d(sigma_eps))
    nk = config.noise_kind
    draws = np.empty((len(path_indices), t, m))
    for j, i in enumerate(path_indices):
        rng = path_rng(config.seed, i, NOISE_STREAM)
        if isinstance(nk, StudentTNoise):
            dof = np.broadcast_to(np.asarray(nk.dof, dtype=float), (m,))
            draws[j] = _unit_t(rng, dof, (t, m))
        else:
            draws[j] = rng.standard_normal((t, m))
    return (draws @ fac.T).transpose(0, 2, 1)


def simulate_signals(p: int, t: int, sigma_s, config: SimulationConfig, path_index: int,
                     has_intercept: bool = False) -> np.ndarray:
    """p x t signal matrix for one path.

    GaussianIID: columns iid N(0, sigma_s).  AR(1) kinds: sigma_s is the shock
    covariance and the recursion starts from its stationary distribution.  With
    has_intercept, row 0 is the constant 1 and sigma_s[0, :] is ignored.
    """
    return _signal_batch(p, t, sigma_s, config, [path_index], has_intercept)[0]


def simulate_returns(spec: ModelSpec, signals: np.ndarray, config: SimulationConfig, path_index: int,
                     noiseless: bool = False) -> np.ndarray:
    """m x t returns; column t is r_{t+1} = beta s_t + eps_{t+1}."""
    signals = np.atleast_2d(signals)
    if signals.shape[0] != spec.p:
        raise ValidationError(f"signals have {signals.shape[0]} rows, spec has p={spec.p}")
    r = spec.beta @ signals
    if not noiseless:
        r = r + _noise_batch(spec.m, signals.shape[1], spec.sigma_eps, config, [path_index])[0]
    return r


# ---------------------------------------------------------------- backtest

@dataclass(frozen=True)
class SampleStats:
    mean: float
    variance: float
    sharpe: float
    n: int
    sharpe_defined: bool = True


def sample_stats(pnl: np.ndarray) -> SampleStats:
    pnl = np.asarray(pnl, dtype=float)
    n = pnl.size
    if n < 2:
        raise ValidationError("need at least 2 PnL observations for a variance")
    mean = float(pnl.mean())
    var = float(pnl.var(ddof=1))
    if var > 0:
        return SampleStats(mean, var, mean / math.sqrt(var), n, True)
    return SampleStats(mean, 0.0, math.nan, n, False)


def run_backtest(beta_hat, z, signals, returns):
    """PnL_t = (Z beta_hat s_t)^T r_{t+1} with columns of returns aligned to signals."""
    beta_hat = np.atleast_2d(beta_hat)
    z = np.atleast_2d(z)
    signals = np.atleast_2d(signals)
    returns = np.atleast_2d(returns)
    if signals.shape[1] != returns.shape[1]:
        raise ValidationError("signals and returns must have the same number of columns")
    weights = z @ beta_hat @ signals
    pnl = np.einsum("it,it->t", weights, returns)
    return pnl, sample_stats(pnl)


def _batch_stats(pnl):
    mean = pnl.mean(axis=1)
    var = pnl.var(axis=1, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        sr = np.where(var > 0, mean / np.sqrt(var), np.nan)
    return mean, var, sr


# ---------------------------------------------------------------- experiments

@dataclass(frozen=True)
class OLSFit:
    kind: str = "ols"


@dataclass(frozen=True)
class RidgeFit:
    gamma: float = 0.1
    kind: str = "ridge"


@dataclass(frozen=True)
class PanelFit:
    grouping: PanelGrouping = None
    kind: str = "panel"


TRUE_COV = "true"
ESTIMATED_COV = "estimated"

PATH_FIELDS = ("is_mean", "is_var", "is_sr", "oos_mean", "oos_var", "oos_sr")


def _estimated_z(spec, residuals, t1):
    cov = np.stack([sample_covariance(e, demean=True) for e in residuals])
    out = np.empty_like(cov)
    for j, c in enumerate(cov):
        c = shrink_covariance(c, t1 - 1)
        rule = spec.weight_rule
        if rule is WeightRule.PRECISION:
            out[j] = np.linalg.inv(c)
        elif rule is WeightRule.DIAG_INVERSE:
            out[j] = np.diag(1 / np.diag(c))
        elif rule is WeightRule.IDENTITY:
            out[j] = np.eye(spec.m)
        else:
            out[j] = spec.custom_z
    return out


def _run_chunk(spec, window, config, fit, cov, indices):
    t1, t2 = window.t1, window.t2
    t = t1 + t2
    s = _signal_batch(spec.p, t, spec.sigma_s, config, indices, spec.has_intercept)
    r = spec.beta @ s + _noise_batch(spec.m, t, spec.sigma_eps, config, indices)
    s1, r1 = s[..., :t1], r[..., :t1]
    if isinstance(fit, PanelFit):
        n = len(indices)
        beta = np.full((n, spec.m, spec.p), np.nan)
        ok = np.zeros(n, dtype=bool)
        for j in range(n):
            xtx, xty = panel_normal_equations(s1[j] @ s1[j].T, s1[j] @ r1[j].T, fit.grouping)
            w = np.linalg.eigvalsh(xtx)
            if w[-1] > 0 and w[0] > 1e-12 * w[-1]:
                beta[j] = expand_groups(np.linalg.solve(xtx, xty), fit.grouping)
                ok[j] = True
    else:
        gamma = fit.gamma if isinstance(fit, RidgeFit) else 0.0
        beta, ok = ols_fit_batch(r1, s1, gamma)
    out = {k: np.full(len(indices), np.nan) for k in PATH_FIELDS}
    if not ok.any():
        return out, ok
    beta, s, r, r1, s1 = beta[ok], s[ok], r[ok], r1[ok], s1[ok]
    if cov == ESTIMATED_COV:
        z = _estimated_z(spec, r1 - beta @ s1, t1)
    else:
        z = np.broadcast_to(spec.z_matrix(), (len(beta), spec.m, spec.m))
    load = beta.transpose(0, 2, 1) @ z          # (n, p, m)
    pnl = np.einsum("npt,npt->nt", s, load @ r)
    for prefix, sl in (("is", slice(0, t1)), ("oos", slice(t1, t))):
        mean, var, sr = _batch_stats(pnl[:, sl])
        out[f"{prefix}_mean"][ok] = mean
        out[f"{prefix}_var"][ok] = var
        out[f"{prefix}_sr"][ok] = sr
    return out, ok


def _chunk_size(spec, window):
    per_path = (spec.p + spec.m) * (window.t1 + window.t2) * 8 * 4
    return int(max(1, min(512, 64e6 // per_path)))


def simulate_paths(spec, window, config, fit=OLSFit(), cov=TRUE_COV, n_threads=1, chunk_size=None):
    """Per-path IS/OOS statistics as a dict of arrays, plus the fit-success mask."""
    require_valid(spec)
    if window.t1 < 2 or window.t2 < 2:
        raise ValidationError("both legs need at least 2 steps for a variance")
    if isinstance(fit, PanelFit) and fit.grouping is None:
        raise ValidationError("panel fit needs a grouping")
    n = config.n_paths
    size = chunk_size or _chunk_size(spec, window)
    chunks = [list(range(a, min(n, a + size))) for a in range(0, n, size)]
    work = lambda idx: _run_chunk(spec, window, config, fit, cov, idx)  # noqa: E731
    threads = max(1, int(n_threads or 1))
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, chunks))
    else:
        results = [work(c) for c in chunks]
    paths = {k: np.concatenate([res[0][k] for res in results]) for k in PATH_FIELDS}
    ok = np.concatenate([res[1] for res in results])
    return paths, ok


def _mean_se(x):
    x = x[np.isfinite(x)]
    n = x.size
    if n == 0:
        return math.nan, math.nan
    return float(x.mean()), (float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan)


def delta_se(func, samples):
    """Delta-method SE of func(column means) from an (n, k) sample of paired columns."""
    samples = np.asarray(samples, dtype=float)
    samples = samples[np.all(np.isfinite(samples), axis=1)]
    n, k = samples.shape
    mu = samples.mean(axis=0)
    val = float(func(mu))
    if n < 2:
        return val, math.nan
    grad = np.empty(k)
    for j in range(k):
        h = 1e-6 * max(abs(mu[j]), 1e-8)
        up, dn = mu.copy(), mu.copy()
        up[j] += h
        dn[j] -= h
        grad[j] = (func(up) - func(dn)) / (2 * h)
    infl = samples @ grad
    return val, float(infl.std(ddof=1) / math.sqrt(n))


@dataclass
class ExperimentResult:
    analytic_moments: analytic.MomentSummary | None
    analytic_sharpe: analytic.SharpeReport | None
    simulated: dict
    sharpe_distribution: dict
    n_paths: int
    n_failed: int
    n_degenerate_sharpe: int
    se_defined: bool
    fit: str
    cov: str
    paths: dict | None = None

    def to_dict(self, include_paths=False):
        d = {
            "analytic_moments": self.analytic_moments.to_dict() if self.analytic_moments else None,
            "analytic_sharpe": self.analytic_sharpe.to_dict() if self.analytic_sharpe else None,
            "simulated": self.simulated,
            "sharpe_distribution": self.sharpe_distribution,
            "n_paths": self.n_paths, "n_failed": self.n_failed,
            "n_degenerate_sharpe": self.n_degenerate_sharpe,
            "se_defined": self.se_defined, "fit": self.fit, "cov": self.cov,
        }
        if include_paths and self.paths is not None:
            d["paths"] = {k: v.tolist() for k, v in self.paths.items()}
        return d

    def summary_rows(self, annualization=1.0):
        """Flat rows: quantity, analytic value, simulated mean, SE, z.  Sharpe rows are annualized."""
        am, an = self.analytic_moments, self.analytic_sharpe
        ref = {}
        if am is not None:
            ref.update(is_mean=am.is_mean, is_var=am.is_var, oos_mean=am.oos_mean, oos_var=am.oos_var,
                       is_minus_oos_mean=am.is_mean - am.oos_mean)
        if an is not None:
            ref.update(sr_is_roe=an.sr_eis, sr_oos_roe=an.sr_eoos, replication_roe=an.replication_ratio)
        sharpe_rows = ("is_sr", "oos_sr", "sr_is_roe", "sr_oos_roe")
        rows = []
        for q, (val, se) in self.simulated.items():
            scale = annualization if q in sharpe_rows else 1.0
            a = ref.get(q)
            z = (val - a) / se if (a is not None and se and se > 0) else ""
            rows.append({"quantity": q, "analytic": "" if a is None else a * scale,
                         "simulated": val * scale, "se": se * scale, "z": z})
        return rows


def _aggregate(paths, ok):
    sim = {}
    for k in PATH_FIELDS:
        sim[k] = _mean_se(paths[k])
    both = np.column_stack([paths["is_mean"], paths["oos_mean"]])
    sim["is_minus_oos_mean"] = delta_se(lambda v: v[0] - v[1], both)
    mv = np.column_stack([paths["is_mean"], paths["is_var"], paths["oos_mean"], paths["oos_var"]])
    sim["sr_is_roe"] = delta_se(lambda v: v[0] / math.sqrt(v[1]), mv[:, :2])
    sim["sr_oos_roe"] = delta_se(lambda v: v[0] / math.sqrt(v[1]), mv[:, 2:])
    sim["replication_roe"] = delta_se(lambda v: (v[2] / math.sqrt(v[3])) / (v[0] / math.sqrt(v[1])), mv)
    srs = np.column_stack([paths["is_sr"], paths["oos_sr"]])
    sim["replication_mean_sr"] = delta_se(lambda v: v[1] / v[0], srs)
    fin = np.all(np.isfinite(srs), axis=1)
    sim["mean_sr_ratio"] = _mean_se(srs[fin, 1] / srs[fin, 0])
    return sim


def _quantiles(x):
    x = x[np.isfinite(x)]
    if x.size == 0:
        return {}
    qs = np.quantile(x, [0.05, 0.25, 0.5, 0.75, 0.95])
    return {"mean": float(x.mean()), "q05": float(qs[0]), "q25": float(qs[1]), "median": float(qs[2]),
            "q75": float(qs[3]), "q95": float(qs[4])}


def monte_carlo_experiment(spec: ModelSpec, window: BacktestWindow, config: SimulationConfig,
                           fit=OLSFit(), cov: str = TRUE_COV, n_threads: int = 1,
                           keep_paths: bool = True, chunk_size: int | None = None) -> ExperimentResult:
    if cov not in (TRUE_COV, ESTIMATED_COV):
        raise ValidationError(f"cov must be '{TRUE_COV}' or '{ESTIMATED_COV}'")
    paths, ok = simulate_paths(spec, window, config, fit, cov, n_threads, chunk_size)
    try:
        moments, sharpe = analytic.sharpe_report(spec, window)
    except (ValidationError, NumericalError):
        moments, sharpe = None, None
    degenerate = int(np.sum(ok & ~(np.isfinite(paths["is_sr"]) & np.isfinite(paths["oos_sr"]))))
    return ExperimentResult(
        analytic_moments=moments, analytic_sharpe=sharpe,
        simulated=_aggregate(paths, ok),
        sharpe_distribution={"is": _quantiles(paths["is_sr"]), "oos": _quantiles(paths["oos_sr"])},
        n_paths=config.n_paths, n_failed=int((~ok).sum()), n_degenerate_sharpe=degenerate,
        se_defined=config.n_paths > 1, fit=getattr(fit, "kind", str(fit)), cov=cov,
        paths=paths if keep_paths else None,
    )


# ---------------------------------------------------------------- epsilon and convexity

@dataclass(frozen=True)
class EpsilonEstimate:
    value: float
    se: float
    pct: float
    pct_se: float
    analytic_is_var: float
    simulated_is_var: float

    def to_dict(self):
        return asdict(self)


def estimate_epsilon(spec: ModelSpec, window: BacktestWindow, n_paths: int, rng_seed: int,
                     n_threads: int = 1) -> EpsilonEstimate:
    """Simulated E[IS variance] minus the closed form with the covariance terms dropped."""
    if n_paths < 1:
        raise ValidationError("n_paths must be >= 1")
    ana = analytic.expected_moments_special(spec, window)
    paths, _ = simulate_paths(spec, window, SimulationConfig(n_paths=n_paths, seed=rng_seed),
                              n_threads=n_threads)
    sim, se = _mean_se(paths["is_var"])
    value = sim - ana.is_var
    return EpsilonEstimate(value, se, 100 * value / ana.is_var, 100 * se / ana.is_var, ana.is_var, sim)


def moments_with_simulated_epsilon(spec, window, n_paths, rng_seed, n_threads=1):
    eps = estimate_epsilon(spec, window, n_paths, rng_seed, n_threads)
    return analytic.expected_moments_general(spec, window, epsilon=eps.value), eps


@dataclass(frozen=True)
class ConvexityGap:
    is_gap: float
    oos_gap: float
    is_gap_se: float
    oos_gap_se: float
    defined: bool

    def to_dict(self):
        return asdict(self)


def convexity_gap(spec: ModelSpec, window: BacktestWindow, n_paths: int, rng_seed: int,
                  config: SimulationConfig | None = None, n_threads: int = 1) -> ConvexityGap:
    """E[SR] minus E[mean]/sqrt(E[var]) for both legs, from one set of paths."""
    cfg = (config or SimulationConfig()).with_paths(n_paths, rng_seed)
    paths, _ = simulate_paths(spec, window, cfg, n_threads=n_threads)
    gaps = []
    for leg in ("is", "oos"):
        cols = np.column_stack([paths[f"{leg}_sr"], paths[f"{leg}_mean"], paths[f"{leg}_var"]])
        gaps.append(delta_se(lambda v: v[0] - v[1] / math.sqrt(v[2]), cols))
    defined = n_paths > 1
    return ConvexityGap(gaps[0][0], gaps[1][0],
                        gaps[0][1] if defined else math.nan, gaps[1][1] if defined else math.nan, defined)


# ---------------------------------------------------------------- random models

def lkj_correlation(d: int, eta: float, rng: np.random.Generator) -> np.ndarray:
    """Random correlation matrix with density proportional to det(P)^(eta-1) (C-vine method)."""
    if d < 1 or eta <= 0:
        raise ValidationError("need d >= 1 and eta > 0")
    corr = np.eye(d)
    partial = np.zeros((d, d))
    b = eta + (d - 1) / 2
    for k in range(d - 1):
        b -= 0.5
        for i in range(k + 1, d):
            partial[k, i] = 2 * rng.beta(b, b) - 1
            val = partial[k, i]
            for l_ in range(k - 1, -1, -1):
                val = val * math.sqrt((1 - partial[l_, i] ** 2) * (1 - partial[l_, k] ** 2)) \
                    + partial[l_, i] * partial[l_, k]
            corr[k, i] = corr[i, k] = val
    return corr


def sample_random_model(m: int, p: int, target_sr: float | None = None, rng_seed: int = 0,
                        eta: float = 2.0, var_dof: float = 10.0) -> ModelSpec:
    """Random spec: LKJ correlations, chi^2 residual variances, Laplace beta entries.

    Signals have unit variance and zero mean.  With target_sr, beta is rescaled so that
    the true Sharpe ratio (per step) equals it.
    """
    if m < 1 or p < 1:
        raise ValidationError("m and p must be >= 1")
    rng = path_rng(rng_seed, 0, MODEL_STREAM)
    sigma_s = lkj_correlation(p, eta, rng)
    sd = np.sqrt(rng.chisquare(var_dof, size=m) / var_dof)
    sigma_eps = sd[:, None] * lkj_correlation(m, eta, rng) * sd[None, :]
    beta = rng.laplace(0.0, 1.0, size=(m, p))
    spec = ModelSpec(beta, np.zeros(p), sigma_s, sigma_eps)
    if target_sr is not None:
        spec = analytic.scale_for_true_sharpe(spec, target_sr)
    require_valid(spec)
    return spec


# ---------------------------------------------------------------- fitting generator parameters

def fit_ar1(signals: np.ndarray):
    """Least-squares VAR(1) fit on centred rows: returns (phi, shock covariance)."""
    s = np.atleast_2d(np.asarray(signals, dtype=float))
    s = s - s.mean(axis=1, keepdims=True)
    x, y = s[:, :-1], s[:, 1:]
    gram = x @ x.T
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise SingularMatrixError("signal lag matrix is singular")
    phi = np.linalg.solve(gram, x @ y.T).T
    resid = y - phi @ x
    return phi, sample_covariance(resid, demean=True)


def fit_t_dof(x: np.ndarray) -> float:
    """Degrees of freedom of a Student-t fitted to a centred, unit-scaled series."""
    from scipy import stats
    x = np.asarray(x, dtype=float)
    x = (x - x.mean()) / x.std(ddof=1)
    dof, _, _ = stats.t.fit(x, floc=0.0)
    return float(max(dof, 2.0 + 1e-6))


def default_threads():
    return os.cpu_count() or 1
