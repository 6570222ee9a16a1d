import math

import numpy as np
import pytest
from scipy.signal import lfilter

from conftest import general_spec, special_spec
from overfit_lab import analytic as A
from overfit_lab import simulation as S
from overfit_lab.errors import NumericalError, SingularMatrixError, ValidationError
from overfit_lab.model import BacktestWindow, ModelSpec, WeightRule

mpmath = pytest.importorskip("mpmath")


# ---------------------------------------------------------------- true Sharpe

def test_true_sharpe_scalar():
    assert A.true_sharpe(ModelSpec.simple([[1.0]])) == pytest.approx(1 / math.sqrt(3), rel=1e-15)


def test_true_sharpe_zero_beta():
    assert A.true_sharpe(ModelSpec.simple(np.zeros((2, 3)))) == 0.0


def test_true_sharpe_two_assets_against_simulated_pnl():
    spec = ModelSpec.simple([[1.0], [1.0]], weight_rule=WeightRule.IDENTITY)
    assert A.true_sharpe(spec) == pytest.approx(2 / math.sqrt(10), rel=1e-14)
    rng = np.random.default_rng(5)
    n = 1_000_000
    s = rng.standard_normal(n)
    r = np.outer([1.0, 1.0], s) + rng.standard_normal((2, n))
    pnl = (np.array([1.0, 1.0]) @ r) * s
    est, se = S.delta_se(lambda v: v[0] / math.sqrt(v[1] - v[0] ** 2), np.column_stack([pnl, pnl**2]))
    assert abs(est - 2 / math.sqrt(10)) < 3 * se


def test_true_sharpe_invariant_to_weight_scale(rng):
    for _ in range(10):
        spec = general_spec(rng, 3, 4)
        z = np.linalg.inv(spec.sigma_eps) + 0.1 * np.eye(3)
        base = ModelSpec(spec.beta, spec.mu_s, spec.sigma_s, spec.sigma_eps, "custom", z, True)
        scaled = ModelSpec(spec.beta, spec.mu_s, spec.sigma_s, spec.sigma_eps, "custom", 7.5 * z, True)
        assert A.true_sharpe(scaled) == pytest.approx(A.true_sharpe(base), rel=1e-10)


def test_scale_for_true_sharpe(rng):
    spec = special_spec(rng, 3, 2)
    out = A.scale_for_true_sharpe(spec, 0.05)
    assert A.true_sharpe(out) == pytest.approx(0.05, abs=1e-12)
    assert not A.scale_for_true_sharpe(spec, 0.0).beta.any()
    sup = A.true_sharpe_supremum(spec)
    with pytest.raises(ValidationError, match="supremum"):
        A.scale_for_true_sharpe(spec, 1.01 * sup)


# ---------------------------------------------------------------- moments

def test_special_moments_zero_beta():
    mo = A.expected_moments_special(ModelSpec.simple([[0.0]]), BacktestWindow(252, 10))
    assert mo.is_mean == pytest.approx(1 / 252, rel=1e-15)
    assert mo.oos_mean == 0.0
    assert mo.oos_var == pytest.approx(1 / 250, rel=1e-15)


def test_special_moments_unit_beta():
    mo = A.expected_moments_special(ModelSpec.simple([[1.0]]), BacktestWindow(252, 10))
    assert mo.oos_mean == 1.0
    assert mo.oos_var == pytest.approx(2 + (1 + 2 / 250) + 1 / 250, rel=1e-15)
    assert mo.oos_var == pytest.approx(3.012, rel=1e-12)


def test_special_moments_unit_beta_simulated():
    spec = ModelSpec.simple([[1.0]])
    win = BacktestWindow(252, 252)
    paths, _ = S.simulate_paths(spec, win, S.SimulationConfig(n_paths=20_000, seed=4))
    mo = A.expected_moments_special(spec, win)
    for q in ("oos_mean", "oos_var", "is_mean"):
        x = paths[q]
        assert abs(x.mean() - getattr(mo, q)) < 3.5 * x.std(ddof=1) / math.sqrt(x.size)


def test_special_case_precondition():
    spec = ModelSpec.simple([[1.0, 0.0]], sigma_s=[[1.0, 0.3], [0.3, 1.0]])
    with pytest.raises(ValidationError, match="special case requires"):
        A.expected_moments_special(spec, BacktestWindow(100, 10))


def test_in_sample_mean_inflation_special(rng):
    for _ in range(20):
        m, p = rng.integers(1, 8, size=2)
        spec = special_spec(rng, int(m), int(p))
        t1 = int(rng.integers(p + 2, 3000))
        mo = A.expected_moments_special(spec, BacktestWindow(t1, 1))
        assert mo.is_mean - mo.oos_mean == pytest.approx(p * m / t1, rel=1e-9)


def test_constants_signs():
    for m, p, t1 in [(1, 1, 3), (5, 10, 12), (20, 3, 2520)]:
        c = A.special_constants(m, p, t1)
        assert c.c1 > 1 and c.c1_tilde > 0


def test_degenerate_window():
    with pytest.raises(ValidationError, match="degenerate window"):
        A.expected_moments_general(ModelSpec.simple(np.ones((1, 3))), BacktestWindow(4, 1))


def test_singular_second_moment():
    spec = ModelSpec([[1.0, 1.0]], [0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]], [[1.0]])
    with pytest.raises(SingularMatrixError):
        A.expected_moments_general(spec, BacktestWindow(100, 1))


@pytest.mark.parametrize("t1", [50, 252, 2520])
def test_general_univariate_coefficients(t1):
    # at m = p = 1 the general IS variance is 2b^4 + (c1+c1~) b^2 + (c2+c2~); read the
    # coefficients off three evaluations
    vals = [A.expected_moments_general(ModelSpec.simple([[math.sqrt(u)]]), BacktestWindow(t1, 1)).is_var
            for u in (0.0, 1.0, 2.0)]
    c0 = vals[0]
    c1 = (vals[1] - c0) - 2.0
    assert c1 == pytest.approx(1 + 15 / (t1 - 2) - 2 / t1, rel=1e-12)
    assert c0 == pytest.approx(4 / t1 - 3 / (t1 + 2) - 1 / t1**2, rel=1e-12)
    assert vals[2] == pytest.approx(2 * 4 + c1 * 2 + c0, rel=1e-12)


def test_oos_mean_independent_of_t1(rng):
    spec = general_spec(rng, 3, 4)
    means = {A.expected_moments_general(spec, BacktestWindow(t, 5)).oos_mean for t in (20, 200, 2000)}
    assert max(means) - min(means) < 1e-15


def test_intercept_zero_beta_in_sample_mean():
    spec = ModelSpec.simple(np.zeros((1, 2)), has_intercept=True)
    win = BacktestWindow(120, 60)
    mo = A.expected_moments_general(spec, win)
    assert mo.oos_mean == 0.0
    assert mo.is_mean == pytest.approx(2 / 120, rel=1e-14)
    paths, _ = S.simulate_paths(spec, win, S.SimulationConfig(n_paths=100_000, seed=8))
    x = paths["is_mean"]
    assert abs(x.mean() - mo.is_mean) < 3 * x.std(ddof=1) / math.sqrt(x.size)


def test_general_moments_against_simulation_with_intercept():
    rng = np.random.default_rng(77)
    spec = general_spec(rng, 3, 3, scale=0.2)
    win = BacktestWindow(200, 100)
    mo = A.expected_moments_general(spec, win)
    paths, _ = S.simulate_paths(spec, win, S.SimulationConfig(n_paths=20_000, seed=77))
    for q in ("is_mean", "oos_mean", "oos_var"):
        x = paths[q]
        assert abs(x.mean() - getattr(mo, q)) < 3 * x.std(ddof=1) / math.sqrt(x.size), q


# ---------------------------------------------------------------- Sharpe ratios

def _moments(is_mean, is_var, oos_mean, oos_var):
    return A.MomentSummary(is_mean, is_var, oos_mean, oos_var)


def test_zero_beta_report():
    _, rep = A.sharpe_report(ModelSpec.simple(np.zeros((2, 2))), BacktestWindow(100, 10))
    assert rep.sr_eoos == 0.0 and rep.replication_ratio == 0.0
    assert rep.informationless


def test_identical_moments_give_unit_ratio():
    rep = A.expected_sharpes(_moments(0.1, 0.3, 0.1, 0.3))
    assert rep.replication_ratio == 1.0


def test_zero_in_sample_sharpe_flags_ratio():
    rep = A.expected_sharpes(_moments(0.0, 0.3, 0.1, 0.3))
    assert not rep.replication_defined and math.isnan(rep.replication_ratio)


def test_nonpositive_variance_rejected():
    with pytest.raises(NumericalError):
        A.expected_sharpes(_moments(0.1, 0.0, 0.1, 0.3))


def test_moments_rounded_to_two_decimals_reach_reported_sharpes():
    # reference moments come rounded to two decimals; the reference Sharpe ratios must be
    # reachable from some inputs inside the rounding box
    ann = math.sqrt(252)
    lo, hi = {"eis": math.inf, "eoos": math.inf, "r": math.inf}, {"eis": -math.inf, "eoos": -math.inf, "r": -math.inf}
    grid = np.linspace(-0.005, 0.005, 5)
    for a in grid:
        for b in grid:
            for c in grid:
                for d in grid:
                    rep = A.expected_sharpes(_moments(0.28 + a, 0.30 + b, 0.11 + c, 0.29 + d), ann)
                    for k, v in (("eis", rep.sr_eis), ("eoos", rep.sr_eoos), ("r", rep.replication_ratio)):
                        lo[k], hi[k] = min(lo[k], v), max(hi[k], v)
    assert lo["eis"] <= 8.22 <= hi["eis"]
    assert lo["eoos"] <= 3.13 <= hi["eoos"]
    assert lo["r"] <= 0.38 <= hi["r"]


def test_annualization_factor():
    assert A.annualization_factor(252) == pytest.approx(math.sqrt(252))
    with pytest.raises(ValidationError):
        A.annualization_factor(0)


def test_scale_for_expected_sharpe(rng):
    spec = general_spec(rng, 4, 5)
    win = BacktestWindow(500, 100)
    for which in ("eis", "eoos"):
        out = A.scale_for_expected_sharpe(spec, win, 0.2, which)
        _, rep = A.sharpe_report(out, win)
        assert getattr(rep, f"sr_{which}") == pytest.approx(0.2, rel=1e-9)
    with pytest.raises(ValidationError):
        A.scale_for_expected_sharpe(spec, win, 5.0, "eoos")


# ---------------------------------------------------------------- closed forms

def test_univariate_replication_limits():
    assert A.univariate_replication(0.0, 252) == 0.0
    assert A.univariate_replication(1e6, 252) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValidationError):
        A.univariate_replication(0.1, 2)


def test_univariate_replication_matches_general_pipeline():
    _, rep = A.sharpe_report(ModelSpec.simple([[0.1]]), BacktestWindow(252, 1))
    assert A.univariate_replication(0.1, 252) == pytest.approx(rep.replication_ratio, rel=1e-12)


def test_uniform_beta_replication():
    assert A.uniform_beta_replication(0.0, 3, 4, 100) == 0.0
    assert A.uniform_beta_replication(0.3, 1, 1, 252) == pytest.approx(A.univariate_replication(0.3, 252), rel=1e-12)
    for k, p, m, t1 in [(0.05, 3, 4, 300), (0.2, 7, 2, 1000)]:
        _, rep = A.sharpe_report(ModelSpec.simple(np.full((m, p), k)), BacktestWindow(t1, 1))
        assert A.uniform_beta_replication(k, p, m, t1) == pytest.approx(rep.replication_ratio, rel=1e-12)
        assert A.uniform_beta_sr_eis(k, p, m, t1) == pytest.approx(rep.sr_eis, rel=1e-12)
    with pytest.raises(ValidationError):
        A.uniform_beta_replication(0.1, 5, 1, 6)


def test_uniform_beta_true_sharpe_inverse():
    k = A.uniform_beta_k_for_true_sharpe(0.1, 3, 4)
    assert A.true_sharpe(ModelSpec.simple(np.full((4, 3), k))) == pytest.approx(0.1, rel=1e-12)


def test_replication_falls_with_assets_at_fixed_eis():
    rows = A.replication_vs_p(0.5, range(1, 11), range(1, 101), 2520)
    assert len(rows) > 800
    for p in range(1, 11):
        curve = [r["replication_ratio"] for r in rows if r["p"] == p]
        assert np.all(np.diff(curve) < 0)
        for r in rows:
            if r["p"] == p:
                assert A.uniform_beta_sr_eis(r["k"], p, r["m"], 2520) == pytest.approx(0.5, rel=1e-9)


def test_replication_rises_with_history(rng):
    spec = special_spec(rng, 3, 4, scale=0.05)
    rows = A.replication_vs_t1(spec, [252 * k for k in range(1, 31)])
    assert np.all(np.diff([r["replication_ratio"] for r in rows]) > 0)


def test_heatmap_cardinality():
    rows = A.heatmap_sr_t1([0.01, 0.05, 0.1], [252, 504])
    assert len(rows) == 6
    assert {(r["sr_true"], r["t1"]) for r in rows} == {(s, t) for s in (0.01, 0.05, 0.1) for t in (252, 504)}


def test_ar1_true_sharpe():
    assert A.ar1_true_sharpe(1.0, 0.0) == pytest.approx(1 / math.sqrt(3), rel=1e-15)
    assert A.ar1_true_sharpe(1.0, 1 - 1e-9) == pytest.approx(1 / math.sqrt(2), abs=1e-6)
    with pytest.raises(ValidationError, match="non-stationary signal"):
        A.ar1_true_sharpe(1.0, 1.0)
    b = A.ar1_beta_for_true_sharpe(0.07, 0.6)
    assert A.ar1_true_sharpe(b, 0.6) == pytest.approx(0.07, rel=1e-12)


def test_ar1_true_sharpe_long_path():
    beta, phi, n = 0.05, 0.9, 10_000_000
    rng = np.random.default_rng(17)
    u = rng.standard_normal(n)
    u[0] /= math.sqrt(1 - phi * phi)
    s = lfilter([1.0], [1.0, -phi], u)
    pnl = beta * s * (beta * s + rng.standard_normal(n))
    est = pnl.mean() / pnl.std()
    # batch means for the SE (PnL inherits the signal's autocorrelation)
    batches = pnl.reshape(1000, -1)
    se = (batches.mean(axis=1) / pnl.std()).std(ddof=1) / math.sqrt(1000)
    assert abs(est - A.ar1_true_sharpe(beta, phi)) < 3 * se


# ---------------------------------------------------------------- Kan

def test_kan_theta_zero():
    assert A.kan_expected_oos_sr(0.0, 3, 100) == 0.0
    exact = float(mpmath.gamma(1.5) * mpmath.gamma(48.5) / (mpmath.gamma(1) * mpmath.gamma(49)))
    assert A.kan_expected_is_sr(0.0, 2, 100) == pytest.approx(exact, rel=1e-12)


def test_kan_gamma_argument_guard():
    with pytest.raises(ValidationError, match="Gamma argument non-positive"):
        A.kan_expected_is_sr(0.1, 10, 12)


def test_kan_oos_never_beats_truth():
    for theta in np.linspace(0.01, 3.0, 25):
        for m in range(2, 51, 4):
            assert A.kan_expected_oos_sr(theta, m, 2520) <= theta


def test_kan_in_sample_against_mpmath():
    theta, m, t = 0.0945, 5, 2520
    pref = mpmath.gamma((m + 1) / 2) * mpmath.gamma((t - m - 1) / 2) / (mpmath.gamma(m / 2) * mpmath.gamma((t - m) / 2))
    expected = float(pref * mpmath.hyp1f1(-0.5, m / 2, -t * theta**2 / 2))
    assert A.kan_expected_is_sr(theta, m, t) == pytest.approx(expected, rel=1e-10)


def test_kan_in_sample_above_truth():
    for m in (2, 10, 50):
        assert A.kan_expected_is_sr(0.1, m, 2520) > 0.1


def test_kan_comparison_table():
    rows = A.kan_comparison_curve(0.0945, 2520, [2, 5, 10], p_ours=[1, 10])
    kan = {r["m"]: r["replication_ratio"] for r in rows if r["model"] == "kan"}
    lin1 = {r["m"]: r["replication_ratio"] for r in rows if r["model"] == "linear" and r["p"] == 1}
    lin10 = {r["m"]: r["replication_ratio"] for r in rows if r["model"] == "linear" and r["p"] == 10}
    for m in (2, 5, 10):
        assert abs(lin1[m] - kan[m]) < 0.05
        assert lin10[m] < lin1[m]
    assert A.kan_comparison_curve(0.1, 252, []) == []
