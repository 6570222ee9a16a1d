import numpy as np
import pytest

from conftest import general_spec, random_spd
from overfit_lab.errors import SingularMatrixError, ValidationError
from overfit_lab.model import (BacktestWindow, ModelSpec, WeightRule, derive_matrices,
                               require_valid, validate_model)


def test_identity_noise_is_valid():
    assert validate_model(ModelSpec.simple(np.ones((3, 2)))).ok


def test_negative_eigenvalue_rejected():
    spec = ModelSpec.simple([[1.0, 0.5]], sigma_eps=[[-1.0]])
    rep = validate_model(spec)
    assert not rep.ok
    assert any("not positive definite" in f for f in rep.failures)
    assert rep.diagnostics["sigma_eps_min_eig"] == -1.0


def test_intercept_needs_unit_mean():
    spec = ModelSpec([[0.0, 1.0]], [0.0, 0.0], np.diag([0.0, 1.0]), [[1.0]], has_intercept=True)
    rep = validate_model(spec)
    assert "intercept mean must be 1" in rep.failures
    with pytest.raises(ValidationError, match="intercept mean must be 1"):
        rep.raise_if_failed()


def test_intercept_spec_from_simple_is_valid():
    spec = ModelSpec.simple(np.ones((2, 3)), has_intercept=True)
    assert validate_model(spec).ok
    assert spec.mu_s.tolist() == [1.0, 0.0, 0.0]
    assert spec.sigma_s[0].tolist() == [0.0, 0.0, 0.0]


def test_uncentred_signals_without_intercept_rejected():
    spec = ModelSpec([[1.0]], [0.3], [[1.0]], [[1.0]])
    assert not validate_model(spec).ok


def test_custom_z_must_be_symmetric():
    spec = ModelSpec.simple(np.ones((2, 1)), weight_rule=WeightRule.CUSTOM,
                            custom_z=[[1.0, 0.2], [0.0, 1.0]])
    assert "custom Z must be symmetric" in validate_model(spec).failures


def test_shape_mismatch_reported():
    spec = ModelSpec(np.ones((2, 3)), np.zeros(2), np.eye(3), np.eye(2))
    rep = validate_model(spec)
    assert not rep.ok and not rep.checks["mu_s_shape"]


def test_singular_noise_with_precision_rule():
    spec = ModelSpec.simple(np.ones((2, 1)), sigma_eps=[[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises((SingularMatrixError, ValidationError)):
        derive_matrices(spec)
    with pytest.raises(SingularMatrixError, match="residual covariance not invertible"):
        spec.z_matrix()


def test_scalar_derived_matrices():
    dm = derive_matrices(ModelSpec.simple([[1.0]]))
    assert dm.g[0, 0] == dm.f[0, 0] == dm.gamma[0, 0] == 1.0


def test_zero_beta_derived_matrices():
    dm = derive_matrices(ModelSpec.simple(np.zeros((3, 2))))
    for a in (dm.g, dm.f, dm.gamma):
        assert not a.any()


def test_two_assets_one_signal_identity_z():
    beta = np.array([[1.0], [1.0]])
    dm = derive_matrices(ModelSpec.simple(beta, weight_rule=WeightRule.IDENTITY))
    # elementwise oracle for b^T Z b and b^T Z S Z b with Z = S = I
    g = sum(beta[i, 0] * beta[i, 0] for i in range(2))
    assert dm.g[0, 0] == g == 2.0
    assert dm.f[0, 0] == 2.0


def test_precision_rule_gives_f_equal_g(rng):
    for _ in range(20):
        spec = general_spec(rng, 4, 3)
        dm = derive_matrices(spec)
        np.testing.assert_allclose(dm.f, dm.g, rtol=1e-12, atol=1e-14 * np.abs(dm.g).max())
        np.testing.assert_allclose(dm.gamma, dm.g, rtol=1e-12, atol=1e-14 * np.abs(dm.g).max())


def test_diag_inverse_rule(rng):
    sig = random_spd(rng, 3)
    spec = ModelSpec.simple(rng.standard_normal((3, 2)), sigma_eps=sig, weight_rule="diag_inverse")
    np.testing.assert_allclose(spec.z_matrix(), np.diag(1 / np.diag(sig)))


def test_gamma_rotation_invariant(rng):
    spec = general_spec(rng, 4, 3)
    q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    rotated = ModelSpec(q @ spec.beta, spec.mu_s, spec.sigma_s, q @ spec.sigma_eps @ q.T,
                        has_intercept=spec.has_intercept)
    np.testing.assert_allclose(derive_matrices(rotated).gamma, derive_matrices(spec).gamma, rtol=1e-10)


def test_derived_matrices_symmetric_psd(rng):
    dm = derive_matrices(general_spec(rng, 5, 4))
    for a in (dm.g, dm.f, dm.gamma):
        assert np.array_equal(a, a.T)
    assert np.linalg.eigvalsh(dm.gamma).min() > -1e-12


def test_spec_is_immutable():
    spec = ModelSpec.simple(np.ones((2, 2)))
    with pytest.raises(ValueError):
        spec.beta[0, 0] = 3.0


def test_json_round_trip(rng):
    spec = general_spec(rng, 3, 2)
    back = ModelSpec.from_json(spec.to_json())
    for name in ("beta", "mu_s", "sigma_s", "sigma_eps"):
        assert np.array_equal(getattr(back, name), getattr(spec, name))
    assert back.weight_rule is spec.weight_rule


def test_from_dict_defaults_and_dimension_check():
    spec = ModelSpec.from_dict({"beta": [[0.1, 0.2]]})
    require_valid(spec)
    assert spec.sigma_eps.tolist() == [[1.0]]
    with pytest.raises(ValidationError):
        ModelSpec.from_dict({"beta": [[0.1, 0.2]], "p": 3})
    with pytest.raises(ValidationError):
        ModelSpec.from_dict({"m": 1})


@pytest.mark.parametrize("t1,t2", [(0, 5), (10, 0), (2.5, 3)])
def test_window_rejects_bad_counts(t1, t2):
    with pytest.raises(ValidationError):
        BacktestWindow(t1, t2)


def test_window_degenerate():
    with pytest.raises(ValidationError, match="degenerate window"):
        BacktestWindow(4, 10).check(3)
    BacktestWindow(5, 10).check(3)
