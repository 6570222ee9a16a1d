"""Model specification, validation and the derived matrices G, F, Gamma.

The generative model is r_{t+1} = beta s_t + eps_{t+1} with portfolio
w_t = Z beta s_t.  Matrices are stored as float64 numpy arrays; a spec is
never mutated after construction.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import SingularMatrixError, ValidationError

PD_RTOL = 1e-10
SYM_RTOL = 1e-10


class WeightRule(str, enum.Enum):
    PRECISION = "precision"
    DIAG_INVERSE = "diag_inverse"
    IDENTITY = "identity"
    CUSTOM = "custom"


def _as_matrix(x, name):
    a = np.array(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise ValidationError(f"{name} must be a matrix, got shape {a.shape}")
    return a


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def symmetrize(a):
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class ModelSpec:
    beta: np.ndarray
    mu_s: np.ndarray
    sigma_s: np.ndarray
    sigma_eps: np.ndarray
    weight_rule: WeightRule = WeightRule.PRECISION
    custom_z: np.ndarray | None = None
    has_intercept: bool = False

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        if beta.ndim == 1:
            beta = beta.reshape(1, -1)
        object.__setattr__(self, "beta", _frozen(_as_matrix(beta, "beta")))
        object.__setattr__(self, "mu_s", _frozen(np.atleast_1d(np.array(self.mu_s, dtype=float))))
        object.__setattr__(self, "sigma_s", _frozen(_as_matrix(self.sigma_s, "sigma_s")))
        object.__setattr__(self, "sigma_eps", _frozen(_as_matrix(self.sigma_eps, "sigma_eps")))
        object.__setattr__(self, "weight_rule", WeightRule(self.weight_rule))
        if self.custom_z is not None:
            object.__setattr__(self, "custom_z", _frozen(_as_matrix(self.custom_z, "custom_z")))
        object.__setattr__(self, "has_intercept", bool(self.has_intercept))

    @property
    def m(self) -> int:
        return self.beta.shape[0]

    @property
    def p(self) -> int:
        return self.beta.shape[1]

    @classmethod
    def simple(cls, beta, sigma_eps=None, sigma_s=None, has_intercept=False,
               weight_rule=WeightRule.PRECISION, custom_z=None):
        """Build a spec with the default centred / intercept conventions filled in."""
        beta = np.array(beta, dtype=float)
        if beta.ndim < 2:
            beta = beta.reshape(1, -1) if beta.ndim == 1 else beta.reshape(1, 1)
        m, p = beta.shape
        if sigma_s is None:
            sigma_s = np.eye(p)
            if has_intercept:
                sigma_s[0, 0] = 0.0
        mu_s = np.zeros(p)
        if has_intercept:
            mu_s[0] = 1.0
        if sigma_eps is None:
            sigma_eps = np.eye(m)
        return cls(beta, mu_s, sigma_s, sigma_eps, weight_rule, custom_z, has_intercept)

    def with_beta(self, beta) -> "ModelSpec":
        return ModelSpec(beta, self.mu_s, self.sigma_s, self.sigma_eps,
                         self.weight_rule, self.custom_z, self.has_intercept)

    def z_matrix(self) -> np.ndarray:
        rule = self.weight_rule
        if rule is WeightRule.PRECISION:
            return precision(self.sigma_eps)
        if rule is WeightRule.DIAG_INVERSE:
            d = np.diag(self.sigma_eps)
            if np.any(d <= 0):
                raise SingularMatrixError("residual variances must be positive for diag_inverse")
            return np.diag(1.0 / d)
        if rule is WeightRule.IDENTITY:
            return np.eye(self.m)
        if self.custom_z is None:
            raise ValidationError("custom weight rule needs custom_z")
        return np.array(self.custom_z)

    def to_dict(self) -> dict:
        out = {
            "m": self.m,
            "p": self.p,
            "beta": self.beta.tolist(),
            "mu_s": self.mu_s.tolist(),
            "sigma_s": self.sigma_s.tolist(),
            "sigma_eps": self.sigma_eps.tolist(),
            "weight_rule": self.weight_rule.value,
            "has_intercept": self.has_intercept,
        }
        if self.custom_z is not None:
            out["custom_z"] = self.custom_z.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        """Parse the JSON form. mu_s, sigma_s, sigma_eps may be omitted (defaults: centred, I)."""
        if "beta" not in d:
            raise ValidationError("model spec needs 'beta'")
        has_intercept = bool(d.get("has_intercept", False))
        beta = np.array(d["beta"], dtype=float)
        if beta.ndim < 2:
            beta = beta.reshape(1, -1)
        m, p = beta.shape
        if "m" in d and int(d["m"]) != m:
            raise ValidationError(f"'m'={d['m']} but beta has {m} rows")
        if "p" in d and int(d["p"]) != p:
            raise ValidationError(f"'p'={d['p']} but beta has {p} columns")
        base = cls.simple(beta, has_intercept=has_intercept)
        try:
            return cls(
                beta,
                d.get("mu_s", base.mu_s),
                d.get("sigma_s", base.sigma_s),
                d.get("sigma_eps", base.sigma_eps),
                WeightRule(d.get("weight_rule", "precision")),
                d.get("custom_z"),
                has_intercept,
            )
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class BacktestWindow:
    t1: int
    t2: int

    def __post_init__(self):
        if int(self.t1) != self.t1 or self.t1 < 1:
            raise ValidationError(f"t1 must be a positive integer, got {self.t1}")
        if int(self.t2) != self.t2 or self.t2 < 1:
            raise ValidationError(f"t2 must be >= 1, got {self.t2}")
        object.__setattr__(self, "t1", int(self.t1))
        object.__setattr__(self, "t2", int(self.t2))

    def check(self, p: int) -> None:
        if self.t1 <= p + 1:
            raise ValidationError(f"degenerate window: t1={self.t1} must exceed p+1={p + 1}")

    def to_dict(self):
        return {"t1": self.t1, "t2": self.t2}


@dataclass(frozen=True)
class DerivedMatrices:
    g: np.ndarray
    f: np.ndarray
    gamma: np.ndarray


@dataclass
class ValidationReport:
    ok: bool
    failures: list[str] = field(default_factory=list)
    checks: dict[str, bool] = field(default_factory=dict)
    diagnostics: dict[str, float] = field(default_factory=dict)

    def raise_if_failed(self):
        if not self.ok:
            raise ValidationError("invalid model: " + "; ".join(self.failures))


def _sym_ok(a):
    scale = max(np.max(np.abs(a)), 1.0)
    return np.max(np.abs(a - a.T)) <= SYM_RTOL * scale


def validate_model(spec: ModelSpec) -> ValidationReport:
    rep = ValidationReport(ok=True)

    def check(name, passed, message):
        rep.checks[name] = bool(passed)
        if not passed:
            rep.ok = False
            rep.failures.append(message)
        return passed

    m, p = spec.m, spec.p
    shapes = (
        check("mu_s_shape", spec.mu_s.shape == (p,), f"mu_s must have length p={p}")
        & check("sigma_s_shape", spec.sigma_s.shape == (p, p), f"sigma_s must be {p}x{p}")
        & check("sigma_eps_shape", spec.sigma_eps.shape == (m, m), f"sigma_eps must be {m}x{m}")
    )
    arrays = [spec.beta, spec.mu_s, spec.sigma_s, spec.sigma_eps]
    check("finite", all(np.all(np.isfinite(a)) for a in arrays), "non-finite entries")
    if not shapes or not rep.checks["finite"]:
        return rep

    if check("sigma_s_symmetric", _sym_ok(spec.sigma_s), "sigma_s not symmetric"):
        ev = np.linalg.eigvalsh(spec.sigma_s)
        rep.diagnostics["sigma_s_min_eig"] = float(ev[0])
        rep.diagnostics["sigma_s_max_eig"] = float(ev[-1])
        check("sigma_s_psd", ev[0] >= -PD_RTOL * max(abs(ev[-1]), 1e-300),
              "sigma_s not positive semidefinite")

    if check("sigma_eps_symmetric", _sym_ok(spec.sigma_eps), "sigma_eps not symmetric"):
        ev = np.linalg.eigvalsh(spec.sigma_eps)
        rep.diagnostics["sigma_eps_min_eig"] = float(ev[0])
        rep.diagnostics["sigma_eps_max_eig"] = float(ev[-1])
        check("sigma_eps_pd", ev[-1] > 0 and ev[0] > PD_RTOL * ev[-1],
              "sigma_eps not positive definite")

    if spec.weight_rule is WeightRule.CUSTOM:
        z = spec.custom_z
        if check("custom_z_present", z is not None, "custom weight rule needs custom_z"):
            if check("custom_z_shape", z.shape == (m, m), f"custom_z must be {m}x{m}"):
                check("custom_z_symmetric", _sym_ok(z), "custom Z must be symmetric")
    elif spec.custom_z is not None:
        check("custom_z_unused", False, "custom_z given but weight_rule is not custom")

    if spec.has_intercept:
        check("intercept_mean", spec.mu_s[0] == 1.0, "intercept mean must be 1")
        check("intercept_others_centred", np.all(spec.mu_s[1:] == 0.0),
              "non-intercept signals must be centred")
        check("intercept_variance", np.all(spec.sigma_s[0, :] == 0.0) and np.all(spec.sigma_s[:, 0] == 0.0),
              "intercept row/column of sigma_s must be zero")
    else:
        check("centred", np.all(spec.mu_s == 0.0), "signals must be centred when there is no intercept")
    return rep


def require_valid(spec: ModelSpec) -> None:
    validate_model(spec).raise_if_failed()


def precision(sigma_eps) -> np.ndarray:
    ev = np.linalg.eigvalsh(sigma_eps)
    if ev[-1] <= 0 or ev[0] <= PD_RTOL * ev[-1]:
        raise SingularMatrixError("residual covariance not invertible")
    return symmetrize(np.linalg.inv(sigma_eps))


def derive_matrices(spec: ModelSpec) -> DerivedMatrices:
    require_valid(spec)
    beta = spec.beta
    z = spec.z_matrix()
    g = symmetrize(beta.T @ z @ beta)
    f = symmetrize(beta.T @ z @ spec.sigma_eps @ z @ beta)
    gamma = symmetrize(beta.T @ precision(spec.sigma_eps) @ beta)
    return DerivedMatrices(g=g, f=f, gamma=gamma)
