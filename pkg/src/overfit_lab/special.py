"""Log-Gamma and the confluent hypergeometric function 1F1(a; b; z) for real arguments."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConvergenceError, ValidationError

_RESCALE = 1e200
_LOG_RESCALE = math.log(_RESCALE)


@dataclass(frozen=True)
class SeriesControl:
    rel_tol: float = 1e-12
    max_terms: int = 10000

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValidationError("rel_tol must be positive")
        if self.max_terms < 1:
            raise ValidationError("max_terms must be >= 1")


DEFAULT_CONTROL = SeriesControl()


@dataclass(frozen=True)
class HypergeometricResult:
    value: float        # may be +-inf when only the log is representable
    log_abs: float
    sign: int
    terms: int
    kummer: bool


def log_gamma(x: float) -> float:
    if not x > 0:
        raise ValidationError(f"log_gamma needs x > 0, got {x}")
    return math.lgamma(x)


def _series(a, b, z, ctl):
    """Sum sum_k (a)_k/(b)_k z^k/k! with running rescaling. Returns (sign, log|sum|, terms)."""
    term = 1.0
    total = 1.0
    log_scale = 0.0
    small = 0
    k = 0
    while True:
        if k >= ctl.max_terms:
            partial = math.copysign(math.exp(min(log_scale + math.log(abs(total)), 700.0)), total) if total else 0.0
            raise ConvergenceError(
                f"1F1({a}; {b}; {z}) did not converge in {ctl.max_terms} terms",
                partial=partial, terms=k)
        term *= (a + k) / (b + k) * z / (k + 1)
        k += 1
        total += term
        if term == 0.0:
            break
        # a tiny term only ends the sum once the terms have started shrinking
        shrinking = abs((a + k) * z) < abs((b + k) * (k + 1))
        if shrinking and abs(term) < ctl.rel_tol * abs(total):
            small += 1
            if small >= 3:
                break
        else:
            small = 0
        if abs(total) > _RESCALE or abs(term) > _RESCALE:
            total /= _RESCALE
            term /= _RESCALE
            log_scale += _LOG_RESCALE
    if total == 0.0:
        return 0, -math.inf, k
    return (1 if total > 0 else -1), log_scale + math.log(abs(total)), k


def _check_b(b):
    if b <= 0 and float(b).is_integer():
        raise ValidationError(f"1F1 undefined for non-positive integer b={b}")


def hyp1f1_full(a: float, b: float, z: float, ctl: SeriesControl = DEFAULT_CONTROL,
                method: str = "auto") -> HypergeometricResult:
    """1F1 with bookkeeping.

    method="auto" applies Kummer's transformation 1F1(a;b;z) = e^z 1F1(b-a;b;-z)
    for z < 0 so the summed series has (eventually) positive terms.  "direct"
    and "kummer" force one route; they exist for cross-checking.
    """
    _check_b(b)
    if z == 0:
        return HypergeometricResult(1.0, 0.0, 1, 0, False)
    use_kummer = (method == "kummer") or (method == "auto" and z < 0)
    if method not in ("auto", "direct", "kummer"):
        raise ValidationError(f"unknown method {method!r}")
    if use_kummer:
        sign, log_abs, terms = _series(b - a, b, -z, ctl)
        log_abs += z
    else:
        sign, log_abs, terms = _series(a, b, z, ctl)
    if sign == 0:
        value = 0.0
    elif log_abs > 709.0:
        value = sign * math.inf
    else:
        value = sign * math.exp(log_abs)
    return HypergeometricResult(value, log_abs, sign, terms, use_kummer)


def hyp1f1(a: float, b: float, z: float, ctl: SeriesControl = DEFAULT_CONTROL) -> float:
    return hyp1f1_full(a, b, z, ctl).value


def log_hyp1f1(a: float, b: float, z: float, ctl: SeriesControl = DEFAULT_CONTROL) -> float:
    """log 1F1 for arguments where the function is positive (no overflow for large z)."""
    res = hyp1f1_full(a, b, z, ctl)
    if res.sign <= 0:
        raise ValidationError(f"1F1({a}; {b}; {z}) is not positive; log undefined")
    return res.log_abs
