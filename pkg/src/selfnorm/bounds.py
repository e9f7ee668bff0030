"""Closed-form tail bounds for self-normalized processes and the statistics
they control.

Every ``bound_*`` function returns a :class:`BoundValue`; values at or above
one are valid but uninformative and carry ``saturated=True``.  The events
bounded by each evaluator are described by :class:`EventSpec` and simulated
in :mod:`selfnorm.montecarlo`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import integrate, special

from .exceptions import NumericalError, ParameterError

SQRT_E = math.sqrt(math.e)
EE = math.exp(math.e)


@dataclass(frozen=True)
class BoundValue:
    """A probability bound; ``saturated`` flags a vacuous value (>= 1)."""

    value: float
    saturated: bool

    @classmethod
    def of(cls, value: float) -> "BoundValue":
        value = float(value)
        if not value >= 0:
            raise NumericalError(f"bound evaluated to {value!r}")
        return cls(value, value >= 1.0)

    def to_dict(self):
        return {"value": self.value, "saturated": self.saturated}


EVENT_KINDS = ("Thm21", "Thm22", "Thm23", "Thm24", "Thm25", "Thm26", "Thm27", "Crossing")


@dataclass(frozen=True)
class EventSpec:
    """A bounded event: its kind, free parameters and horizon rule.

    ``horizon_rule`` is ``("FixedTime", n)`` or ``("AnyTimeUpTo", N)``.
    """

    kind: str
    params: Mapping = field(default_factory=dict)
    horizon_rule: tuple = ("FixedTime", 1)

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ParameterError(f"unknown event kind {self.kind!r}; expected one of {EVENT_KINDS}")
        rule = tuple(self.horizon_rule)
        if len(rule) != 2 or rule[0] not in ("FixedTime", "AnyTimeUpTo") or int(rule[1]) < 1:
            raise ParameterError(f"horizon_rule must be ('FixedTime'|'AnyTimeUpTo', n >= 1), got {self.horizon_rule!r}")
        object.__setattr__(self, "horizon_rule", (rule[0], int(rule[1])))
        object.__setattr__(self, "params", dict(sorted(dict(self.params).items())))

    @property
    def any_time(self) -> bool:
        return self.horizon_rule[0] == "AnyTimeUpTo"

    @property
    def n(self) -> int:
        return self.horizon_rule[1]

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params), "horizon_rule": list(self.horizon_rule)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "EventSpec":
        return cls(data["kind"], data.get("params", {}), tuple(data.get("horizon_rule", ("FixedTime", 1))))


def _positive(**kw):
    for name, value in kw.items():
        if not (isinstance(value, (int, float, np.floating, np.integer)) and value > 0 and math.isfinite(value)):
            raise ParameterError(f"{name} must be a positive finite number, got {value!r}")


def _nonnegative(**kw):
    for name, value in kw.items():
        if not (value >= 0 and math.isfinite(value)):
            raise ParameterError(f"{name} must be a nonnegative finite number, got {value!r}")


def bound_thm21(x: float, y: float) -> BoundValue:
    """``P(A/B^2 > x, 1/B^2 <= y) <= exp(-x^2/(2y))``."""
    _positive(x=x, y=y)
    return BoundValue.of(math.exp(-x * x / (2.0 * y)))


def bound_ar1(x: float, z: float) -> BoundValue:
    """Two-sided AR(1) estimator bound ``2 exp(-x^2 z/2)`` on
    ``P(|alpha_hat - alpha| > x, sum Y^2 >= z)``."""
    _positive(x=x, z=z)
    return BoundValue.of(2.0 * math.exp(-x * x * z / 2.0))


def bound_thm22(x: float, s: float) -> BoundValue:
    """``P(|A|/B > x, b <= B <= bs) <= 4 sqrt(e) x (1 + log s) exp(-x^2/2)``.

    The bound does not depend on ``b``; it enters only through the event.
    """
    if not (x >= 1 and math.isfinite(x)):
        raise ParameterError(f"x must be >= 1, got {x!r}")
    if not (s >= 1 and math.isfinite(s)):
        raise ParameterError(f"s must be >= 1, got {s!r}")
    return BoundValue.of(4.0 * x * (1.0 + math.log(s)) * math.exp(0.5 - 0.5 * x * x))


def bound_thm23(alpha: float, beta: float, lam: float) -> BoundValue:
    """``P(M >= (alpha + beta <M>) lambda) <= exp(-2 alpha beta lambda^2)``."""
    _positive(alpha=alpha, beta=beta, lam=lam)
    return BoundValue.of(math.exp(-2.0 * alpha * beta * lam * lam))


def bound_thm24_25(x: float, alpha: float, beta: float, y: float) -> BoundValue:
    """``exp(-x^2 (beta^2/(2y) + alpha beta))`` bounding the any-time event
    ``M >= (alpha + beta B^2) x, 1/B^2 <= y``."""
    _nonnegative(x=x, alpha=alpha)
    _positive(beta=beta, y=y)
    return BoundValue.of(math.exp(-x * x * (beta * beta / (2.0 * y) + alpha * beta)))


def bound_thm26(x: float, y: float, c: float) -> tuple[BoundValue, BoundValue]:
    """Bernstein-type bounds for ``M_n/V_n^2 >= x, 1/V_n^2 <= y`` (any time).

    Returns ``(primary, simplified)`` with
    ``primary = exp(-(1/y) x^2/(1 + cx + sqrt(1 + 2cx)))`` and
    ``simplified = exp(-x^2/(2y(1 + cx)))``; ``primary <= simplified``.
    """
    _positive(x=x, y=y, c=c)
    cx = c * x
    primary = math.exp(-(x * x) / (y * (1.0 + cx + math.sqrt(1.0 + 2.0 * cx))))
    simplified = math.exp(-(x * x) / (2.0 * y * (1.0 + cx)))
    return BoundValue.of(primary), BoundValue.of(simplified)


def bound_thm27(x: float) -> BoundValue:
    """``P(|A|/sqrt(B^2 + (EB)^2) > x) <= sqrt(2) exp(-x^2/4)``."""
    _positive(x=x)
    return BoundValue.of(math.sqrt(2.0) * math.exp(-x * x / 4.0))


def statistic_thm27(a, b, eb):
    """``|A| / sqrt(B^2 + (EB)^2)``; vectorized over ``a`` and ``b``."""
    if not eb > 0:
        raise ParameterError(f"EB must be positive, got {eb!r}")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(b < 0):
        raise ParameterError("B must be nonnegative")
    out = np.abs(a) / np.sqrt(b * b + eb * eb)
    return float(out) if out.ndim == 0 else out


def loglog_factor(b):
    """``sqrt(1 v log+ log(B v 1/B))``."""
    b = np.asarray(b, dtype=float)
    m = np.maximum(b, 1.0 / b)
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = np.where(m > math.e, np.log(np.log(np.where(m > math.e, m, math.e))), 0.0)
    return np.sqrt(np.maximum(1.0, ll))


def statistic_thm28(a, b):
    """``(A+/B, A+/(B sqrt(1 v log+ log(B v 1/B))))``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0):
        raise ParameterError("B must be positive")
    r29 = np.maximum(a, 0.0) / b
    r210 = r29 / loglog_factor(b)
    if r29.ndim == 0:
        return float(r29), float(r210)
    return r29, r210


class CanonicalL:
    """``L(x) = 2 log(x e^e) (log log(x e^e))^2 1(x >= 1)``."""

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            lx = np.log(np.maximum(x, 1.0)) + math.e
            out = np.where(x >= 1.0, 2.0 * lx * np.log(lx) ** 2, 0.0)
        return float(out) if out.ndim == 0 else out

    @staticmethod
    def log_at_loglog(w):
        """``log L`` at ``x = exp(e^w - e)``, i.e. ``w = log log(x e^e)``."""
        w = np.asarray(w, dtype=float)
        return math.log(2.0) + w + 2.0 * np.log(w)

    @staticmethod
    def loglog_from_x(x):
        return np.log(np.log(np.asarray(x, dtype=float)) + math.e)


CANONICAL_L = CanonicalL()


def density_f(lam, L: Callable = CANONICAL_L):
    """``f(lambda) = 1/(lambda L(max(lambda, 1/lambda)))``."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise ParameterError("lambda must be positive")
    out = 1.0 / (lam * np.asarray(L(np.maximum(lam, 1.0 / lam)), dtype=float))
    return float(out) if out.ndim == 0 else out


def l_integral(L: Callable = CANONICAL_L, rtol: float = 1e-12) -> tuple[float, float]:
    """``int_1^inf dx/(x L(x))`` and its error estimate.

    With ``u = log x`` the integral becomes ``int_0^inf du / L(e^u)``; for the
    canonical ``L`` the substitution ``w = log(u + e)`` is applied as well so
    the integrand is a smooth algebraic tail.
    """
    if isinstance(L, CanonicalL):
        val, err = integrate.quad(lambda w: math.exp(w - float(L.log_at_loglog(w))), 1.0, math.inf, epsabs=0, epsrel=rtol, limit=200)
    else:
        val, err = integrate.quad(lambda u: 1.0 / float(L(math.exp(u))) if u < 700 else 0.0, 0.0, math.inf, epsabs=0, epsrel=rtol, limit=500)
    return val, err


def density_f_mass(L: Callable = CANONICAL_L, rtol: float = 1e-12) -> float:
    """Total mass of :func:`density_f`, integrating each half-line separately.

    With ``lambda = e^u`` the mass is ``int du / L(e^|u|)``; each half is then
    mapped by ``w = log(|u| + e)`` so the quadrature sees the integrand
    ``e^w / L(exp(e^w - e))`` on ``[1, inf)``.
    """

    def half(sign):
        def integrand(w):
            u = math.exp(w) - math.e
            lam = math.exp(sign * u) if u < 700 else (math.inf if sign > 0 else 0.0)
            if isinstance(L, CanonicalL):
                return math.exp(w - float(L.log_at_loglog(w)))
            return math.exp(w) * lam * float(density_f(lam, L)) if 0 < lam < math.inf else 0.0

        return integrate.quad(integrand, 1.0, math.inf, epsabs=0, epsrel=rtol, limit=200)[0]

    return half(-1.0) + half(1.0)


@dataclass(frozen=True)
class LConditionReport:
    """Outcome of checking the growth and normalization conditions on ``L``."""

    scaling_ok: bool
    squaring_ok: bool
    integral: float
    integral_error: float
    integral_ok: bool
    worst_scaling_ratio: float
    worst_squaring_ratio: float

    @property
    def ok(self) -> bool:
        return self.scaling_ok and self.squaring_ok and self.integral_ok


def check_L_conditions(L: Callable = CANONICAL_L, grid=None, c_grid=None, tol: float = 1e-8) -> LConditionReport:
    """Check ``L(cy) <= 3c L(y)`` (c >= 1), ``L(y^2) <= 3 L(y)`` (y >= 1) on a
    log-spaced grid and ``int_1^inf dx/(xL(x)) = 1/2`` by quadrature.

    The scaling condition is checked for ``y >= 1``, where ``L`` is positive.
    """
    y = np.logspace(0, 12, 241) if grid is None else np.asarray(grid, dtype=float)
    c = np.logspace(0, 8, 81) if c_grid is None else np.asarray(c_grid, dtype=float)
    ly = np.asarray(L(y), dtype=float)
    lcy = np.asarray(L(np.outer(c, y)), dtype=float)
    scaling = lcy / (3.0 * c[:, None] * ly[None, :])
    squaring = np.asarray(L(y * y), dtype=float) / (3.0 * ly)
    integral, err = l_integral(L)
    eps = 1e-12
    return LConditionReport(
        scaling_ok=bool(np.all(scaling <= 1 + eps)),
        squaring_ok=bool(np.all(squaring <= 1 + eps)),
        integral=integral,
        integral_error=err,
        integral_ok=abs(integral - 0.5) <= tol,
        worst_scaling_ratio=float(scaling.max()),
        worst_squaring_ratio=float(squaring.max()),
    )


def g_function(x):
    """``g(x) = exp(x^2/2)/x 1(x >= 1)``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out = np.where(x >= 1.0, np.exp(0.5 * x * x) / np.where(x >= 1.0, x, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def rhs_212_constant() -> float:
    """``3 / int_0^1 exp(-x^2/2) dx``, using the error function."""
    return 3.0 / (math.sqrt(math.pi / 2.0) * math.erf(1.0 / math.sqrt(2.0)))


def lhs_212_statistic(a, b, L: Callable = CANONICAL_L):
    """``g(A/B) / (L(A/B) v L(B v 1/B))``, whose mean is at most :func:`rhs_212_constant`."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0):
        raise ParameterError("B must be positive")
    r = a / b
    den = np.maximum(np.asarray(L(r), dtype=float), np.asarray(L(np.maximum(b, 1.0 / b)), dtype=float))
    out = g_function(r) / den
    return float(out) if np.ndim(out) == 0 else out


def l_function(x):
    """``l(x) = sqrt(log(1 + log(1 + x)))`` for ``x >= 0``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ParameterError("l(x) needs x >= 0")
    out = np.sqrt(np.log1p(np.log1p(x)))
    return float(out) if out.ndim == 0 else out


def statistic_thm29(path, tau: int | None = None) -> tuple[float, float]:
    """``(sup_{t<=tau} |M_t|/sqrt(1 + <M>_t), l(<M>_tau))`` along ``path``.

    ``<M>`` is the path's ``B^2``.
    """
    tau = path.horizon if tau is None else int(tau)
    if not 0 <= tau <= path.horizon:
        raise ParameterError(f"tau={tau} outside 0..{path.horizon}")
    m = path.a_values[: tau + 1]
    qv = path.b_squared[: tau + 1]
    return float(np.max(np.abs(m) / np.sqrt(1.0 + qv))), float(l_function(qv[-1]))


def phi_q(theta, q: float):
    """``Phi_q(theta) = theta^q / q`` for ``1 < q <= 2``."""
    if not 1 < q <= 2:
        raise ParameterError(f"q must lie in (1, 2], got {q!r}")
    theta = np.asarray(theta, dtype=float)
    out = np.abs(theta) ** q / q
    return float(out) if out.ndim == 0 else out


def statistic_thm210(path, eta: float, q: float, L: Callable = CANONICAL_L) -> float:
    """``sup_t A_t (B_t v eta)^{-1} [1 v log+ L(B_t v eta)]^{-(q-1)/q}``."""
    _positive(eta=eta)
    if not 1 < q <= 2:
        raise ParameterError(f"q must lie in (1, 2], got {q!r}")
    b = np.maximum(path.b_values, eta)
    lv = np.asarray(L(b), dtype=float)
    with np.errstate(divide="ignore"):
        logp = np.where(lv > 1.0, np.log(np.where(lv > 1.0, lv, 1.0)), 0.0)
    factor = np.maximum(1.0, logp) ** (-(q - 1.0) / q)
    return float(np.max(path.a_values / b * factor))


THEOREMS = {
    "2.1": (bound_thm21, ("x", "y")),
    "ar1": (bound_ar1, ("x", "z")),
    "2.2": (bound_thm22, ("x", "s")),
    "2.3": (bound_thm23, ("alpha", "beta", "lam")),
    "2.4": (bound_thm24_25, ("x", "alpha", "beta", "y")),
    "2.5": (bound_thm24_25, ("x", "alpha", "beta", "y")),
    "2.6": (lambda x, y, c: bound_thm26(x, y, c)[0], ("x", "y", "c")),
    "2.6s": (lambda x, y, c: bound_thm26(x, y, c)[1], ("x", "y", "c")),
    "2.7": (bound_thm27, ("x",)),
}


def evaluate(theorem: str, params: Mapping[str, float]) -> BoundValue:
    """Evaluate the bound named ``theorem`` (``"2.1"``, ``"2.6"``, ...)."""
    if theorem not in THEOREMS:
        raise ParameterError(f"unknown theorem {theorem!r}; expected one of {sorted(THEOREMS)}")
    fn, names = THEOREMS[theorem]
    missing = [n for n in names if n not in params]
    extra = sorted(set(params) - set(names))
    if missing or extra:
        raise ParameterError(f"theorem {theorem} takes parameters {names}; missing {missing}, unexpected {extra}")
    return fn(*(float(params[n]) for n in names))
