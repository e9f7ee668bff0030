"""Method of mixtures: mixture integrals, mixture boundaries and crossing bounds.

For a finite measure ``F`` on ``(0, lambda0)`` the mixture

    Psi(u, v) = int exp(lambda*u - lambda^2*v/2) dF(lambda)

is increasing in ``u``; the boundary ``beta_F(v, c)`` solves ``Psi = c``.
When ``exp(lambda*A_t - lambda^2*B_t^2/2)`` is a supermartingale for every
``lambda`` in the support, ``P(A_t >= beta_F(B_t^2, c) for some t)`` is at
most ``F(0, lambda0)/c``.

All integrals are evaluated in log space so that large ``u`` does not
overflow.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

from .exceptions import NumericalError, ParameterError

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
E_E = math.exp(math.e)
RS_LAMBDA0 = math.exp(-math.e)
RS_FIXED_T_MAX = 400.0

DEFAULT_QUAD_RTOL = 1e-10
DEFAULT_ROOT_RTOL = 1e-9


class MixingMeasure:
    """A finite positive measure on ``(0, lambda0)``."""

    kind = ""
    lambda0 = math.inf

    def total_mass(self) -> float:
        raise NotImplementedError

    def support_lower(self) -> float:
        """``sup{y > 0 : F(0, y) = 0}``, the lower edge of the support."""
        return 0.0

    def support_midpoint(self) -> float:
        raise NotImplementedError

    def log_psi(self, u: float, v: float, rtol: float = DEFAULT_QUAD_RTOL) -> float:
        raise NotImplementedError

    def log_psi_vec(self, u, v):
        """Vectorized ``(log Psi, d log Psi / du)`` on broadcast arrays."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianScale(MixingMeasure):
    """``dF = (y/sqrt(2 pi)) exp(-lambda^2 y^2/2) d lambda`` on ``(0, inf)``; mass 1/2.

    ``Psi(u, v) = (y/s) exp(u^2/(2 s^2)) Phi(u/s)`` with ``s^2 = v + y^2``.
    """

    y: float
    kind = "GaussianScale"

    def __post_init__(self):
        if not (self.y > 0 and math.isfinite(self.y)):
            raise ParameterError(f"GaussianScale needs y > 0, got {self.y!r}")

    def total_mass(self):
        return 0.5

    def support_midpoint(self):
        return 1.0 / self.y

    def density(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self.y / math.sqrt(2 * math.pi) * np.exp(-0.5 * (lam * self.y) ** 2)

    def log_psi(self, u, v, rtol=DEFAULT_QUAD_RTOL):
        return float(np.ravel(self.log_psi_vec(u, v)[0])[0])

    def log_psi_vec(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        s = np.sqrt(v + self.y ** 2)
        z = u / s
        lp = math.log(self.y) - np.log(s) + 0.5 * z * z + special.log_ndtr(z)
        # d/du log Psi = u/s^2 + phi(z)/(s Phi(z))
        mills = np.exp(-0.5 * z * z - LOG_SQRT_2PI - special.log_ndtr(z))
        return lp, u / (s * s) + mills / s

    def to_dict(self):
        return {"kind": self.kind, "y": self.y}


@dataclass(frozen=True)
class DiscreteGrid(MixingMeasure):
    """Point masses ``masses[i]`` at ``points[i]``, all inside ``(0, lambda0)``."""

    points: tuple
    masses: tuple
    lambda0: float = math.inf
    kind = "DiscreteGrid"

    def __post_init__(self):
        pts = tuple(float(p) for p in np.atleast_1d(self.points))
        ms = tuple(float(m) for m in np.atleast_1d(self.masses))
        if len(pts) != len(ms) or not pts:
            raise ParameterError("DiscreteGrid needs equally many (>= 1) points and masses")
        if any(not (0 < p < self.lambda0) for p in pts):
            raise ParameterError(f"support points must lie in (0, {self.lambda0!r})")
        if any(m < 0 for m in ms) or sum(ms) <= 0:
            raise ParameterError("masses must be nonnegative with positive total")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", ms)

    @classmethod
    def atom(cls, lam: float, mass: float = 1.0) -> "DiscreteGrid":
        return cls((lam,), (mass,), lambda0=math.inf)

    def total_mass(self):
        return math.fsum(self.masses)

    def support_lower(self):
        return min(p for p, m in zip(self.points, self.masses) if m > 0)

    def support_midpoint(self):
        live = [p for p, m in zip(self.points, self.masses) if m > 0]
        return 0.5 * (min(live) + max(live))

    def log_psi(self, u, v, rtol=DEFAULT_QUAD_RTOL):
        return float(np.ravel(self.log_psi_vec(u, v)[0])[0])

    def log_psi_vec(self, u, v):
        u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
        live = [(p, m) for p, m in zip(self.points, self.masses) if m > 0]
        lam = np.array([p for p, _ in live])
        logw = np.log([m for _, m in live])
        expo = lam * u[..., None] - 0.5 * lam * lam * v[..., None] + logw
        lp = special.logsumexp(expo, axis=-1)
        grad = np.sum(lam * np.exp(expo - lp[..., None]), axis=-1)
        return np.atleast_1d(lp), np.atleast_1d(grad)

    def to_dict(self):
        return {"kind": self.kind, "points": list(self.points), "masses": list(self.masses), "lambda0": self.lambda0}


def _gl_panels(a: float, b: float, width: float, order: int = 8):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    n_panels = max(1, int(math.ceil((b - a) / width)))
    edges = np.linspace(a, b, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    return x, w


@dataclass(frozen=True)
class RobbinsSiegmund(MixingMeasure):
    """``dF = d lambda / (lambda log(1/lambda) (log log(1/lambda))^{1+delta})`` on ``(0, e^-e)``.

    With ``w = log log(1/lambda)`` the measure becomes ``w^{-1-delta} dw`` on
    ``(1, inf)``, so the total mass is ``1/delta``.  Integrals are taken in
    ``w``; beyond a cut-off ``W`` where ``lambda(W)*|u|`` and
    ``lambda(W)^2 v`` are below 1e-17 the exponential factor is 1 to double
    precision and the tail ``W^-delta/delta`` is added analytically.
    """

    delta: float
    kind = "RobbinsSiegmund"
    lambda0 = RS_LAMBDA0
    _nodes: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ParameterError(f"RobbinsSiegmund needs delta > 0, got {self.delta!r}")

    def total_mass(self):
        return 1.0 / self.delta

    def support_midpoint(self):
        return 0.5 * RS_LAMBDA0

    @staticmethod
    def lam_of_w(w):
        return np.exp(-np.exp(w))

    @staticmethod
    def w_of_lam(lam):
        return np.log(np.log(1.0 / np.asarray(lam, dtype=float)))

    def density(self, lam):
        lam = np.asarray(lam, dtype=float)
        ll = np.log(1.0 / lam)
        return 1.0 / (lam * ll * np.log(ll) ** (1.0 + self.delta))

    @staticmethod
    def cutoff(u, v) -> float:
        scale = max(1.0, abs(float(u)), math.sqrt(max(float(v), 0.0)))
        return math.log(math.log(scale) + 40.0)

    def _peak(self, u, v, w_hi):
        """Maximum of ``lambda*u - lambda^2*v/2`` over the support up to ``w_hi``."""
        lam_hi, lam_lo = RS_LAMBDA0, math.exp(-math.exp(w_hi))
        if v > 0:
            lam = min(max(u / v, lam_lo), lam_hi)
        else:
            lam = lam_hi if u > 0 else lam_lo
        return lam * u - 0.5 * lam * lam * v, lam

    def log_psi(self, u, v, rtol=DEFAULT_QUAD_RTOL):
        """Adaptive quadrature of ``log Psi(u, v)``; raises on missed tolerance."""
        u, v = float(u), float(v)
        if v < 0:
            raise ParameterError(f"v must be nonnegative, got {v!r}")
        d = self.delta
        w_hi = self.cutoff(u, v)
        m_peak, lam_star = self._peak(u, v, w_hi)
        m = max(m_peak, 0.0)
        shift = m_peak - m

        def integrand(w):
            # exponent relative to its peak, factored to avoid cancellation
            lam = math.exp(-math.exp(w))
            rel = (lam - lam_star) * (u - 0.5 * (lam + lam_star) * v)
            return math.exp(rel + shift - (1.0 + d) * math.log(w))

        # the Gaussian factor has sd 1/sqrt(v) in lambda; map it to w and
        # split the range so the peak sits inside its own short piece
        w_star = float(self.w_of_lam(lam_star))
        sd_w = 1.0 / (math.sqrt(v) * lam_star * math.exp(w_star)) if v > 0 else math.inf
        cuts = sorted({1.0, w_hi, *(min(max(w_star + k * sd_w, 1.0), w_hi) for k in (-12.0, 0.0, 12.0) if math.isfinite(sd_w))})
        body = err = 0.0
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            if hi > lo:
                with warnings.catch_warnings():
                    # the error estimate is checked below
                    warnings.simplefilter("ignore", integrate.IntegrationWarning)
                    val, e = integrate.quad(integrand, lo, hi, epsabs=0.0, epsrel=rtol * 0.1, limit=400)
                body += val
                err += e
        tail = math.exp(-m - d * math.log(w_hi)) / d
        total = body + tail
        if not (total > 0 and err <= rtol * total):
            achieved = err / total if total > 0 else math.inf
            raise NumericalError(f"Psi quadrature reached relative error {achieved:.3g} > {rtol:.3g}", achieved=achieved)
        return m + math.log(total)

    def _fixed_rule(self):
        # nodes in t = log(1/lambda): the peak of the integrand has a width of
        # order one in t whatever (u, v) are, so uniform panels resolve it
        if self._nodes is None:
            t1, w1 = _gl_panels(math.e, 60.0, 0.2)
            t2, w2 = _gl_panels(60.0, RS_FIXED_T_MAX, 5.0)
            t = np.concatenate([t1, t2])
            wts = np.concatenate([w1, w2])
            log_weight = np.log(wts) - np.log(t) - (1.0 + self.delta) * np.log(np.log(t))
            object.__setattr__(self, "_nodes", (np.exp(-t), log_weight))
        return self._nodes

    def log_psi_vec(self, u, v):
        """Fixed composite Gauss-Legendre rule plus the analytic tail.

        The rule covers ``e^-e > lambda > exp(-RS_FIXED_T_MAX)``; it is
        accurate while ``|u|`` and ``sqrt(v)`` stay below about ``1e150``.
        """
        u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
        lam, log_weight = self._fixed_rule()
        expo = u[..., None] * lam - 0.5 * v[..., None] * lam * lam + log_weight
        tail_log = -self.delta * math.log(math.log(RS_FIXED_T_MAX)) - math.log(self.delta)
        full = np.concatenate([expo, np.broadcast_to(tail_log, u.shape + (1,))], axis=-1)
        lp = special.logsumexp(full, axis=-1)
        grad = np.sum(np.exp(expo - lp[..., None]) * lam, axis=-1)
        return np.atleast_1d(lp), np.atleast_1d(grad)

    def to_dict(self):
        return {"kind": self.kind, "delta": self.delta}


def measure_from_dict(data) -> MixingMeasure:
    kind = data.get("kind")
    if kind == "GaussianScale":
        return GaussianScale(float(data["y"]))
    if kind == "RobbinsSiegmund":
        return RobbinsSiegmund(float(data["delta"]))
    if kind == "DiscreteGrid":
        return DiscreteGrid(tuple(data["points"]), tuple(data["masses"]), float(data.get("lambda0", math.inf)))
    raise ParameterError(f"unknown mixing measure {kind!r}")


def parse_measure(text: str) -> MixingMeasure:
    """Parse ``rs:delta=0.5``, ``gauss:y=1`` or ``grid:points=0.1;0.2,masses=1;1``."""
    head, _, rest = text.partition(":")
    kv = {}
    for item in filter(None, rest.split(",")):
        k, eq, val = item.partition("=")
        if not eq:
            raise ParameterError(f"malformed measure parameter {item!r}")
        kv[k.strip()] = val.strip()
    try:
        if head in ("rs", "RobbinsSiegmund"):
            return RobbinsSiegmund(float(kv.get("delta", 0.5)))
        if head in ("gauss", "gaussian", "GaussianScale"):
            return GaussianScale(float(kv.get("y", 1.0)))
        if head in ("grid", "atom", "DiscreteGrid"):
            pts = tuple(float(p) for p in kv["points"].split(";"))
            ms = tuple(float(m) for m in kv.get("masses", ";".join(["1"] * len(pts))).split(";"))
            return DiscreteGrid(pts, ms, float(kv.get("lambda0", "inf")))
    except (KeyError, ValueError) as exc:
        raise ParameterError(f"cannot parse measure {text!r}: {exc}") from exc
    raise ParameterError(f"unknown measure {head!r}; expected rs, gauss or grid")


def log_psi(u: float, v: float, F: MixingMeasure, rtol: float = DEFAULT_QUAD_RTOL) -> float:
    return F.log_psi(u, v, rtol)


def psi(u: float, v: float, F: MixingMeasure, rtol: float = DEFAULT_QUAD_RTOL) -> float:
    """``Psi(u, v) = int exp(lambda*u - lambda^2*v/2) dF(lambda)``."""
    if not v >= 0:
        raise ParameterError(f"v must be nonnegative, got {v!r}")
    lp = F.log_psi(u, v, rtol)
    return math.exp(lp) if lp < 709.7 else math.inf


def _initial_guess(v: float, c: float, F: MixingMeasure) -> float:
    lam = F.support_midpoint()
    return math.log(c / F.total_mass()) / lam + 0.5 * lam * v


def beta_f(v: float, c: float, F: MixingMeasure, rtol: float = DEFAULT_ROOT_RTOL, quad_rtol: float = DEFAULT_QUAD_RTOL) -> float:
    """The unique root ``u`` of ``Psi(u, v) = c``.

    The bracket starts at the single-atom solution for an atom at the
    support midpoint and doubles its step until ``log Psi - log c`` changes
    sign; Brent's method finishes.  The residual is checked against
    ``rtol`` relative to ``c``.
    """
    if not (c > 0 and math.isfinite(c)):
        raise ParameterError(f"c must be positive, got {c!r}")
    if not (v >= 0 and math.isfinite(v)):
        raise ParameterError(f"v must be nonnegative, got {v!r}")
    target = math.log(c)

    def g(u):
        return F.log_psi(u, v, quad_rtol) - target

    u0 = _initial_guess(v, c, F)
    step = max(1.0, abs(u0))
    lo, hi = u0, u0
    g_lo = g_hi = g(u0)
    for _ in range(200):
        if g_lo < 0 < g_hi or g_lo == 0 or g_hi == 0:
            break
        if g_lo >= 0:
            lo -= step
            g_lo = g(lo)
        if g_hi <= 0:
            hi += step
            g_hi = g(hi)
        step *= 2.0
    else:
        raise NumericalError(f"could not bracket Psi(u, {v!r}) = {c!r}; c may lie below inf_u Psi")
    if g_lo == 0:
        return lo
    if g_hi == 0:
        return hi
    root = optimize.brentq(g, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    resid = abs(math.expm1(g(root)))
    if resid > max(rtol, residual_floor(root, v, F, quad_rtol)):
        raise NumericalError(f"beta_F residual {resid:.3g} exceeds {rtol:.3g}", achieved=resid)
    return root


def residual_floor(u: float, v: float, F: MixingMeasure, quad_rtol: float = DEFAULT_QUAD_RTOL) -> float:
    """Relative accuracy of ``Psi`` attainable in double precision near ``u``.

    With ``s = d log Psi/du`` this is ``s * (ulp(u) + 8 eps |u|)``: one ulp of
    the root plus rounding of ``lambda u - lambda^2 v/2`` (whose two terms are
    both of size ``s |u|`` near the root).  For measures with mass bounded
    away from zero it exceeds 1e-9 once ``v`` is around 1e8.
    """
    h = 1e-6 * max(1.0, abs(u))
    slope = abs(F.log_psi(u + h, v, quad_rtol) - F.log_psi(u - h, v, quad_rtol)) / (2.0 * h)
    return slope * (math.ulp(u) + 8.0 * np.finfo(float).eps * abs(u))


@dataclass
class Boundary:
    """Vectorized evaluation of ``v -> beta_F(v, c)``.

    Uses the measure's fixed-rule ``log_psi_vec`` with a safeguarded
    Newton-bisection iteration; ``samples`` caches evaluated ``(v, beta)``
    pairs for diagnostics.
    """

    measure: MixingMeasure
    c: float
    samples: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ParameterError(f"c must be positive, got {self.c!r}")

    def _solve(self, v, guess, tol, max_iter):
        F = self.measure
        target = math.log(self.c)

        def g(u, idx):
            lp, grad = F.log_psi_vec(u, v[idx])
            return lp - target, grad

        all_idx = np.arange(len(v))
        step = 1e-3 * np.maximum(1.0, np.abs(guess))
        lo, hi = guess - step, guess + step
        g_lo, g_hi = g(lo, all_idx)[0], g(hi, all_idx)[0]
        for _ in range(400):
            need_lo, need_hi = g_lo >= 0, g_hi <= 0
            if not (need_lo.any() or need_hi.any()):
                break
            step *= 4.0
            for need, side in ((need_lo, "lo"), (need_hi, "hi")):
                idx = np.flatnonzero(need)
                if idx.size == 0:
                    continue
                if side == "lo":
                    hi[idx], g_hi[idx] = lo[idx], g_lo[idx]
                    lo[idx] -= step[idx]
                    g_lo[idx] = g(lo[idx], idx)[0]
                else:
                    lo[idx], g_lo[idx] = hi[idx], g_hi[idx]
                    hi[idx] += step[idx]
                    g_hi[idx] = g(hi[idx], idx)[0]
        else:
            raise NumericalError("could not bracket the boundary for every v")
        # start from the secant point of the bracket, then safeguarded Newton
        u = lo - g_lo * (hi - lo) / (g_hi - g_lo)
        active = all_idx
        for _ in range(max_iter):
            val, grad = g(u[active], active)
            done = np.abs(val) <= tol
            lo[active] = np.where(val < 0, u[active], lo[active])
            hi[active] = np.where(val > 0, u[active], hi[active])
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = u[active] - val / grad
            ok = (newton > lo[active]) & (newton < hi[active]) & np.isfinite(newton)
            width_ok = hi[active] - lo[active] <= 4 * np.finfo(float).eps * np.abs(u[active])
            step_u = np.where(ok, newton, 0.5 * (lo[active] + hi[active]))
            u[active] = np.where(done | width_ok, u[active], step_u)
            active = active[~(done | width_ok)]
            if active.size == 0:
                break
        else:
            worst = float(np.max(np.abs(g(u[active], active)[0])))
            if worst > 1e-10:
                raise NumericalError(f"boundary iteration stopped at log residual {worst:.3g}", achieved=worst)
        return u

    def evaluate(self, v, tol: float = 1e-13, max_iter: int = 200) -> np.ndarray:
        """``beta_F(v, c)`` for every entry of ``v`` (log-residual ``tol``)."""
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ParameterError("v must be finite and nonnegative")
        F = self.measure
        lam = F.support_midpoint()
        naive = math.log(self.c / F.total_mass()) / lam + 0.5 * lam * v
        if v.size > 64:
            # solve on log-spaced anchors first and interpolate starting points
            lv = np.log1p(v)
            anchors_l = np.linspace(lv.min(), lv.max(), 48)
            anchors_v = np.expm1(anchors_l)
            anchors_u = self._solve(anchors_v, math.log(self.c / F.total_mass()) / lam + 0.5 * lam * anchors_v, tol, max_iter)
            guess = np.interp(lv, anchors_l, anchors_u)
        else:
            guess = naive
        u = self._solve(v, guess.astype(float).copy(), tol, max_iter)
        for vi, ui in zip(v.tolist()[:1000], u.tolist()[:1000]):
            self.samples[vi] = ui
        return u

    def __call__(self, v):
        return self.evaluate(v)


def rs_asymptotic_bracket(v, c: float, delta: float):
    """``log_2 v + (3/2 + delta) log_3 v + log(c/(2 sqrt(pi)))`` for ``v > e``."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= math.e):
        raise ParameterError("log_3 v needs v > e")
    l2 = np.log(np.log(v))
    return l2 + (1.5 + delta) * np.log(l2) + math.log(c / (2.0 * math.sqrt(math.pi)))


def rs_asymptotic(v, c: float, delta: float):
    """``sqrt(2v [log_2 v + (3/2+delta) log_3 v + log(c/(2 sqrt(pi)))])``.

    The vanishing correction term is dropped.  Refuses ``v <= e^(e^e)``.
    """
    if not (c > 0 and delta > 0):
        raise ParameterError("need c > 0 and delta > 0")
    varr = np.asarray(v, dtype=float)
    if np.any(varr <= math.exp(E_E)):
        raise ParameterError(f"the asymptotic boundary is only offered for v > e^(e^e) = {math.exp(E_E):.6g}")
    inner = rs_asymptotic_bracket(varr, c, delta)
    if np.any(inner <= 0):
        raise ParameterError("asymptotic bracket is not positive at this (v, c)")
    out = np.sqrt(2.0 * varr * inner)
    return float(out) if out.ndim == 0 else out


def crossing_bound(c: float, F: MixingMeasure) -> float:
    """``F(0, lambda0) / c``."""
    if not c > 0:
        raise ParameterError(f"c must be positive, got {c!r}")
    return F.total_mass() / c


def slope_limit(F: MixingMeasure) -> float:
    """Limit of ``beta_F(v, c)/v`` as ``v -> inf``: half the support's lower edge."""
    return 0.5 * F.support_lower()


def gaussian_mixture_identity(a: float, b: float, y: float, log: bool = False, rtol: float = 1e-12):
    """Both sides of the Gaussian mixture identity.

    ``lhs = int (y/sqrt(2 pi)) exp(lambda a - lambda^2 b^2/2 - lambda^2 y^2/2) d lambda``
    by quadrature and ``rhs = (y/sqrt(b^2+y^2)) exp(a^2/(2(b^2+y^2)))`` in
    closed form.  With ``log=True`` both logarithms are returned.
    """
    if not (y > 0 and b >= 0):
        raise ParameterError("need y > 0 and b >= 0")
    a, b, y = float(a), float(b), float(y)
    s2 = b * b + y * y
    s = math.sqrt(s2)
    centre = a / s2
    # the integrand is scaled by its own peak value so that it is O(1)
    peak = centre * a - 0.5 * centre * centre * s2

    def integrand(lam):
        return math.exp(lam * a - 0.5 * lam * lam * s2 - peak)

    half_width = 40.0 / s
    with warnings.catch_warnings():
        # the error estimate is checked below
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(integrand, centre - half_width, centre + half_width, points=[centre], epsabs=0.0, epsrel=rtol, limit=200)
    if err > 1e3 * rtol * val:
        raise NumericalError(f"identity quadrature error {err / val:.3g}", achieved=err / val)
    log_lhs = math.log(y) - LOG_SQRT_2PI + peak + math.log(val)
    log_rhs = math.log(y) - 0.5 * math.log(s2) + a * a / (2.0 * s2)
    if log:
        return log_lhs, log_rhs
    # values beyond the double range come back as inf; use log=True there
    return _exp_or_inf(log_lhs), _exp_or_inf(log_rhs)


def _exp_or_inf(x: float) -> float:
    return math.exp(x) if x < 709.78 else math.inf


def mixture_tail_bound(x: float, y: float, eb: float) -> float:
    """``sqrt(1 + EB/y) exp(-x^2/4)`` bounding ``P(|A|/sqrt(B^2 + y^2) >= x)``.

    Follows from the Gaussian mixture of the canonical assumption, Cauchy-
    Schwarz and ``E sqrt(B^2/y^2 + 1) <= 1 + EB/y``; ``y = EB`` gives
    ``sqrt(2) exp(-x^2/4)``.
    """
    if not (x > 0 and y > 0 and eb >= 0):
        raise ParameterError("need x > 0, y > 0 and EB >= 0")
    return math.sqrt(1.0 + eb / y) * math.exp(-x * x / 4.0)


def two_sided_gaussian_boundary(v, c: float, y: float):
    """Positive ``u`` with ``(y/sqrt(v+y^2)) exp(u^2/(2(v+y^2))) = c`` for ``c >= 1``.

    This is the boundary of the full (two-sided) Gaussian mixture.
    """
    if not (c >= 1 and y > 0):
        raise ParameterError("need c >= 1 and y > 0")
    v = np.asarray(v, dtype=float)
    s2 = v + y * y
    out = np.sqrt(s2 * (np.log(s2 / (y * y)) + 2.0 * math.log(c)))
    return float(out) if out.ndim == 0 else out
