"""Upper-LIL constants, stopping times and self-normalized LIL ratios.

Ratios involving ``log log`` of a normalizer are only defined where that
normalizer exceeds a guard (``e^e`` by default); elsewhere they are NaN.
All LIL checks in this package are finite-horizon sanity envelopes, not
verifications of almost-sure limits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import NumericalError, ParameterError
from .processes import ProcessPath, c_gamma

EE = math.exp(math.e)
MAX_HORIZON = 10_000_000


@dataclass(frozen=True)
class LilConstants:
    """``h`` solves ``h - log(1+h) = lambda^2``; ``b = h/lambda``,
    ``gamma = h/(1+h)``, ``C_gamma`` and ``c_lambda = lambda/gamma``.

    ``c_lambda`` is an interpretation of a loosely stated definition and is
    flagged by ``c_lambda_interpreted``.
    """

    lam: float
    h: float
    b_lambda: float
    gamma: float
    c_gamma: float
    c_lambda: float
    residual: float
    c_lambda_interpreted: bool = True

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "h": self.h,
            "b_lambda": self.b_lambda,
            "gamma": self.gamma,
            "c_gamma": self.c_gamma,
            "c_lambda": self.c_lambda,
            "residual": self.residual,
            "c_lambda_interpreted": self.c_lambda_interpreted,
        }


def _h_equation(h: float, lam: float) -> float:
    if h < 1e-4:
        # h - log(1+h) = h^2/2 - h^3/3 + h^4/4 - ...
        return sum((-1) ** k * h ** k / k for k in range(2, 10)) - lam * lam
    return h - math.log1p(h) - lam * lam


def solve_h(lam: float) -> LilConstants:
    """Positive root of ``h - log(1+h) = lambda^2`` by bracketed bisection."""
    lam = float(lam)
    if not (lam > 0 and math.isfinite(lam)):
        raise ParameterError(f"lambda must be positive, got {lam!r}")
    lo, hi = 0.0, max(1.0, 2.0 * lam)
    while _h_equation(hi, lam) <= 0:
        hi *= 2.0
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _h_equation(mid, lam) > 0:
            hi = mid
        else:
            lo = mid
    h = hi if abs(_h_equation(hi, lam)) < abs(_h_equation(lo, lam)) else lo
    residual = abs(_h_equation(h, lam))
    if residual > 1e-12:
        raise NumericalError(f"h residual {residual:.3g} above 1e-12", achieved=residual)
    gamma = h / (1.0 + h)
    return LilConstants(
        lam=lam,
        h=h,
        b_lambda=h / lam,
        gamma=gamma,
        c_gamma=c_gamma(gamma),
        c_lambda=lam / gamma,
        residual=residual,
    )


def e_k(k: int) -> float:
    """``exp(k / log k)`` for integer ``k >= 2``."""
    if isinstance(k, bool) or int(k) != k or k < 2:
        raise ParameterError(f"k must be an integer >= 2, got {k!r}")
    return math.exp(k / math.log(k))


def _loglog(x: np.ndarray, guard: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if guard < math.e:
        raise ParameterError(f"guard must be at least e so that log log is positive, got {guard!r}")
    ok = x > guard
    out = np.full(x.shape, np.nan)
    out[ok] = np.log(np.log(x[ok]))
    return out


def _sums(path: ProcessPath):
    s = np.asarray(path.a_values, dtype=float)
    v = np.sqrt(np.asarray(path.sum_squares, dtype=float))
    return s, v


def lil_ratio(path: ProcessPath, guard: float = EE) -> np.ndarray:
    """``S_n / (V_n (log log V_n)^{1/2})`` with ``V_n^2 = sum X_i^2``; NaN where ``V_n <= guard``."""
    s, v = _sums(path)
    ll = _loglog(v, guard)
    with np.errstate(invalid="ignore"):
        return s / (v * np.sqrt(ll))


def normalized_lil_ratio(path: ProcessPath, guard: float = EE) -> np.ndarray:
    """``S_n / (V_n sqrt(2 log log V_n))``, the LIL ratio rescaled to limsup 1."""
    return lil_ratio(path, guard) / math.sqrt(2.0)


def truncation_levels(path: ProcessPath, constants: LilConstants, guard: float = EE):
    """``(-lambda v_n, c_lambda v_n)`` with ``v_n = V_n (log log V_n)^{-1/2}``."""
    _, v = _sums(path)
    ll = _loglog(v, guard)
    with np.errstate(invalid="ignore", divide="ignore"):
        vn = v / np.sqrt(ll)
    return -constants.lam * vn, constants.c_lambda * vn


def centered_sums(path: ProcessPath, constants: LilConstants, guard: float = EE) -> np.ndarray:
    """``S_n - sum_{i<=n} mu_i[-lambda v_n, c_lambda v_n]`` with exact truncated means.

    The truncation window depends on ``n``, so the centering is recomputed
    for every ``n`` from the generator's conditional law.
    """
    family = path.family
    if family is None or not hasattr(family, "truncated_mean_sum"):
        raise ParameterError("the path's generator exposes no conditional law")
    s, _ = _sums(path)
    lo, hi = truncation_levels(path, constants, guard)
    ok = np.isfinite(lo)
    out = np.full(s.shape, np.nan)
    n = np.flatnonzero(ok)
    if n.size:
        try:
            mu = family.truncated_mean_sum(n, lo[ok], hi[ok])
        except NotImplementedError as exc:
            raise ParameterError(str(exc)) from exc
        out[ok] = s[ok] - mu
    return out


def centered_lil_ratio(path: ProcessPath, constants: LilConstants, guard: float = EE) -> np.ndarray:
    """Centered sums over ``V_n (log log V_n)^{1/2}``; NaN where unguarded."""
    _, v = _sums(path)
    ll = _loglog(v, guard)
    with np.errstate(invalid="ignore"):
        return centered_sums(path, constants, guard) / (v * np.sqrt(ll))


def stout_ratio(path: ProcessPath, guard: float = EE) -> np.ndarray:
    """``M_n / sqrt(2 sigma_n^2 log log sigma_n)`` with ``sigma_n^2`` the
    summed conditional variances; NaN where ``sigma_n <= guard``."""
    m = np.asarray(path.a_values, dtype=float)
    sigma = np.sqrt(np.asarray(path.cond_var, dtype=float))
    ll = _loglog(sigma, guard)
    with np.errstate(invalid="ignore"):
        return m / np.sqrt(2.0 * sigma * sigma * ll)


def stopping_times(path: ProcessPath, constants: LilConstants, epsilon: float, j_max: int | None = None, guard: float = EE):
    """``t_j = inf{n : V_n >= e_j}`` and
    ``tau_j = inf{n >= t_j : centered S_n >= (1+3 eps) b_lambda V_n (log log V_n)^{1/2}}``.

    Indices run over ``j = 2..j_max``; ``None`` stands for an empty infimum.
    ``tau_j`` is only searched where the guarded ratio is defined.
    """
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon!r}")
    _, v = _sums(path)
    if np.any(np.diff(v) < 0):
        raise ParameterError("V_n must be nondecreasing")
    if j_max is None:
        j_max = 2
        while e_k(j_max + 1) <= v[-1]:
            j_max += 1
    j_values = list(range(2, int(j_max) + 1))
    levels = np.array([e_k(j) for j in j_values])
    idx = np.searchsorted(v, levels, side="left")
    t = [int(i) if i < len(v) else None for i in idx]
    exceed = None
    taus = []
    for tj in t:
        if tj is None:
            taus.append(None)
            continue
        if exceed is None:
            ratio = centered_lil_ratio(path, constants, guard)
            with np.errstate(invalid="ignore"):
                exceed = np.flatnonzero(ratio >= (1.0 + 3.0 * epsilon) * constants.b_lambda)
        k = np.searchsorted(exceed, tj, side="left")
        taus.append(int(exceed[k]) if k < len(exceed) else None)
    return {"j": j_values, "t": t, "tau": taus}


def example31_jumps(path: ProcessPath) -> int:
    """Number of steps at which the large negative value ``-m_n`` was drawn."""
    return int(np.count_nonzero(np.asarray(path.increments) < -1.0))


@dataclass
class LilPathReport:
    """LIL diagnostics for one path on an index grid."""

    n: np.ndarray
    s: np.ndarray
    v: np.ndarray
    v_small: np.ndarray
    centered: np.ndarray
    ratio: np.ndarray
    centered_ratio: np.ndarray
    stout_ratio: np.ndarray
    jumps: int | None = None
    constants: LilConstants | None = None
    meta: dict = field(default_factory=dict)

    def rows(self):
        for i in range(len(self.n)):
            yield {
                "n": int(self.n[i]),
                "ratio": float(self.ratio[i]),
                "stout_ratio": float(self.stout_ratio[i]),
                "centered_ratio": float(self.centered_ratio[i]),
            }


def lil_path_report(path: ProcessPath, constants: LilConstants | None = None, n_grid=None, guard: float = EE) -> LilPathReport:
    """Collect the LIL quantities of ``path`` at the indices ``n_grid``."""
    if path.horizon > MAX_HORIZON:
        raise ParameterError(f"horizon {path.horizon} exceeds the cap {MAX_HORIZON}")
    n = np.arange(path.horizon + 1) if n_grid is None else np.asarray(n_grid, dtype=np.int64)
    if n.size and (n.min() < 0 or n.max() > path.horizon):
        raise ParameterError("n_grid outside the path")
    s, v = _sums(path)
    ratio = lil_ratio(path, guard)
    ll = _loglog(v, guard)
    with np.errstate(invalid="ignore", divide="ignore"):
        v_small = v / np.sqrt(ll)
    if constants is not None:
        try:
            centered = centered_sums(path, constants, guard)
        except ParameterError:
            centered = np.full(s.shape, np.nan)
        with np.errstate(invalid="ignore"):
            c_ratio = centered / (v * np.sqrt(ll))
    else:
        centered = np.full(s.shape, np.nan)
        c_ratio = centered
    fam = path.meta.get("family")
    return LilPathReport(
        n=n,
        s=s[n],
        v=v[n],
        v_small=v_small[n],
        centered=centered[n],
        ratio=ratio[n],
        centered_ratio=c_ratio[n],
        stout_ratio=stout_ratio(path, guard)[n],
        jumps=example31_jumps(path) if fam == "Example31" else None,
        constants=constants,
        meta=dict(path.meta),
    )
