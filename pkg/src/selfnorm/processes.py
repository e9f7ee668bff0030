"""Path generators for self-normalized processes.

Every generator produces the pair ``(A_n, B_n^2)`` of the canonical
assumption together with the raw increments, the running sum of squared
increments and the running conditional variance (computed exactly from the
simulated conditional law).  A *normalizer* decides which of these running
quantities plays the role of ``B^2`` and which lambda-range the exponential
supermartingale ``exp(lambda*A - lambda^2*B^2/2)`` is guaranteed on.

Randomness is drawn replication by replication: replication ``r`` of a
campaign seeded with ``seed`` always uses :func:`substream` ``(seed, r)``, so a
single path generated on its own is bit-identical to the same replication
inside a batched Monte Carlo run.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np
from scipy.signal import lfilter

from .exceptions import LogCapWarning, ParameterError, RegimeError

LOG_CAP = 700.0
DEFAULT_CHUNK = 4096

REGIME_KINDS = ("AllReal", "AllNonnegative", "Restricted")
NORMALIZERS = ("squares", "variance", "stout", "bernstein", "a7", "a8")


def substream(seed: int, replication: int, tag: int = 0) -> np.random.Generator:
    """Independent generator for replication ``replication`` of a seeded run.

    ``tag`` separates auxiliary passes (e.g. a pre-pass estimating ``E B``)
    from the main replications that share the master seed.
    """
    seed = int(seed)
    if seed < 0:
        raise ParameterError(f"seed must be a nonnegative integer, got {seed}")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(int(tag), int(replication)))
    return np.random.Generator(np.random.PCG64(ss))


def c_gamma(gamma: float) -> float:
    """``C_gamma = -(gamma + log(1 - gamma)) / gamma^2`` with ``C_0 = 1/2``."""
    g = float(gamma)
    if not 0.0 <= g < 1.0:
        raise ParameterError(f"gamma must lie in [0, 1), got {gamma}")
    if g < 1e-2:
        # power series sum_{k>=2} g^(k-2)/k avoids the cancellation near 0
        return sum(g ** (k - 2) / k for k in range(2, 12))
    return -(g + math.log1p(-g)) / (g * g)


def a8_lambda_max(gamma: float) -> float:
    """Largest admissible truncation level ``lambda_n = 1/C_gamma`` for the
    truncated-mean supermartingale."""
    return 1.0 / c_gamma(gamma)


@dataclass(frozen=True)
class CanonicalRegime:
    """The lambda-range on which ``E exp(lambda*A - lambda^2*B^2/2) <= 1`` holds.

    ``closed`` marks a restricted regime that includes its endpoint.
    """

    kind: str
    lambda0: float | None = None
    closed: bool = False

    def __post_init__(self):
        if self.kind not in REGIME_KINDS:
            raise ParameterError(f"unknown regime kind {self.kind!r}; expected one of {REGIME_KINDS}")
        if self.kind == "Restricted":
            if self.lambda0 is None or not self.lambda0 > 0 or not math.isfinite(self.lambda0):
                raise ParameterError("a Restricted regime needs a finite lambda0 > 0")
        elif self.lambda0 is not None:
            raise ParameterError(f"lambda0 only applies to Restricted regimes, not {self.kind}")

    def contains(self, lam: float) -> bool:
        lam = float(lam)
        if not math.isfinite(lam):
            return False
        if self.kind == "AllReal":
            return True
        if lam < 0:
            return False
        if self.kind == "AllNonnegative":
            return True
        return lam <= self.lambda0 if self.closed else lam < self.lambda0

    def check(self, lam: float) -> None:
        if not self.contains(lam):
            raise RegimeError(f"lambda={lam!r} lies outside the regime {self}")

    def __str__(self):
        if self.kind == "AllReal":
            return "all real lambda"
        if self.kind == "AllNonnegative":
            return "lambda >= 0"
        op = "<=" if self.closed else "<"
        return f"0 <= lambda {op} {self.lambda0!r}"

    def to_dict(self):
        return {"kind": self.kind, "lambda0": self.lambda0, "closed": self.closed}


# --------------------------------------------------------------------------
# families
# --------------------------------------------------------------------------


class Family:
    """Conditional law of one generator family.

    Subclasses turn a block of raw draws of shape ``(R, T, n_raw)`` into the
    per-step increments ``d`` and conditional variances ``var``; the running
    sums are formed by :func:`iter_chunks`.
    """

    name = ""
    n_raw = 1
    raw_kind = "uniform"
    symmetric = False
    gaussian = False
    mean_zero = True
    defaults: dict = {}
    default_normalizer = "squares"
    cumulative_extras: tuple = ()
    step_extras: tuple = ()
    min_horizon = 1

    def __init__(self, params: Mapping | None = None):
        params = dict(params or {})
        self.normalizer = str(params.pop("normalizer", self.default_normalizer))
        self.norm_params = {k: float(params.pop(k)) for k in ("lambda0", "gamma") if k in params}
        unknown = sorted(set(params) - set(self.defaults))
        if unknown:
            raise ParameterError(f"{self.name}: unknown parameters {unknown}; allowed {sorted(self.defaults)}")
        self.p = {**self.defaults, **{k: float(v) for k, v in params.items()}}
        self._validate()
        self.regime = self._make_regime()

    # bounds on the increments; None means unbounded on that side
    @property
    def upper(self):
        return None

    @property
    def lower(self):
        return None

    def _validate(self):
        pass

    def dt(self) -> float:
        return 1.0

    def raw(self, rng: np.random.Generator, T: int) -> np.ndarray:
        if self.raw_kind == "normal":
            return rng.standard_normal((T, self.n_raw))
        return rng.random((T, self.n_raw))

    def initial_state(self, R: int) -> dict:
        return {}

    def advance(self, raw: np.ndarray, state: dict, n0: int):
        raise NotImplementedError

    # -- normalizers -------------------------------------------------------

    def _make_regime(self) -> CanonicalRegime:
        name = self.normalizer
        if name not in NORMALIZERS:
            raise ParameterError(f"unknown normalizer {name!r}; expected one of {NORMALIZERS}")
        if name == "squares":
            if not self.symmetric:
                raise ParameterError(f"{self.name}: the sum-of-squares normalizer needs conditionally symmetric increments")
            return CanonicalRegime("AllReal")
        if name == "variance":
            if not self.gaussian:
                raise ParameterError(f"{self.name}: the conditional-variance normalizer needs conditionally Gaussian increments")
            return CanonicalRegime("AllReal")
        if name == "stout":
            if self.upper is None:
                raise ParameterError(f"{self.name}: the Stout normalizer needs increments bounded above")
            m = self.upper
            lam0 = self.norm_params.get("lambda0", 1.0 / m)
            if not 0 < lam0 <= 1.0 / m * (1 + 1e-12):
                raise ParameterError(f"Stout normalizer needs 0 < lambda0 <= 1/M = {1.0 / m!r}, got {lam0!r}")
            self.norm_params["lambda0"] = lam0
            return CanonicalRegime("Restricted", lam0, closed=True)
        if name == "bernstein":
            if self.upper is None or self.lower is None or not self.mean_zero:
                raise ParameterError(f"{self.name}: the Bernstein normalizer needs bounded mean-zero increments")
            return CanonicalRegime("Restricted", 1.0 / self.bernstein_m(), closed=False)
        if name == "a7":
            if self.lower is None:
                raise ParameterError(f"{self.name}: the sum-of-squares (gamma) normalizer needs increments bounded below")
            gamma = self.norm_params.get("gamma", 0.5)
            if not 0 < gamma < 1:
                raise ParameterError(f"gamma must lie in (0, 1), got {gamma}")
            self.norm_params["gamma"] = gamma
            return CanonicalRegime("Restricted", gamma / self.lower, closed=True)
        raise ParameterError(f"{self.name} does not support the {name!r} normalizer")

    def bernstein_m(self) -> float:
        return max(self.upper, self.lower)

    def b_squared(self, arrs: Mapping, lam: float = 0.0) -> np.ndarray:
        name = self.normalizer
        if name == "squares":
            return arrs["sq"]
        if name == "variance":
            return arrs["cv"]
        if name == "stout":
            return (1.0 + 0.5 * self.norm_params["lambda0"] * self.upper) * arrs["cv"]
        if name == "bernstein":
            return arrs["cv"] / (1.0 - self.bernstein_m() * lam)
        if name == "a7":
            return 2.0 * c_gamma(self.norm_params["gamma"]) * arrs["sq"]
        raise ParameterError(f"no B^2 for normalizer {name!r}")

    def log_value(self, arrs: Mapping, lam: float) -> np.ndarray:
        """Log of the exponential supermartingale at the supplied running sums."""
        b2 = self.b_squared(arrs, lam)
        if lam == 0.0:
            return np.zeros_like(np.asarray(arrs["a"], dtype=float))
        return lam * arrs["a"] - 0.5 * lam * lam * b2

    def check_lambda(self, lam: float) -> None:
        self.regime.check(lam)

    def truncated_mean_sum(self, n: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """``sum_{i<=n} E[X_i 1(lo <= X_i < hi) | F_{i-1}]`` for each entry."""
        raise NotImplementedError(f"{self.name} has no closed-form truncated means")


def _lagged(state_value: np.ndarray, values: np.ndarray) -> np.ndarray:
    return np.concatenate([state_value[:, None], values[:, :-1]], axis=1)


class Rademacher(Family):
    """Independent fair +-1 increments."""

    name = "Rademacher"
    symmetric = True

    @property
    def upper(self):
        return 1.0

    @property
    def lower(self):
        return 1.0

    def advance(self, raw, state, n0):
        d = np.where(raw[..., 0] < 0.5, 1.0, -1.0)
        return {"d": d, "var": np.ones_like(d)}, state

    def truncated_mean_sum(self, n, lo, hi):
        n = np.asarray(n, dtype=float)
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        per_step = 0.5 * ((lo <= 1.0) & (1.0 < hi)) - 0.5 * ((lo <= -1.0) & (-1.0 < hi))
        return n * per_step


class ConditionallySymmetric(Family):
    """``d_n = s_n * eps_n`` with Gaussian ``eps`` and ``s_n^2 = omega + kappa*eps_{n-1}^2``.

    The scale is predictable, so increments are conditionally symmetric and
    conditionally Gaussian with variance ``s_n^2``.
    """

    name = "ConditionallySymmetric"
    raw_kind = "normal"
    symmetric = True
    gaussian = True
    defaults = {"omega": 1.0, "kappa": 0.5}

    def _validate(self):
        if not self.p["omega"] > 0 or self.p["kappa"] < 0:
            raise ParameterError("ConditionallySymmetric needs omega > 0 and kappa >= 0")

    def initial_state(self, R):
        return {"eps": np.zeros(R)}

    def advance(self, raw, state, n0):
        eps = raw[..., 0]
        s2 = self.p["omega"] + self.p["kappa"] * _lagged(state["eps"], eps) ** 2
        return {"d": np.sqrt(s2) * eps, "var": s2}, {"eps": eps[:, -1].copy()}


class AR1(Family):
    """Score martingale of the AR(1) model ``Y_n = alpha*Y_{n-1} + eps_n``.

    ``A_n = sum Y_{j-1} eps_j`` and the conditional variance is
    ``noise_scale^2 * sum Y_{j-1}^2``; ``noise_scale = 0`` gives the
    degenerate zero-noise path.
    """

    name = "AR1"
    raw_kind = "normal"
    symmetric = True
    gaussian = True
    defaults = {"alpha": 0.5, "noise_scale": 1.0}
    default_normalizer = "variance"
    step_extras = ("y", "eps")

    def _validate(self):
        if not math.isfinite(self.p["alpha"]) or self.p["noise_scale"] < 0:
            raise ParameterError("AR1 needs a finite alpha and noise_scale >= 0")

    def initial_state(self, R):
        return {"y": np.zeros(R)}

    def advance(self, raw, state, n0):
        alpha = self.p["alpha"]
        eps = self.p["noise_scale"] * raw[..., 0]
        y, _ = lfilter([1.0], [1.0, -alpha], eps, axis=1, zi=alpha * state["y"][:, None])
        y_prev = _lagged(state["y"], y)
        steps = {"d": y_prev * eps, "var": self.p["noise_scale"] ** 2 * y_prev ** 2, "y": y, "eps": eps}
        return steps, {"y": y[:, -1].copy()}


class BoundedAboveMartingale(Family):
    """Two-point martingale differences ``M`` or ``-M p_n/(1-p_n)``.

    ``p_n`` is ``p_lo`` when the previous uniform draw fell below 1/2 and
    ``p_hi`` otherwise, so the conditional law depends on the past.
    """

    name = "BoundedAboveMartingale"
    defaults = {"M": 1.0, "p_lo": 0.1, "p_hi": 0.3}
    default_normalizer = "stout"

    def _validate(self):
        p = self.p
        if not p["M"] > 0 or not 0 < p["p_lo"] <= p["p_hi"] <= 0.5:
            raise ParameterError("BoundedAboveMartingale needs M > 0 and 0 < p_lo <= p_hi <= 1/2")

    @property
    def upper(self):
        return self.p["M"]

    @property
    def lower(self):
        return self.p["M"] * self.p["p_hi"] / (1 - self.p["p_hi"])

    def initial_state(self, R):
        return {"u": np.ones(R)}

    def advance(self, raw, state, n0):
        m = self.p["M"]
        u = raw[..., 0]
        prob = np.where(_lagged(state["u"], u) < 0.5, self.p["p_lo"], self.p["p_hi"])
        d = np.where(u < prob, m, -m * prob / (1 - prob))
        return {"d": d, "var": m * m * prob / (1 - prob)}, {"u": u[:, -1].copy()}


class BernsteinMartingale(Family):
    """``d_n = M s_n U_n`` with ``U_n`` uniform on (-1, 1).

    ``s_n`` drops to ``s_lo`` after a negative increment.  ``|d_n| <= M`` so
    the Bernstein moment condition holds with constant ``M``.
    """

    name = "BernsteinMartingale"
    symmetric = True
    defaults = {"M": 1.0, "s_lo": 0.5}
    default_normalizer = "bernstein"

    def _validate(self):
        if not self.p["M"] > 0 or not 0 < self.p["s_lo"] <= 1:
            raise ParameterError("BernsteinMartingale needs M > 0 and 0 < s_lo <= 1")

    @property
    def upper(self):
        return self.p["M"]

    @property
    def lower(self):
        return self.p["M"]

    def initial_state(self, R):
        return {"u": np.ones(R)}

    def advance(self, raw, state, n0):
        m = self.p["M"]
        u = raw[..., 0]
        s = np.where(_lagged(state["u"], u) < 0.5, self.p["s_lo"], 1.0)
        return {"d": m * s * (2.0 * u - 1.0), "var": (m * s) ** 2 / 3.0}, {"u": u[:, -1].copy()}


def example31_m(n) -> np.ndarray:
    """Jump size solving ``E X_n = 0`` for the three-point law.

    Solving the zero-mean equation exactly gives
    ``m_n = 2 (log n)^{5/2} + n^{-1/2}``.
    """
    n = np.asarray(n, dtype=float)
    return 2.0 * np.log(n) ** 2.5 + n ** -0.5


def example31_probabilities(n):
    """Probabilities of ``-1/sqrt(n)``, ``-m_n`` and ``+1/sqrt(n)``."""
    n = np.asarray(n, dtype=float)
    ln = np.log(n)
    jump = 1.0 / (n * ln ** 2)
    drift = np.sqrt(ln / n)
    return 0.5 - drift - jump, jump, 0.5 + drift


def _example31_start() -> int:
    n = 3
    while example31_probabilities(n)[0] < 0:
        n += 1
    return n


# the printed law has a negative probability for 3 <= n < EXAMPLE31_START
EXAMPLE31_START = _example31_start()


class Example31(Family):
    """Independent three-point variables with a rare large negative jump.

    ``X_n = 0`` until the three printed probabilities form a distribution
    (``n >= EXAMPLE31_START``).  Increments are bounded above by
    ``1/sqrt(EXAMPLE31_START)``.
    """

    name = "Example31"
    default_normalizer = "stout"
    min_horizon = 3

    @property
    def upper(self):
        return 1.0 / math.sqrt(EXAMPLE31_START)

    def law(self, n):
        n = np.asarray(n, dtype=float)
        p1, p2, p3 = example31_probabilities(np.maximum(n, EXAMPLE31_START))
        active = n >= EXAMPLE31_START
        x = 1.0 / np.sqrt(n)
        return (
            np.where(active, -x, 0.0),
            np.where(active, -example31_m(np.maximum(n, 2.0)), 0.0),
            np.where(active, x, 0.0),
            np.where(active, p1, 1.0),
            np.where(active, p2, 0.0),
            np.where(active, p3, 0.0),
        )

    def advance(self, raw, state, n0):
        T = raw.shape[1]
        n = np.arange(n0, n0 + T, dtype=float)
        xs, xm, xp, p1, p2, p3 = self.law(n)
        u = raw[..., 0]
        d = np.where(u < p2, xm, np.where(u < p2 + p1, xs, xp))
        var = p1 * xs ** 2 + p2 * xm ** 2 + p3 * xp ** 2
        return {"d": d, "var": np.broadcast_to(var, d.shape).copy()}, state

    def truncated_mean_sum(self, n, lo, hi):
        """Exact ``sum_{i<=n} E X_i 1(lo <= X_i < hi)`` via prefix sums.

        Each atom sequence is monotone in ``i``, so the indices whose atom
        falls in ``[lo, hi)`` form a contiguous range.
        """
        n = np.atleast_1d(np.asarray(n, dtype=np.int64))
        lo = np.broadcast_to(np.asarray(lo, dtype=float), n.shape)
        hi = np.broadcast_to(np.asarray(hi, dtype=float), n.shape)
        first = EXAMPLE31_START
        top = int(n.max())
        out = np.zeros(n.shape)
        if top < first:
            return out
        idx = np.arange(first, top + 1, dtype=float)
        xs, xm, xp, p1, p2, p3 = self.law(idx)
        count = np.clip(n - first + 1, 0, None)
        for atoms, probs in ((xs, p1), (xm, p2), (xp, p3)):
            prefix = np.concatenate([[0.0], np.cumsum(atoms * probs)])
            # flip to an increasing sequence so [lo, hi) maps to an index range
            increasing = atoms[-1] >= atoms[0]
            key = atoms if increasing else atoms[::-1]
            i_lo = np.searchsorted(key, lo, side="left")
            i_hi = np.searchsorted(key, hi, side="left")
            if increasing:
                a, b = i_lo, np.minimum(i_hi, count)
            else:
                m = len(atoms)
                a, b = m - i_hi, np.minimum(m - i_lo, count)
            b = np.maximum(a, b)
            out += prefix[b] - prefix[np.minimum(a, b)]
        return out


class BrownianDiscretized(Family):
    """Brownian motion sampled on a grid of step ``dt``; ``B^2 = t``."""

    name = "BrownianDiscretized"
    raw_kind = "normal"
    symmetric = True
    gaussian = True
    defaults = {"dt": 0.01}
    default_normalizer = "variance"

    def _validate(self):
        if not self.p["dt"] > 0:
            raise ParameterError("BrownianDiscretized needs dt > 0")

    def dt(self):
        return self.p["dt"]

    def advance(self, raw, state, n0):
        dt = self.p["dt"]
        d = math.sqrt(dt) * raw[..., 0]
        return {"d": d, "var": np.full_like(d, dt)}, state


class StoppedRademacher(Family):
    """Fair +-1 walk frozen at ``T = inf{n >= e^e : S_n >= sqrt(2 n log log n)}``.

    ``d_j = Y_j 1(T >= j)``; the stopping indicator is predictable so the
    increments stay conditionally symmetric.
    """

    name = "StoppedRademacher"
    symmetric = True
    step_extras = ("active",)

    @property
    def upper(self):
        return 1.0

    @property
    def lower(self):
        return 1.0

    def initial_state(self, R):
        return {"s": np.zeros(R), "stopped": np.zeros(R, dtype=bool)}

    def advance(self, raw, state, n0):
        T = raw.shape[1]
        y = np.where(raw[..., 0] < 0.5, 1.0, -1.0)
        s_free = np.cumsum(np.concatenate([state["s"][:, None], y], axis=1), axis=1)[:, 1:]
        n = np.arange(n0, n0 + T, dtype=float)
        eligible = n >= math.exp(math.e)
        level = np.zeros_like(n)
        level[eligible] = np.sqrt(2.0 * n[eligible] * np.log(np.log(n[eligible])))
        crossed = eligible & (s_free >= level)
        before = np.logical_or.accumulate(crossed, axis=1)
        stopped_before = state["stopped"][:, None] | _lagged(np.zeros(len(y), dtype=bool), before)
        active = (~stopped_before).astype(float)
        new_state = {"s": s_free[:, -1].copy(), "stopped": state["stopped"] | before[:, -1]}
        return {"d": y * active, "var": active, "active": active}, new_state


class TruncatedLemmaA8(Family):
    """Three-point variables ``y_n = s_n z_n`` for the truncated-mean supermartingale.

    ``z`` takes the values ``ATOMS`` with probabilities ``PROBS``; the scale
    ``s_n`` is ``s_lo`` when the previous uniform draw fell below 1/2.  The
    supermartingale is ``exp(sum(y_i - mu_i - y_i^2/lambda))`` with
    ``mu_i = E[y_i 1(-gamma <= y_i < lambda) | F_{i-1}]``; the lambda regime
    is ``0 < lambda <= 1/C_gamma``.
    """

    name = "TruncatedLemmaA8"
    mean_zero = False
    defaults = {"gamma": 0.5, "s_lo": 0.5, "s_hi": 1.0}
    default_normalizer = "a8"
    cumulative_extras = ("n_lo",)
    step_extras = ("scale",)
    ATOMS = np.array([-0.8, 0.3, 1.2])
    PROBS = np.array([0.3, 0.5, 0.2])

    def _validate(self):
        p = self.p
        if not 0 <= p["gamma"] < 1 or not 0 < p["s_lo"] <= p["s_hi"]:
            raise ParameterError("TruncatedLemmaA8 needs 0 <= gamma < 1 and 0 < s_lo <= s_hi")

    def _make_regime(self):
        if self.normalizer != "a8":
            raise ParameterError("TruncatedLemmaA8 only supports the 'a8' normalizer")
        return CanonicalRegime("Restricted", a8_lambda_max(self.p["gamma"]), closed=True)

    def check_lambda(self, lam):
        if not lam > 0:
            raise RegimeError(f"the truncation level lambda must be > 0, got {lam!r}")
        self.regime.check(lam)

    def initial_state(self, R):
        return {"u": np.ones(R)}

    def advance(self, raw, state, n0):
        u = raw[..., 0]
        is_lo = _lagged(state["u"], u) < 0.5
        s = np.where(is_lo, self.p["s_lo"], self.p["s_hi"])
        cdf = np.cumsum(self.PROBS)
        z = self.ATOMS[np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)]
        y = s * z
        var = s ** 2 * (float(self.PROBS @ self.ATOMS ** 2) - float(self.PROBS @ self.ATOMS) ** 2)
        steps = {"d": y, "var": var, "n_lo": is_lo.astype(float), "scale": s}
        return steps, {"u": u[:, -1].copy()}

    def truncated_mean(self, scale: float, lam: float) -> float:
        y = scale * self.ATOMS
        inside = (y >= -self.p["gamma"]) & (y < lam)
        return float(np.sum(self.PROBS * y * inside))

    def b_squared(self, arrs, lam=0.0):
        return arrs["sq"]

    def log_value(self, arrs, lam):
        n = np.asarray(arrs["n"], dtype=float)
        n_lo = arrs["n_lo"]
        mu = n_lo * self.truncated_mean(self.p["s_lo"], lam) + (n - n_lo) * self.truncated_mean(self.p["s_hi"], lam)
        return arrs["a"] - mu - arrs["sq"] / lam


FAMILIES = {
    cls.name: cls
    for cls in (
        Rademacher,
        ConditionallySymmetric,
        AR1,
        BoundedAboveMartingale,
        BernsteinMartingale,
        Example31,
        BrownianDiscretized,
        TruncatedLemmaA8,
        StoppedRademacher,
    )
}


@dataclass(frozen=True)
class GeneratorSpec:
    """A generator family, its parameters and the path horizon.

    >>> GeneratorSpec("AR1", {"alpha": 0.5}, horizon=200).to_dict()
    {'family': 'AR1', 'params': {'alpha': 0.5}, 'horizon': 200}
    """

    family: str
    params: Mapping = field(default_factory=dict)
    horizon: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown generator family {self.family!r}; expected one of {sorted(FAMILIES)}")
        if isinstance(self.horizon, bool) or int(self.horizon) != self.horizon:
            raise ParameterError(f"horizon must be an integer, got {self.horizon!r}")
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "params", dict(sorted(dict(self.params).items())))
        fam = self.build()
        if self.horizon < max(1, fam.min_horizon):
            raise ParameterError(
                f"{self.family} needs horizon >= {max(1, fam.min_horizon)}, got {self.horizon}"
            )

    def build(self) -> Family:
        return FAMILIES[self.family](self.params)

    @property
    def regime(self) -> CanonicalRegime:
        return self.build().regime

    def with_horizon(self, horizon: int) -> "GeneratorSpec":
        return GeneratorSpec(self.family, self.params, horizon)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params), "horizon": self.horizon}

    @classmethod
    def from_dict(cls, data: Mapping) -> "GeneratorSpec":
        unknown = set(data) - {"family", "params", "horizon"}
        if unknown:
            raise ParameterError(f"unknown generator fields {sorted(unknown)}")
        return cls(data["family"], data.get("params", {}), data.get("horizon", 1))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GeneratorSpec":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# streaming generation
# --------------------------------------------------------------------------


@dataclass
class Chunk:
    """Running sums for ``R`` replications over steps ``n[0] .. n[-1]``."""

    n: np.ndarray
    arrays: dict

    def __getitem__(self, key):
        return self.arrays[key]

    def column(self, step: int) -> dict:
        j = int(step - self.n[0])
        out = {k: v[:, j] for k, v in self.arrays.items()}
        out["n"] = float(step)
        return out


def iter_chunks(
    family: Family,
    rngs: Sequence[np.random.Generator],
    horizon: int,
    chunk_size: int = DEFAULT_CHUNK,
) -> Iterator[Chunk]:
    """Yield running sums for every replication, ``chunk_size`` steps at a time.

    Memory stays ``O(len(rngs) * chunk_size)`` whatever the horizon.  Each
    replication draws from its own generator, in step order, so the result
    does not depend on how replications are grouped.
    """
    R = len(rngs)
    state = family.initial_state(R)
    cum_keys = {"a": "d", "sq": None, "cv": "var", **{k: k for k in family.cumulative_extras}}
    carry = {k: np.zeros(R) for k in cum_keys}
    for start in range(0, horizon, chunk_size):
        T = min(chunk_size, horizon - start)
        raw = np.stack([family.raw(g, T) for g in rngs])
        steps, state = family.advance(raw, state, start + 1)
        d = steps["d"]
        sources = {"a": d, "sq": d * d, "cv": steps["var"], **{k: steps[k] for k in family.cumulative_extras}}
        arrays = {"d": d}
        for key, src in sources.items():
            running = np.cumsum(np.concatenate([carry[key][:, None], src], axis=1), axis=1)[:, 1:]
            arrays[key] = running
            carry[key] = running[:, -1].copy()
        for key in family.step_extras:
            arrays[key] = steps[key]
        yield Chunk(np.arange(start + 1, start + T + 1), arrays)


@dataclass(frozen=True)
class ProcessPath:
    """One trajectory of ``(A_n, B_n^2)`` with ``A_0 = B_0 = 0``.

    ``b_squared`` holds the family normalizer's ``B^2`` (its lambda -> 0 value
    for the lambda-dependent Bernstein normalizer).  ``sum_squares`` and
    ``cond_var`` keep both candidate normalizations available.  Arrays are
    read-only.
    """

    times: np.ndarray
    a_values: np.ndarray
    b_squared: np.ndarray
    increments: np.ndarray
    sum_squares: np.ndarray
    cond_var: np.ndarray
    regime: CanonicalRegime
    meta: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    family: Family | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for name in ("times", "a_values", "b_squared", "increments", "sum_squares", "cond_var"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not len(self.times) == len(self.a_values) == len(self.b_squared):
            raise ParameterError("times, a_values and b_squared must have equal length")

    @property
    def b_values(self) -> np.ndarray:
        return np.sqrt(self.b_squared)

    @property
    def horizon(self) -> int:
        return len(self.times) - 1

    def arrays_at(self, n) -> dict:
        """Running sums at step(s) ``n`` in the layout normalizers consume."""
        out = {"a": self.a_values[n], "sq": self.sum_squares[n], "cv": self.cond_var[n], "n": np.asarray(n, dtype=float)}
        for key in getattr(self.family, "cumulative_extras", ()):
            out[key] = self.extras[key][n]
        return out

    @classmethod
    def from_increments(cls, increments, cond_var=None, regime: CanonicalRegime | None = None, dt: float = 1.0):
        """Path with ``A = cumsum(d)`` and ``B^2 = cumsum(d^2)``.

        ``cond_var`` optionally supplies the per-step conditional variances.
        The regime defaults to all real lambda, i.e. the caller vouches for
        conditionally symmetric increments.
        """
        d = np.asarray(increments, dtype=float)
        var = np.full_like(d, np.nan) if cond_var is None else np.asarray(cond_var, dtype=float)
        if var.shape != d.shape:
            raise ParameterError("cond_var must match the increments in length")
        fam = _ScriptedFamily(regime or CanonicalRegime("AllReal"))
        zero = np.zeros(1)
        sq = np.concatenate([zero, np.cumsum(d * d)])
        return cls(
            times=np.arange(len(d) + 1) * dt,
            a_values=np.concatenate([zero, np.cumsum(d)]),
            b_squared=sq,
            increments=np.concatenate([zero, d]),
            sum_squares=sq,
            cond_var=np.concatenate([zero, np.cumsum(var)]),
            regime=fam.regime,
            meta={"family": "Scripted", "params": {}},
            family=fam,
        )

    def to_csv(self, fh=None) -> str | None:
        """Write columns ``n, A, B, d``; returns the text when ``fh`` is None."""
        buf = io.StringIO() if fh is None else fh
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["n", "A", "B", "d"])
        for i in range(len(self.times)):
            writer.writerow([i, repr(float(self.a_values[i])), repr(float(self.b_values[i])), repr(float(self.increments[i]))])
        return buf.getvalue() if fh is None else None


class _ScriptedFamily(Family):
    name = "Scripted"
    symmetric = True

    def __init__(self, regime):
        self.normalizer = "squares"
        self.norm_params = {}
        self.p = {}
        self.regime = regime


def generate_path(spec: GeneratorSpec, rng_stream: np.random.Generator | int, replication: int = 0) -> ProcessPath:
    """Generate one path of ``spec``.

    ``rng_stream`` is either a generator or a master seed; with a seed the
    path is replication ``replication`` of that seed's campaign.
    """
    if not isinstance(rng_stream, np.random.Generator):
        rng_stream = substream(rng_stream, replication)
    fam = spec.build()
    parts = list(iter_chunks(fam, [rng_stream], spec.horizon, chunk_size=DEFAULT_CHUNK))

    def series(key):
        return np.concatenate([np.zeros(1)] + [c[key][0] for c in parts])

    arrs = {k: series(k) for k in ("a", "sq", "cv", *fam.cumulative_extras)}
    arrs["n"] = np.arange(spec.horizon + 1, dtype=float)
    extras = {k: series(k) for k in (*fam.cumulative_extras, *fam.step_extras)}
    return ProcessPath(
        times=np.arange(spec.horizon + 1) * fam.dt(),
        a_values=arrs["a"],
        b_squared=fam.b_squared(arrs, 0.0),
        increments=series("d"),
        sum_squares=arrs["sq"],
        cond_var=arrs["cv"],
        regime=fam.regime,
        meta={"family": spec.family, "params": dict(spec.params), "normalizer": fam.normalizer},
        extras=extras,
        family=fam,
    )


# --------------------------------------------------------------------------
# supermartingale values
# --------------------------------------------------------------------------


def log_supermartingale(path: ProcessPath, lam: float, n: int | None = None) -> float:
    """``log`` of the exponential supermartingale of ``path`` at step ``n``."""
    n = path.horizon if n is None else int(n)
    if not 0 <= n <= path.horizon:
        raise ParameterError(f"step {n} outside 0..{path.horizon}")
    path.family.check_lambda(lam)
    return float(path.family.log_value(path.arrays_at(n), float(lam)))


def exp_supermartingale_value(path: ProcessPath, lam: float, n: int | None = None, log_cap: float = LOG_CAP) -> float:
    """``exp(lambda*A_n - lambda^2*B_n^2/2)`` evaluated in log space.

    A log value above ``log_cap`` raises a :class:`LogCapWarning`; the value
    itself is returned unclamped (``inf`` once it overflows).
    """
    lv = log_supermartingale(path, lam, n)
    if lv > log_cap:
        warnings.warn(f"log supermartingale value {lv:.6g} exceeds cap {log_cap}", LogCapWarning, stacklevel=2)
    return math.exp(lv) if lv < 709.78 else math.inf


def stout_b_squared(path: ProcessPath, lambda0: float, m_bound: float) -> np.ndarray:
    """``(1 + lambda0*M/2) * sum E(d_i^2 | F_{i-1})`` for every step."""
    if not m_bound > 0:
        raise ParameterError(f"M must be positive, got {m_bound}")
    if not 0 < lambda0 <= 1.0 / m_bound:
        raise ParameterError(f"need 0 < lambda0 <= 1/M = {1.0 / m_bound!r}, got {lambda0!r}")
    upper = getattr(path.family, "upper", None)
    if upper is not None and upper > m_bound:
        raise ParameterError(f"increments are bounded by {upper}, not by M = {m_bound}")
    if np.any(path.increments > m_bound):
        raise ParameterError(f"an increment exceeds M = {m_bound}")
    return (1.0 + 0.5 * lambda0 * m_bound) * path.cond_var


def bernstein_supermartingale_value(path: ProcessPath, lam: float, M: float, n: int | None = None) -> float:
    """``exp(lambda*A_n - lambda^2 V_n^2 / (2(1 - M*lambda)))`` for ``0 <= lambda < 1/M``."""
    if not M > 0:
        raise ParameterError(f"M must be positive, got {M}")
    if not 0 <= lam < 1.0 / M:
        raise RegimeError(f"Bernstein regime violated: need 0 <= lambda < 1/M = {1.0 / M!r}, got {lam!r}")
    n = path.horizon if n is None else int(n)
    a, v2 = path.a_values[n], path.cond_var[n]
    return math.exp(lam * a - lam * lam * v2 / (2.0 * (1.0 - M * lam)))


def lemma_a7_b_squared(path: ProcessPath, gamma: float, M: float) -> np.ndarray:
    """``2 C_gamma sum d_i^2`` for increments bounded below by ``-M``."""
    if not M > 0:
        raise ParameterError(f"M must be positive, got {M}")
    cg = c_gamma(gamma)
    if np.any(path.increments < -M):
        raise ParameterError(f"an increment lies below -M = {-M}")
    return 2.0 * cg * path.sum_squares


def _truncated_mean(atoms, probs, lo, hi):
    atoms = np.asarray(atoms, dtype=float)
    probs = np.asarray(probs, dtype=float)
    return float(np.sum(probs * atoms * ((atoms >= lo) & (atoms < hi))))


def lemma_a8_value(y, gamma_seq, lambda_seq, conditional_law) -> float:
    """``exp(sum(y_i - mu_i - y_i^2/lambda_i))`` with exact truncated means.

    Parameters
    ----------
    y : sequence of float
        Observed values ``y_1..y_n``.
    gamma_seq, lambda_seq : float or sequence of float
        Predictable truncation levels with ``0 <= gamma_i < 1`` and
        ``0 < lambda_i <= 1/C_{gamma_i}``.
    conditional_law : (atoms, probs) or sequence of them, or callable
        The conditional law of each ``y_i``.  A callable is called as
        ``conditional_law(i, lo, hi)`` and must return ``mu_i``.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    gammas = np.broadcast_to(np.asarray(gamma_seq, dtype=float), (n,))
    lams = np.broadcast_to(np.asarray(lambda_seq, dtype=float), (n,))
    total = 0.0
    for i in range(n):
        g, lam = float(gammas[i]), float(lams[i])
        if not 0 < lam <= a8_lambda_max(g) * (1 + 1e-12):
            raise RegimeError(f"step {i}: need 0 < lambda <= 1/C_gamma = {a8_lambda_max(g)!r}, got {lam!r}")
        if callable(conditional_law):
            mu = float(conditional_law(i, -g, lam))
        else:
            law = conditional_law if _is_single_law(conditional_law) else conditional_law[i]
            mu = _truncated_mean(law[0], law[1], -g, lam)
        total += y[i] - mu - y[i] ** 2 / lam
    return math.exp(total)


def _is_single_law(law) -> bool:
    first = law[0]
    return np.ndim(first) == 1 and len(first) > 0 and np.isscalar(first[0])
