"""Determinant boundaries for vector martingales.

For increments ``d_i`` in R^k with ``Q_n = sum d_i`` and ``C_n = sum d_i d_i'``
the statistic ``Q_n'(V + C_n)^{-1} Q_n`` is compared with
``log det(V + C_n) + 2 log a - log det V``.  Gaussian mixing over a
``N(0, V^{-1})`` direction shows that the crossing probability is at most
``1/a``, with equality for continuous martingales when ``C`` is the
quadratic variation ``t I`` of a standard Brownian motion.

All solves and log-determinants go through a Cholesky factor.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .exceptions import NumericalError, ParameterError
from .montecarlo import DEFAULT_CONFIDENCE, BoundReport, make_report, z_value
from .processes import GeneratorSpec, substream

MV_TAG = 3
SYM_RTOL = 1e-12
RANK1_CHECK_EVERY = 1000
RANK1_RTOL = 1e-8
MV_FAMILIES = ("Rademacher", "BrownianDiscretized")
_BLOCK_ELEMENTS = 1 << 19
_CHUNK = 256


def check_psd(V) -> np.ndarray:
    """Validate a symmetric positive definite matrix and return it as an array."""
    V = np.array(V, dtype=float)
    if V.ndim == 0:
        V = V.reshape(1, 1)
    if V.ndim != 2 or V.shape[0] != V.shape[1] or V.shape[0] == 0:
        raise ParameterError(f"V must be a square matrix, got shape {V.shape}")
    if not np.all(np.isfinite(V)):
        raise ParameterError("V has non-finite entries")
    scale = max(float(np.abs(V).max()), np.finfo(float).tiny)
    if np.abs(V - V.T).max() > SYM_RTOL * scale:
        raise ParameterError("V is not symmetric")
    try:
        np.linalg.cholesky(V)
    except np.linalg.LinAlgError as exc:
        raise ParameterError("V is not positive definite") from exc
    return 0.5 * (V + V.T)


def parse_matrix(text: str, k: int) -> np.ndarray:
    """``identity``, ``c*identity``, a scalar, or rows ``a,b;c,d``."""
    text = text.strip()
    if text == "identity":
        return np.eye(k)
    if text.endswith("*identity"):
        return float(text[: -len("*identity")]) * np.eye(k)
    try:
        rows = [[float(x) for x in row.split(",")] for row in text.split(";")]
    except ValueError as exc:
        raise ParameterError(f"cannot parse matrix {text!r}") from exc
    M = np.array(rows)
    if M.size == 1:
        M = M.item() * np.eye(k)
    if M.shape != (k, k):
        raise ParameterError(f"matrix shape {M.shape} does not match k = {k}")
    return check_psd(M)


@dataclass(frozen=True)
class MvPathState:
    """Running sum ``q``, running Gram matrix ``c`` and step count ``n``."""

    q: np.ndarray
    c: np.ndarray
    n: int = 0

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1)
        c = np.array(self.c, dtype=float)
        if c.shape != (q.size, q.size):
            raise ParameterError("Gram matrix shape does not match the sum")
        if np.abs(c - c.T).max(initial=0.0) > SYM_RTOL * max(1.0, np.abs(c).max(initial=0.0)):
            raise ParameterError("Gram matrix is not symmetric")
        q.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "c", c)

    @property
    def k(self) -> int:
        return self.q.size

    @classmethod
    def empty(cls, k: int) -> "MvPathState":
        return cls(np.zeros(k), np.zeros((k, k)), 0)

    @classmethod
    def from_increments(cls, d) -> "MvPathState":
        d = np.atleast_2d(np.asarray(d, dtype=float))
        return cls(d.sum(axis=0), d.T @ d, d.shape[0])

    def update(self, d) -> "MvPathState":
        d = np.asarray(d, dtype=float).reshape(-1)
        if d.size != self.k:
            raise ParameterError(f"increment has dimension {d.size}, expected {self.k}")
        return MvPathState(self.q + d, self.c + np.outer(d, d), self.n + 1)


def _factor(S: np.ndarray):
    try:
        return linalg.cho_factor(S, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise NumericalError("V + C is numerically singular") from exc


def _logdet(cf) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(cf[0]))))


def mv_statistic(state: MvPathState, V) -> float:
    """``Q'(V + C)^{-1} Q`` by a Cholesky solve."""
    V = check_psd(V)
    _check_dims(state, V)
    cf = _factor(V + state.c)
    return float(state.q @ linalg.cho_solve(cf, state.q))


def mv_threshold(state: MvPathState, V, a: float) -> float:
    """``log det(V + C) + 2 log a - log det V``."""
    if not a > 1:
        raise ParameterError(f"a must exceed 1, got {a!r}")
    V = check_psd(V)
    _check_dims(state, V)
    return _logdet(_factor(V + state.c)) + 2.0 * math.log(a) - _logdet(_factor(V))


def mv_crossed(state: MvPathState, V, a: float) -> bool:
    return mv_statistic(state, V) >= mv_threshold(state, V, a)


def mixture_martingale(state: MvPathState, V) -> float:
    """``sqrt(det V / det(V + C)) exp(Q'(V + C)^{-1} Q / 2)``; crosses ``a`` exactly when the statistic crosses its threshold."""
    V = check_psd(V)
    _check_dims(state, V)
    cf = _factor(V + state.c)
    stat = float(state.q @ linalg.cho_solve(cf, state.q))
    return math.exp(0.5 * (_logdet(_factor(V)) - _logdet(cf) + stat))


def _check_dims(state, V):
    if V.shape[0] != state.k:
        raise ParameterError(f"V is {V.shape[0]}x{V.shape[0]} but the state has dimension {state.k}")


# --------------------------------------------------------------------------
# batched kernels
# --------------------------------------------------------------------------


def batched_statistic(q: np.ndarray, S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Statistic and ``log det S`` for stacks ``q (R, k)``, ``S (R, k, k)``."""
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("V + C is numerically singular") from exc
    return _solve_from_factor(L, q)


def _solve_from_factor(L: np.ndarray, q: np.ndarray):
    k = q.shape[1]
    y = np.empty_like(q)
    for i in range(k):
        acc = q[:, i] - np.einsum("rj,rj->r", L[:, i, :i], y[:, :i]) if i else q[:, i]
        y[:, i] = acc / L[:, i, i]
    diag = np.diagonal(L, axis1=1, axis2=2)
    return np.einsum("rk,rk->r", y, y), 2.0 * np.log(diag).sum(axis=1)


def cholesky_rank1_update(L: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Lower factor of ``L L' + x x'`` for stacks ``L (R, k, k)``, ``x (R, k)``."""
    L = L.copy()
    x = x.copy()
    k = x.shape[1]
    for j in range(k):
        ljj = L[:, j, j]
        r = np.hypot(ljj, x[:, j])
        c = r / ljj
        s = x[:, j] / ljj
        L[:, j, j] = r
        if j + 1 < k:
            L[:, j + 1 :, j] = (L[:, j + 1 :, j] + s[:, None] * x[:, j + 1 :]) / c[:, None]
            x[:, j + 1 :] = c[:, None] * x[:, j + 1 :] - s[:, None] * L[:, j + 1 :, j]
    return L


@dataclass(frozen=True)
class MvSimulation:
    """Per-replication outcomes of a determinant-boundary run.

    ``max_excess[s]`` holds ``max_n (statistic - log det(V+C_n) + log det V)``
    when monitoring every ``strides[s]``-th step; the crossing of level
    ``a`` is ``max_excess >= 2 log a``.  ``final_log_z`` is the log of the
    mixture martingale at the horizon.
    """

    strides: tuple
    max_excess: np.ndarray
    final_log_z: np.ndarray
    replications: int
    horizon: int
    seed: int
    family: str
    quadratic_variation: bool
    dt: float
    rank1_max_rel_err: float | None = None
    meta: dict = field(default_factory=dict)

    def crossed(self, a: float, stride: int = 1) -> np.ndarray:
        return self.max_excess[self.strides.index(stride)] >= 2.0 * math.log(a)

    def frequency(self, a: float, stride: int = 1) -> float:
        return float(np.count_nonzero(self.crossed(a, stride))) / self.replications

    def tail_corrected(self, a: float, stride: int = 1) -> np.ndarray:
        """Crossing indicator, with ``Z_T / a`` on paths that have not yet crossed.

        For a continuous mixture martingale ``Z`` with ``Z_T < a`` the
        conditional probability of reaching ``a`` after ``T`` is ``Z_T / a``.
        """
        hit = self.crossed(a, stride)
        tail = np.exp(np.minimum(self.final_log_z - math.log(a), 0.0))
        return np.where(hit, 1.0, tail)


def _draw(family: str, rng: np.random.Generator, T: int, k: int, dt: float) -> np.ndarray:
    if family == "Rademacher":
        return np.where(rng.random((T, k)) < 0.5, -1.0, 1.0)
    return math.sqrt(dt) * rng.standard_normal((T, k))


def _resolve_spec(spec) -> tuple[str, float]:
    if isinstance(spec, str):
        spec = GeneratorSpec(spec, {}, 1)
    if spec.family not in MV_FAMILIES:
        raise ParameterError(f"multivariate runs support {MV_FAMILIES}, got {spec.family!r}")
    dt = float(spec.params.get("dt", 0.01)) if spec.family == "BrownianDiscretized" else 1.0
    if not dt > 0:
        raise ParameterError("dt must be positive")
    return spec.family, dt


def simulate_mv(spec, V, horizon: int, reps: int, seed: int, strides=(1,), update: str = "scratch", quadratic_variation: bool | None = None) -> MvSimulation:
    """Simulate ``reps`` paths of k-dimensional increments and record excesses.

    ``spec`` names the coordinate law: independent fair signs
    (``Rademacher``) or Brownian increments over ``dt``
    (``BrownianDiscretized``).  With ``quadratic_variation`` (the default
    for Brownian paths) ``C_t = t I`` replaces the sum of outer products.
    ``update="rank1"`` maintains the factor of ``V + C_n`` by rank-one
    updates, checked against a fresh factorization every 1000 steps.
    """
    family, dt = _resolve_spec(spec)
    V = check_psd(V)
    k = V.shape[0]
    horizon, reps = int(horizon), int(reps)
    if horizon < 1 or reps < 1:
        raise ParameterError("horizon and reps must be positive")
    strides = tuple(int(s) for s in strides)
    if any(s < 1 or horizon % s for s in strides):
        raise ParameterError("strides must be positive divisors of the horizon")
    if update not in ("scratch", "rank1"):
        raise ParameterError("update must be 'scratch' or 'rank1'")
    qv = (family == "BrownianDiscretized") if quadratic_variation is None else bool(quadratic_variation)
    if qv and update == "rank1":
        raise ParameterError("rank-one updates apply to the outer-product Gram matrix only")
    logdet_v = 2.0 * float(np.sum(np.log(np.diag(np.linalg.cholesky(V)))))
    if qv:
        evals, evecs = np.linalg.eigh(V)
    block = max(1, _BLOCK_ELEMENTS // (min(horizon, _CHUNK) * k))
    max_ex = np.full((len(strides), reps), -np.inf)
    final = np.empty(reps)
    worst = 0.0
    for start in range(0, reps, block):
        stop = min(start + block, reps)
        m = stop - start
        rngs = [substream(seed, r, tag=MV_TAG) for r in range(start, stop)]
        q = np.zeros((m, k))
        c = np.zeros((m, k, k))
        L = np.broadcast_to(np.linalg.cholesky(V), (m, k, k)).copy() if update == "rank1" else None
        n = 0
        while n < horizon:
            T = min(_CHUNK, horizon - n)
            d = np.stack([_draw(family, g, T, k, dt) for g in rngs])
            for j in range(T):
                n += 1
                dj = d[:, j, :]
                q += dj
                if qv:
                    # V + tI is diagonal in the eigenbasis of V
                    lam = evals + n * dt
                    w = q @ evecs
                    stat = np.einsum("rk,rk->r", w, w / lam)
                    logdet = float(np.sum(np.log(lam)))
                else:
                    c += dj[:, :, None] * dj[:, None, :]
                    if update == "rank1":
                        L = cholesky_rank1_update(L, dj)
                        stat, logdet = _solve_from_factor(L, q)
                        if n % RANK1_CHECK_EVERY == 0 or n == horizon:
                            fresh = np.linalg.cholesky(V + c)
                            err = float(np.abs(fresh - L).max() / np.abs(fresh).max())
                            worst = max(worst, err)
                            if err > RANK1_RTOL:
                                raise NumericalError(f"rank-one factor drifted by {err:.3g}", achieved=err)
                    else:
                        stat, logdet = batched_statistic(q, V + c)
                excess = stat - logdet + logdet_v
                for s_i, s in enumerate(strides):
                    if n % s == 0:
                        np.maximum(max_ex[s_i, start:stop], excess, out=max_ex[s_i, start:stop])
        final[start:stop] = 0.5 * excess
    return MvSimulation(
        strides=strides,
        max_excess=max_ex,
        final_log_z=final,
        replications=reps,
        horizon=horizon,
        seed=int(seed),
        family=family,
        quadratic_variation=qv,
        dt=dt,
        rank1_max_rel_err=worst if update == "rank1" else None,
        meta={"k": k, "update": update},
    )


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    mean = math.fsum(x.tolist()) / x.size
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    return mean, sd / math.sqrt(x.size)


def richardson_slack(coarse: float, fine: float, order: float = 0.5) -> tuple[float, float]:
    """Extrapolate ``p(dt) = p + c dt^order`` from steps ``2dt`` and ``dt``.

    Returns ``(extrapolated, slack)`` where ``slack = |fine - extrapolated|``
    is the estimated remaining discretization bias at the fine step.
    """
    r = 2.0 ** order
    p = (r * fine - coarse) / (r - 1.0)
    return p, abs(fine - p)


def run_hash(sim: MvSimulation, V) -> str:
    """SHA-256 of the canonical JSON describing a simulation's inputs."""
    data = {
        "family": sim.family,
        "dt": sim.dt,
        "V": np.asarray(V, dtype=float).tolist(),
        "horizon": sim.horizon,
        "replications": sim.replications,
        "seed": sim.seed,
        "strides": list(sim.strides),
        "update": sim.meta["update"],
        "quadratic_variation": sim.quadratic_variation,
    }
    return hashlib.sha256(json.dumps(data, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def report_from_simulation(sim: MvSimulation, V, a: float, confidence: float = DEFAULT_CONFIDENCE) -> BoundReport:
    """BoundReport for level ``a`` from a finished simulation.

    The estimate is the crossing frequency up to the horizon.  For Brownian
    paths with quadratic variation ``t I`` the extras also carry the
    tail-corrected estimate, the equality gap ``|estimate - 1/a|`` and a
    Richardson slack from the stride-2 monitoring of the same paths; the
    equality verdict accepts gaps within ``z*SE + slack``.
    """
    if not a > 1:
        raise ParameterError(f"a must exceed 1, got {a!r}")
    k = sim.meta["k"]
    hits = int(np.count_nonzero(sim.crossed(a)))
    provenance = {
        "event": "determinant boundary crossing",
        "family": sim.family,
        "k": k,
        "a": a,
        "V": np.asarray(V, dtype=float).tolist(),
        "quadratic_variation": sim.quadratic_variation,
        "dt": sim.dt,
    }
    extras = {"update": sim.meta["update"]}
    if sim.rank1_max_rel_err is not None:
        extras["rank1_max_rel_err"] = sim.rank1_max_rel_err
    if sim.quadratic_variation:
        z = z_value(confidence)
        est, se = _mean_se(sim.tail_corrected(a))
        extras.update({"tail_corrected": est, "tail_corrected_se": se, "equality_gap": abs(est - 1.0 / a)})
        if 2 in sim.strides:
            coarse, _ = _mean_se(sim.tail_corrected(a, 2))
            p, slack = richardson_slack(coarse, est)
            extras.update({"coarse_tail_corrected": coarse, "extrapolated": p, "discretization_slack": slack})
            extras["equality_verdict"] = "PASS" if abs(est - 1.0 / a) <= z * se + slack else "FAIL"
    return make_report(1.0 / a, hits, sim.replications, sim.horizon, sim.seed, confidence, provenance, horizon_truncated=True, config_hash=run_hash(sim, V), extras=extras)


def mv_crossing_probability(spec, V, a, horizon: int, reps: int, seed: int, update: str = "scratch", confidence: float = DEFAULT_CONFIDENCE):
    """Certify ``P(statistic >= threshold for some n <= horizon) <= 1/a``.

    ``a`` may be a number or a sequence; several levels share the same
    simulated paths and a list of reports is returned.
    """
    family, _ = _resolve_spec(spec)
    levels = [float(x) for x in np.atleast_1d(a)]
    if any(not x > 1 for x in levels):
        raise ParameterError("every a must exceed 1")
    strides = (1, 2) if family == "BrownianDiscretized" and int(horizon) % 2 == 0 else (1,)
    sim = simulate_mv(spec, V, horizon, reps, seed, strides=strides, update=update)
    reports = [report_from_simulation(sim, V, x, confidence) for x in levels]
    return reports if np.ndim(a) else reports[0]


@dataclass(frozen=True)
class DiscretizationStudy:
    """Equality gaps of the Brownian determinant boundary at successive step halvings."""

    a: float
    k: int
    total_time: float
    dts: tuple
    estimates: tuple
    ses: tuple
    gaps: tuple
    shrink_ratios: tuple
    replications: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "a": self.a,
            "k": self.k,
            "total_time": self.total_time,
            "dts": list(self.dts),
            "estimates": list(self.estimates),
            "ses": list(self.ses),
            "gaps": list(self.gaps),
            "shrink_ratios": list(self.shrink_ratios),
            "replications": self.replications,
            "seed": self.seed,
        }


def discretization_study(V, a: float, total_time: float, finest_steps: int, levels: int, reps: int, seed: int) -> DiscretizationStudy:
    """Simulate Brownian paths once on the finest grid and monitor them on
    coarser sub-grids, so every step size sees the same paths.

    Returns the tail-corrected crossing estimates and their gaps to ``1/a``
    from the coarsest to the finest step.
    """
    if finest_steps % (2 ** (levels - 1)):
        raise ParameterError("finest_steps must be divisible by 2^(levels-1)")
    V = check_psd(V)
    dt = total_time / finest_steps
    strides = tuple(2 ** i for i in range(levels - 1, -1, -1))
    spec = GeneratorSpec("BrownianDiscretized", {"dt": dt}, finest_steps)
    sim = simulate_mv(spec, V, finest_steps, reps, seed, strides=strides)
    est, ses = [], []
    for s in strides:
        m, se = _mean_se(sim.tail_corrected(a, s))
        est.append(m)
        ses.append(se)
    gaps = [abs(e - 1.0 / a) for e in est]
    ratios = [gaps[i] / gaps[i + 1] if gaps[i + 1] > 0 else math.inf for i in range(len(gaps) - 1)]
    return DiscretizationStudy(
        a=a,
        k=V.shape[0],
        total_time=total_time,
        dts=tuple(dt * s for s in strides),
        estimates=tuple(est),
        ses=tuple(ses),
        gaps=tuple(gaps),
        shrink_ratios=tuple(ratios),
        replications=reps,
        seed=int(seed),
    )
