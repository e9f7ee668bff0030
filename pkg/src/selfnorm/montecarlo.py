"""Seeded Monte Carlo certification of tail bounds and supermartingale means.

Replication ``r`` of a run always draws from ``substream(master_seed, r)``;
replications are processed in fixed-size blocks whose size depends only on
the horizon, and per-replication outcomes are concatenated in replication
order.  Reports are therefore bit-identical whatever the number of worker
processes.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import special, stats

from . import bounds
from .bounds import EventSpec
from .exceptions import LogCapWarning, ParameterError
from .mixtures import Boundary, MixingMeasure, crossing_bound, measure_from_dict
from .processes import LOG_CAP, Family, GeneratorSpec, iter_chunks, substream

DEFAULT_CONFIDENCE = 0.9973
BLOCK_ELEMENTS = 1 << 20
MAX_CHUNK = 1024
MIN_CERTIFICATION_REPS = 1000
HEAVY_TAIL_SHARE = 0.10
EB_PREPASS_REPS = 1_000_000
EB_TAG = 1


def z_value(confidence: float) -> float:
    """Two-sided normal quantile for ``confidence`` (3.0 for 0.9973)."""
    if not 0 < confidence < 1:
        raise ParameterError(f"confidence must lie in (0, 1), got {confidence!r}")
    return float(special.ndtri(0.5 + 0.5 * confidence))


def wilson_interval(successes: int, trials: int, confidence: float = DEFAULT_CONFIDENCE) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ParameterError("need at least one trial")
    ci = stats.binomtest(int(successes), int(trials)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def block_layout(replications: int, horizon: int) -> tuple[int, int]:
    """``(block_size, chunk_size)``; depends only on the horizon."""
    chunk = min(int(horizon), MAX_CHUNK)
    block = max(1, BLOCK_ELEMENTS // chunk)
    return block, chunk


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


@dataclass(frozen=True)
class SimulationConfig:
    """A seeded Monte Carlo run.

    ``mode`` is ``"event"`` (estimate the probability of ``event``) or
    ``"supermartingale"`` (mean of the exponential supermartingale at each
    ``lambda`` in ``lambda_grid`` and each checkpoint).
    """

    generator: GeneratorSpec
    replications: int
    horizon: int
    master_seed: int = 0
    event: EventSpec | None = None
    confidence: float = DEFAULT_CONFIDENCE
    checkpoints: tuple = ()
    lambda_grid: tuple = ()
    mode: str = "event"

    def __post_init__(self):
        if self.mode not in ("event", "supermartingale"):
            raise ParameterError(f"mode must be 'event' or 'supermartingale', got {self.mode!r}")
        if int(self.replications) != self.replications or self.replications < 0:
            raise ParameterError(f"replications must be a nonnegative integer, got {self.replications!r}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ParameterError(f"horizon must be a positive integer, got {self.horizon!r}")
        if int(self.master_seed) != self.master_seed or not 0 <= self.master_seed < 2 ** 64:
            raise ParameterError(f"master_seed must be a 64-bit nonnegative integer, got {self.master_seed!r}")
        if not 0 < self.confidence < 1:
            raise ParameterError(f"confidence must lie in (0, 1), got {self.confidence!r}")
        object.__setattr__(self, "replications", int(self.replications))
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "master_seed", int(self.master_seed))
        object.__setattr__(self, "generator", self.generator.with_horizon(self.horizon))
        cps = tuple(int(c) for c in self.checkpoints)
        if any(not 1 <= c <= self.horizon for c in cps):
            raise ParameterError(f"checkpoints must lie in 1..{self.horizon}")
        object.__setattr__(self, "checkpoints", cps)
        object.__setattr__(self, "lambda_grid", tuple(float(x) for x in self.lambda_grid))
        if self.mode == "event":
            if self.event is None:
                raise ParameterError("event mode needs an event")
            if self.event.n > self.horizon:
                raise ParameterError(f"event horizon {self.event.n} exceeds the run horizon {self.horizon}")
        elif not (self.checkpoints and self.lambda_grid):
            raise ParameterError("supermartingale mode needs checkpoints and a lambda grid")
        if 0 < self.replications < MIN_CERTIFICATION_REPS:
            warnings.warn(f"{self.replications} replications is below the {MIN_CERTIFICATION_REPS} recommended for certification", stacklevel=2)

    def to_dict(self) -> dict:
        return {
            "generator": self.generator.to_dict(),
            "replications": self.replications,
            "horizon": self.horizon,
            "master_seed": self.master_seed,
            "event": None if self.event is None else self.event.to_dict(),
            "confidence": self.confidence,
            "checkpoints": list(self.checkpoints),
            "lambda_grid": list(self.lambda_grid),
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SimulationConfig":
        known = {"generator", "replications", "horizon", "master_seed", "event", "confidence", "checkpoints", "lambda_grid", "mode"}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown config fields {sorted(unknown)}")
        try:
            return cls(
                generator=GeneratorSpec.from_dict(data["generator"]),
                replications=data["replications"],
                horizon=data["horizon"],
                master_seed=data.get("master_seed", 0),
                event=None if data.get("event") is None else EventSpec.from_dict(data["event"]),
                confidence=data.get("confidence", DEFAULT_CONFIDENCE),
                checkpoints=tuple(data.get("checkpoints", ())),
                lambda_grid=tuple(data.get("lambda_grid", ())),
                mode=data.get("mode", "event"),
            )
        except KeyError as exc:
            raise ParameterError(f"config is missing field {exc}") from exc

    def to_json(self) -> str:
        return _canonical_json(self.to_dict())

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def with_seed(self, seed: int) -> "SimulationConfig":
        return SimulationConfig.from_dict({**self.to_dict(), "master_seed": int(seed)})

    def with_replications(self, reps: int) -> "SimulationConfig":
        return SimulationConfig.from_dict({**self.to_dict(), "replications": int(reps)})

    def with_event(self, event: EventSpec) -> "SimulationConfig":
        return SimulationConfig.from_dict({**self.to_dict(), "event": event.to_dict(), "mode": "event"})


@dataclass(frozen=True)
class BoundReport:
    """Outcome of certifying one analytic bound by simulation.

    ``verdict`` is PASS when ``estimate <= analytic_bound + z*se`` (``se``
    being the Wilson half-width divided by ``z``), FAIL otherwise, VACUOUS
    when the bound is at least one and DRY_RUN when no replications ran.
    """

    analytic_bound: float
    estimate: float | None
    wilson_interval: tuple | None
    replications: int
    horizon: int
    seed: int
    verdict: str
    provenance: dict
    se: float | None = None
    margin: float | None = None
    horizon_truncated: bool = False
    config_hash: str = ""
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.estimate is not None:
            lo, hi = self.wilson_interval
            if not lo <= self.estimate <= hi:
                raise ParameterError("estimate lies outside its Wilson interval")
        if (self.verdict == "VACUOUS") != (self.analytic_bound >= 1.0) and self.verdict != "DRY_RUN":
            raise ParameterError("VACUOUS must be reported exactly when the bound is >= 1")

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def to_dict(self) -> dict:
        return {
            "analytic_bound": self.analytic_bound,
            "estimate": self.estimate,
            "wilson_interval": None if self.wilson_interval is None else list(self.wilson_interval),
            "replications": self.replications,
            "horizon": self.horizon,
            "seed": self.seed,
            "verdict": self.verdict,
            "provenance": self.provenance,
            "se": self.se,
            "margin": self.margin,
            "horizon_truncated": self.horizon_truncated,
            "config_hash": self.config_hash,
            "extras": self.extras,
        }

    def to_json(self) -> str:
        return _canonical_json(self.to_dict())


def make_report(bound: float, hits: int, reps: int, horizon: int, seed: int, confidence: float, provenance: dict, **kw) -> BoundReport:
    """Turn a hit count into a :class:`BoundReport` with a Wilson interval."""
    est = hits / reps
    lo, hi = wilson_interval(hits, reps, confidence)
    z = z_value(confidence)
    se = 0.5 * (hi - lo) / z
    margin = bound + z * se - est
    if bound >= 1.0:
        verdict = "VACUOUS"
    else:
        verdict = "PASS" if margin >= 0 else "FAIL"
    return BoundReport(
        analytic_bound=bound,
        estimate=est,
        wilson_interval=(lo, hi),
        replications=reps,
        horizon=horizon,
        seed=seed,
        verdict=verdict,
        provenance=provenance,
        se=se,
        margin=margin,
        **kw,
    )


# --------------------------------------------------------------------------
# events
# --------------------------------------------------------------------------

LAMBDA_FREE = ("squares", "variance", "stout", "a7")


def _require(cond: bool, msg: str):
    if not cond:
        raise ParameterError(msg)


def _param(event: EventSpec, name: str, default=None) -> float:
    if name in event.params:
        return event.params[name]
    if default is None:
        raise ParameterError(f"event {event.kind} needs parameter {name!r}")
    return default


def check_compatibility(event: EventSpec, fam: Family) -> None:
    """Raise unless ``event``'s theorem applies to paths of ``fam``."""
    kind, regime = event.kind, fam.regime
    where = f"{event.kind} on {fam.name} (regime: {regime})"
    if kind in ("Thm21", "Thm22", "Thm27"):
        _require(regime.kind == "AllReal", f"{where}: the bound needs the canonical assumption for all real lambda")
        _require(fam.normalizer in LAMBDA_FREE, f"{where}: needs a lambda-free normalizer")
    elif kind in ("Thm23", "Thm24"):
        _require(fam.name == "BrownianDiscretized", f"{where}: the bound needs a continuous martingale (BrownianDiscretized)")
    elif kind == "Thm25":
        _require(fam.symmetric and fam.normalizer == "squares", f"{where}: needs conditionally symmetric increments normalized by sums of squares")
    elif kind == "Thm26":
        _require(fam.upper is not None and fam.lower is not None and fam.mean_zero, f"{where}: needs bounded martingale differences")
        c = _param(event, "c")
        m = max(fam.upper, fam.lower)
        _require(c >= m / 3.0, f"{where}: |d| <= {m} gives the moment condition only for c >= M/3 = {m / 3.0!r}")
    elif kind == "Crossing":
        F = measure_from_dict(event.params["measure"])
        ok = regime.kind in ("AllReal", "AllNonnegative") or regime.lambda0 >= F.lambda0
        _require(ok, f"{where}: the mixing measure extends beyond the regime")
        _require(fam.normalizer in LAMBDA_FREE, f"{where}: needs a lambda-free normalizer")
    if kind in ("Thm23", "Thm24", "Thm25", "Thm26", "Crossing"):
        _require(event.any_time, f"{event.kind} bounds an any-time event; use AnyTimeUpTo")


def analytic_bound(event: EventSpec) -> float:
    p = event.params
    kind = event.kind
    if kind == "Thm21":
        y = 1.0 / _param(event, "z") if "z" in p else _param(event, "y")
        value = bounds.bound_thm21(_param(event, "x"), y).value
        return 2.0 * value if p.get("two_sided", False) else value
    if kind == "Thm22":
        return bounds.bound_thm22(_param(event, "x"), _param(event, "s")).value
    if kind == "Thm23":
        return bounds.bound_thm23(_param(event, "alpha"), _param(event, "beta"), _param(event, "lam")).value
    if kind in ("Thm24", "Thm25"):
        return bounds.bound_thm24_25(_param(event, "x"), _param(event, "alpha"), _param(event, "beta"), _param(event, "y")).value
    if kind == "Thm26":
        primary, simplified = bounds.bound_thm26(_param(event, "x"), _param(event, "y"), _param(event, "c"))
        return simplified.value if p.get("variant") == "simplified" else primary.value
    if kind == "Thm27":
        return bounds.bound_thm27(_param(event, "x")).value
    if kind == "Crossing":
        return crossing_bound(_param(event, "c"), measure_from_dict(p["measure"]))
    raise ParameterError(f"no analytic bound for {kind}")


class _BoundaryTable:
    """``v -> beta_F(v, c)`` for the crossing event.

    Integer-valued ``v`` (e.g. ``B_n^2 = n`` for +-1 increments) is looked up
    exactly.  Other values use the largest grid point not above ``v``; since
    the boundary increases in ``v`` this can only enlarge the crossing event.
    """

    def __init__(self, measure: MixingMeasure, c: float, v_max: float):
        self.boundary = Boundary(measure, c)
        self.n_int = int(math.ceil(v_max)) + 1
        self.exact = self.boundary.evaluate(np.arange(self.n_int, dtype=float))
        self.grid = None

    def _ensure_grid(self, v_max):
        if self.grid is None:
            self.grid = np.concatenate([[0.0], np.logspace(-6, math.log10(max(v_max, 1.0)) + 0.5, 20001)])
            self.grid_beta = self.boundary.evaluate(self.grid)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        iv = np.rint(v)
        if np.all(iv == v) and v.max() < self.n_int:
            return self.exact[iv.astype(np.int64)]
        self._ensure_grid(float(v.max()) * 10)
        if v.max() > self.grid[-1]:
            raise ParameterError("B^2 exceeds the boundary grid")
        idx = np.searchsorted(self.grid, v, side="right") - 1
        return self.grid_beta[idx]


def _event_hits(fam: Family, event: EventSpec, arrs: Mapping, eb: float | None, table) -> np.ndarray:
    """Per-step indicator of the event (shape ``(R, T)``)."""
    p = event.params
    a = arrs["a"]
    kind = event.kind
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == "Thm21":
            b2 = fam.b_squared(arrs)
            x = p["x"]
            y = 1.0 / p["z"] if "z" in p else p["y"]
            stat = np.abs(a) / b2 if p.get("two_sided", False) else a / b2
            return (b2 > 0) & (stat > x) & (b2 >= 1.0 / y)
        if kind == "Thm22":
            b = np.sqrt(fam.b_squared(arrs))
            lo = p["b"]
            return (b > 0) & (np.abs(a) / b > p["x"]) & (b >= lo) & (b <= lo * p["s"])
        if kind == "Thm23":
            return a >= (p["alpha"] + p["beta"] * arrs["cv"]) * p["lam"]
        if kind == "Thm24":
            qv = arrs["cv"]
            return (qv > 0) & (a >= (p["alpha"] + p["beta"] * qv) * p["x"]) & (qv >= 1.0 / p["y"])
        if kind == "Thm25":
            sq = arrs["sq"]
            return (sq > 0) & (a >= (p["alpha"] + p["beta"] * sq) * p["x"]) & (sq >= 1.0 / p["y"])
        if kind == "Thm26":
            v2 = arrs["cv"]
            return (v2 > 0) & (a / v2 >= p["x"]) & (v2 >= 1.0 / p["y"])
        if kind == "Thm27":
            b2 = fam.b_squared(arrs)
            return np.abs(a) / np.sqrt(b2 + eb * eb) > p["x"]
        if kind == "Crossing":
            b2 = fam.b_squared(arrs)
            return a >= table(b2)
    raise ParameterError(f"cannot simulate event {kind}")


def _run_event_block(cfg_json: str, start: int, stop: int, extra) -> np.ndarray:
    """Indicators of every event in ``extra = (events, ebs)``, shape ``(R, E)``.

    All events are scored on the same paths; an any-time event only looks
    at steps up to its own horizon.
    """
    cfg = SimulationConfig.from_dict(json.loads(cfg_json))
    fam = cfg.generator.build()
    events = [EventSpec.from_dict(e) for e in extra[0]]
    ebs = extra[1]
    _, chunk = block_layout(cfg.replications, cfg.horizon)
    last = max(ev.n for ev in events)
    tables = [_boundary_table(cfg.generator, fam, ev) if ev.kind == "Crossing" else None for ev in events]
    rngs = [substream(cfg.master_seed, r) for r in range(start, stop)]
    hit = np.zeros((stop - start, len(events)), dtype=bool)
    for ch in iter_chunks(fam, rngs, last, chunk):
        for e, ev in enumerate(events):
            if ev.any_time and ch.n[0] <= ev.n:
                k = int(min(ev.n, ch.n[-1]) - ch.n[0]) + 1
                arrs = ch.arrays if k == len(ch.n) else {key: v[:, :k] for key, v in ch.arrays.items()}
                hit[:, e] |= _event_hits(fam, ev, arrs, ebs[e], tables[e]).any(axis=1)
            elif not ev.any_time and ch.n[0] <= ev.n <= ch.n[-1]:
                j = int(ev.n - ch.n[0])
                col = {key: v[:, j : j + 1] for key, v in ch.arrays.items()}
                col["n"] = np.full((stop - start, 1), float(ev.n))
                hit[:, e] |= _event_hits(fam, ev, col, ebs[e], tables[e])[:, 0]
    return hit


_TABLE_CACHE: dict = {}


def _boundary_table(spec: GeneratorSpec, fam: Family, event: EventSpec):
    key = (spec.to_json(), json.dumps(event.to_dict(), sort_keys=True))
    table = _TABLE_CACHE.get(key)
    if table is None:
        if len(_TABLE_CACHE) > 16:
            _TABLE_CACHE.clear()
        table = _BoundaryTable(measure_from_dict(event.params["measure"]), event.params["c"], v_max=_v_max_guess(fam, event.n))
        _TABLE_CACHE[key] = table
    return table


def _v_max_guess(fam: Family, n: int) -> float:
    # an integer-valued B^2 never exceeds n * max|d|^2 for bounded families
    bound = max(fam.upper or 0.0, fam.lower or 0.0)
    return n * bound * bound if bound else float(n)


def _map_blocks(fn, cfg: SimulationConfig, extra, jobs: int, reps: int | None = None):
    reps = cfg.replications if reps is None else reps
    block, _ = block_layout(reps, cfg.horizon)
    spans = [(s, min(s + block, reps)) for s in range(0, reps, block)]
    cfg_json = cfg.to_json()
    if jobs <= 1 or len(spans) == 1:
        parts = [fn(cfg_json, s, e, extra) for s, e in spans]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(fn, [cfg_json] * len(spans), [s for s, _ in spans], [e for _, e in spans], [extra] * len(spans)))
    return np.concatenate(parts) if parts else np.zeros(0)


def _eb_block(cfg_json: str, start: int, stop: int, n: int) -> np.ndarray:
    cfg = SimulationConfig.from_dict(json.loads(cfg_json))
    fam = cfg.generator.build()
    _, chunk = block_layout(cfg.replications, cfg.horizon)
    rngs = [substream(cfg.master_seed, r, tag=EB_TAG) for r in range(start, stop)]
    out = None
    for ch in iter_chunks(fam, rngs, n, chunk):
        if ch.n[0] <= n <= ch.n[-1]:
            col = ch.column(n)
            out = np.sqrt(fam.b_squared(col))
    return out


_EB_CACHE: dict = {}


def estimate_eb(cfg: SimulationConfig, n: int, reps: int = EB_PREPASS_REPS, jobs: int = 1) -> dict:
    """Pre-pass estimate of ``E B_n`` on an auxiliary substream family.

    Returns the sample mean, its standard error and the value
    ``mean - z*se`` used in certification: a smaller ``EB`` enlarges the
    event, so the certified estimate is conservative.
    """
    key = (cfg.generator.to_json(), n, cfg.master_seed, reps, cfg.confidence)
    if key not in _EB_CACHE:
        sub = SimulationConfig.from_dict({**cfg.to_dict(), "replications": reps})
        b = _map_blocks(_eb_block, sub, n, jobs, reps)
        mean = math.fsum(b.tolist()) / reps
        sd = float(np.std(b, ddof=1)) if reps > 1 else 0.0
        se = sd / math.sqrt(reps)
        z = z_value(cfg.confidence)
        _EB_CACHE[key] = {"eb_hat": mean, "eb_se": se, "eb_used": max(mean - z * se, 1e-300), "eb_reps": reps, "method": "prepass"}
    return dict(_EB_CACHE[key])


def _resolve_eb(cfg: SimulationConfig, fam: Family, jobs: int, ev: EventSpec | None = None):
    ev = cfg.event if ev is None else ev
    n = ev.n
    spec = ev.params.get("eb", "auto")
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        if not spec > 0:
            raise ParameterError("EB must be positive")
        return float(spec), {"eb_used": float(spec), "method": "given"}
    if spec == "surrogate":
        _require(fam.name == "Rademacher", "the sqrt(n) surrogate for EB only applies to +-1 increments")
        return math.sqrt(n), {"eb_used": math.sqrt(n), "method": "surrogate"}
    if spec == "auto":
        reps = int(ev.params.get("eb_reps", EB_PREPASS_REPS))
        info = estimate_eb(cfg, n, reps, jobs)
        return info["eb_used"], info
    raise ParameterError(f"EB must be a positive number, 'auto' or 'surrogate', got {spec!r}")


def estimate_event_probability(config: SimulationConfig, jobs: int = 1) -> BoundReport:
    """Estimate the probability of ``config.event`` and compare it with its bound."""
    if config.mode != "event":
        raise ParameterError("estimate_event_probability needs an event-mode config")
    return estimate_event_probabilities(config, [config.event], jobs)[0]


def estimate_event_probabilities(config: SimulationConfig, events: Sequence[EventSpec], jobs: int = 1) -> list[BoundReport]:
    """Score several events on one set of simulated paths.

    Report ``i`` is identical to ``estimate_event_probability`` run on
    ``config`` with its event replaced by ``events[i]``.
    """
    events = list(events)
    if not events:
        raise ParameterError("need at least one event")
    fam = config.generator.build()
    configs = [config if ev == config.event else config.with_event(ev) for ev in events]
    prepared = []
    for cfg, ev in zip(configs, events):
        check_compatibility(ev, fam)
        bound = analytic_bound(ev)
        provenance = {"event": ev.to_dict(), "generator": config.generator.to_dict(), "regime": str(fam.regime)}
        common = {"horizon_truncated": ev.any_time, "config_hash": cfg.config_hash()}
        extras, eb = {}, None
        if config.replications and ev.kind == "Thm27":
            eb, extras["eb"] = _resolve_eb(cfg, fam, jobs, ev)
        if ev.any_time:
            extras["note"] = "any-time event truncated at the horizon; the estimate is a lower bound of the infinite-horizon probability"
        prepared.append((cfg, bound, provenance, common, extras, eb))
    if config.replications == 0:
        return [
            BoundReport(bound, None, None, 0, config.horizon, config.master_seed, "DRY_RUN", prov, extras={"config": cfg.to_dict()}, **common)
            for cfg, bound, prov, common, _, _ in prepared
        ]
    extra = ([ev.to_dict() for ev in events], [p[5] for p in prepared])
    hits = _map_blocks(_run_event_block, config, extra, jobs)
    counts = np.count_nonzero(hits, axis=0)
    return [
        make_report(bound, int(counts[e]), config.replications, config.horizon, config.master_seed, config.confidence, prov, extras=extras, **common)
        for e, (cfg, bound, prov, common, extras, _) in enumerate(prepared)
    ]


# --------------------------------------------------------------------------
# supermartingale means
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HeavyTailDiagnostic:
    max_share: float
    flagged: bool
    recommended_replications: int


def heavy_tail_flagging(samples, threshold: float = HEAVY_TAIL_SHARE) -> HeavyTailDiagnostic:
    """Largest single summand as a share of the total.

    A share above ``threshold`` means one replication dominates the mean;
    certification then needs ten times the replications.
    """
    x = np.asarray(samples, dtype=float)
    if x.size == 0 or np.any(x < 0):
        raise ParameterError("samples must be a nonempty array of nonnegative values")
    total = math.fsum(x.tolist())
    share = float(x.max() / total) if total > 0 else 0.0
    flagged = share > threshold
    return HeavyTailDiagnostic(share, flagged, int(x.size * (10 if flagged else 1)))


def _mean_block(cfg_json: str, start: int, stop: int, extra) -> np.ndarray:
    cfg = SimulationConfig.from_dict(json.loads(cfg_json))
    fam = cfg.generator.build()
    _, chunk = block_layout(cfg.replications, cfg.horizon)
    cps = cfg.checkpoints
    lams = cfg.lambda_grid
    out = np.empty((stop - start, len(lams), len(cps)))
    rngs = [substream(cfg.master_seed, r) for r in range(start, stop)]
    capped = 0
    for ch in iter_chunks(fam, rngs, max(cps), chunk):
        for j, n in enumerate(cps):
            if ch.n[0] <= n <= ch.n[-1]:
                col = ch.column(n)
                for i, lam in enumerate(lams):
                    lv = np.asarray(fam.log_value(col, lam), dtype=float)
                    capped += int(np.count_nonzero(lv > LOG_CAP))
                    with np.errstate(over="ignore"):
                        out[:, i, j] = np.exp(lv)
    if capped:
        warnings.warn(f"{capped} log supermartingale values exceeded the cap {LOG_CAP}", LogCapWarning, stacklevel=2)
    return out


@dataclass(frozen=True)
class SupermartingaleReport:
    """Per-cell means of ``exp(lambda*A_n - lambda^2*B_n^2/2)``.

    ``cells`` holds one dict per ``(lambda, n)``; ``paired`` compares
    consecutive checkpoints with paired standard errors.
    """

    cells: tuple
    paired: tuple
    verdict: str
    replications: int
    seed: int
    config_hash: str
    provenance: dict

    def to_dict(self):
        return {
            "cells": list(self.cells),
            "paired": list(self.paired),
            "verdict": self.verdict,
            "replications": self.replications,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return _canonical_json(self.to_dict())


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    mean = math.fsum(x.tolist()) / n
    if n < 2:
        return mean, 0.0
    dev = x - mean
    var = math.fsum((dev * dev).tolist()) / (n - 1)
    return mean, math.sqrt(var / n)


def _cells_from_values(vals: np.ndarray, lams, cps, z: float, threshold: float):
    cells, paired = [], []
    for i, lam in enumerate(lams):
        for j, n in enumerate(cps):
            x = vals[:, i, j]
            mean, se = _mean_se(x)
            diag = heavy_tail_flagging(x, threshold) if np.all(np.isfinite(x)) else HeavyTailDiagnostic(1.0, True, 10 * x.size)
            ok = mean <= 1.0 + z * se
            verdict = "FLAGGED" if diag.flagged else ("PASS" if ok else "FAIL")
            cells.append({"lambda": lam, "n": n, "mean": mean, "se": se, "max_share": diag.max_share, "verdict": verdict, "replications": int(x.size)})
        for j in range(len(cps) - 1):
            d = vals[:, i, j + 1] - vals[:, i, j]
            diff, se = _mean_se(d) if np.all(np.isfinite(d)) else (math.nan, math.nan)
            paired.append({"lambda": lam, "n1": cps[j], "n2": cps[j + 1], "diff": diff, "se": se, "ok": bool(diff <= z * se)})
    return cells, paired


def verify_supermartingale_mean(config: SimulationConfig, lambda_grid: Sequence[float] | None = None, jobs: int = 1, escalate: bool = False) -> SupermartingaleReport:
    """Check ``E exp(lambda*A_n - lambda^2*B_n^2/2) <= 1`` at every ``(lambda, n)``.

    A cell passes when the sample mean is at most ``1 + z*SE``.  A cell in
    which one replication contributes more than 10% of the sum is FLAGGED
    rather than passed; with ``escalate`` such cells are re-run with ten
    times the replications.
    """
    if lambda_grid is not None:
        config = SimulationConfig.from_dict({**config.to_dict(), "lambda_grid": list(lambda_grid), "mode": "supermartingale"})
    if config.mode != "supermartingale":
        raise ParameterError("verify_supermartingale_mean needs a supermartingale-mode config")
    fam = config.generator.build()
    for lam in config.lambda_grid:
        fam.check_lambda(lam)
    if config.replications < 1:
        raise ParameterError("need at least one replication")
    z = z_value(config.confidence)
    vals = _map_blocks(_mean_block, config, None, jobs)
    lams, cps = config.lambda_grid, config.checkpoints
    cells, paired = _cells_from_values(vals, lams, cps, z, HEAVY_TAIL_SHARE)
    if escalate and any(c["verdict"] == "FLAGGED" for c in cells):
        big = config.with_replications(10 * config.replications)
        vals = _map_blocks(_mean_block, big, None, jobs)
        cells, paired = _cells_from_values(vals, lams, cps, z, HEAVY_TAIL_SHARE)
        config = big
    verdict = "PASS"
    if any(c["verdict"] == "FAIL" for c in cells) or not all(p["ok"] for p in paired):
        verdict = "FAIL"
    elif any(c["verdict"] == "FLAGGED" for c in cells):
        verdict = "FLAGGED"
    provenance = {"generator": config.generator.to_dict(), "regime": str(fam.regime), "normalizer": fam.normalizer}
    return SupermartingaleReport(tuple(cells), tuple(paired), verdict, config.replications, config.master_seed, config.config_hash(), provenance)
