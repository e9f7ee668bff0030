"""Command-line entry point.

Exit codes: 0 success or PASS, 1 FAIL verdict, 2 usage or input error,
3 numerical failure.  Machine-readable output goes to stdout (JSON) or to
``--out``; a one-line human summary goes to stderr.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__, bounds, lil, mixtures, multivariate
from .exceptions import NumericalError, ParameterError, SelfNormError
from .montecarlo import SimulationConfig, estimate_event_probability, verify_supermartingale_mean
from .processes import GeneratorSpec, generate_path

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
SEED_ENV = "SELFNORM_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _dumps(obj) -> str:
    # repr-based floats round-trip exactly
    return json.dumps(obj, sort_keys=True, allow_nan=True)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


@dataclass
class RunManifest:
    """Where a persisted report came from."""

    tool_version: str
    config_hash: str
    started: str
    finished: str = ""
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    seed_override: int | None = None

    def to_dict(self) -> dict:
        return {
            "tool_version": self.tool_version,
            "config_hash": self.config_hash,
            "started": self.started,
            "finished": self.finished,
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "seed_override": self.seed_override,
        }


def _number(text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ParameterError(f"not a number: {text!r}") from exc


def _count(text: str) -> int:
    x = _number(text)
    if x != int(x) or x < 0:
        raise ParameterError(f"not a nonnegative integer: {text!r}")
    return int(x)


def parse_params(text: str) -> dict:
    """``k=v,k=v`` into a dict of floats."""
    out = {}
    if not text:
        return out
    for item in text.split(","):
        if "=" not in item:
            raise ParameterError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = _number(v)
    return out


def parse_grid(text: str) -> np.ndarray:
    """``lo:hi:log:n`` or ``lo:hi:lin:n`` or a comma list."""
    parts = text.split(":")
    if len(parts) == 4:
        lo, hi, kind, n = _number(parts[0]), _number(parts[1]), parts[2], _count(parts[3])
        if n < 1:
            raise ParameterError("grid needs at least one point")
        if kind == "log":
            if not (lo > 0 and hi > 0):
                raise ParameterError("log grids need positive ends")
            return np.logspace(math.log10(lo), math.log10(hi), n)
        if kind == "lin":
            return np.linspace(lo, hi, n)
        raise ParameterError(f"grid spacing must be 'log' or 'lin', got {kind!r}")
    return np.array([_number(x) for x in text.split(",")])


def parse_seeds(text: str) -> list[int]:
    """``a..b`` (inclusive) or a comma list."""
    if ".." in text:
        a, b = text.split("..", 1)
        return list(range(_count(a), _count(b) + 1))
    return [_count(x) for x in text.split(",")]


def _read_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from exc


def _load_spec(text: str, horizon: int | None = None) -> GeneratorSpec:
    if text.endswith(".json") or os.path.exists(text):
        data = _read_json(text)
        if horizon is not None:
            data = {**data, "horizon": horizon}
        return GeneratorSpec.from_dict(data)
    return GeneratorSpec(text, {}, horizon or 1)


def _write_csv(rows, header, out: str | None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    if out:
        with open(out, "w") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def _env_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return _count(raw)
    except ParameterError as exc:
        raise UsageError(f"{SEED_ENV} must be a nonnegative integer, got {raw!r}") from exc


def _emit_report(report: dict, verdict: str, manifest: RunManifest, out: str | None, csv_out: str | None) -> int:
    manifest.finished = _now()
    record = {**report, "manifest": manifest.to_dict()}
    if out:
        manifest_path = out + ".manifest.json"
        manifest.outputs = [out, manifest_path] + ([csv_out] if csv_out else [])
        with open(manifest_path, "w") as fh:
            fh.write(_dumps(manifest.to_dict()) + "\n")
        with open(out, "a") as fh:
            fh.write(_dumps({**report, "manifest": manifest_path}) + "\n")
        record["manifest"] = manifest.to_dict()
    if csv_out:
        keys = [k for k in ("analytic_bound", "estimate", "replications", "horizon", "seed", "verdict", "config_hash") if k in report]
        _write_csv([[report[k] for k in keys]], keys, csv_out)
    print(_dumps(record))
    print(f"verdict: {verdict}", file=sys.stderr)
    return EXIT_OK if verdict in ("PASS", "VACUOUS", "DRY_RUN") else EXIT_FAIL


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_bounds(args) -> int:
    params = parse_params(args.params)
    if args.action == "eval":
        print(_dumps(bounds.evaluate(args.theorem, params).to_dict()))
        return EXIT_OK
    if not args.grid:
        raise UsageError("bounds grid needs --grid name=spec")
    name, spec = args.grid.split("=", 1)
    rows = []
    for x in parse_grid(spec):
        p = {**params, name: float(x)}
        rows.append([*(p[k] for k in sorted(p)), bounds.evaluate(args.theorem, p).value])
    _write_csv(rows, sorted({**params, name: 0}) + ["value"], args.out)
    return EXIT_OK


def cmd_boundary(args) -> int:
    F = mixtures.parse_measure(args.measure)
    v = parse_grid(args.v_grid)
    if np.any(v <= 0):
        raise ParameterError("v must be positive")
    rows = []
    for vi in v:
        beta = mixtures.beta_f(float(vi), args.c, F)
        residual = abs(mixtures.psi(beta, float(vi), F) - args.c)
        asym = math.nan
        if isinstance(F, mixtures.RobbinsSiegmund) and vi > math.exp(math.exp(math.e)):
            asym = mixtures.rs_asymptotic(float(vi), args.c, F.delta)
        rows.append([float(vi), beta, asym, residual])
    _write_csv(rows, ["v", "beta_exact", "beta_asymptotic", "psi_residual"], args.out)
    return EXIT_OK


def _load_config(path: str, manifest_seed: list) -> SimulationConfig:
    cfg = SimulationConfig.from_dict(_read_json(path))
    seed = _env_seed()
    if seed is not None:
        cfg = cfg.with_seed(seed)
        manifest_seed.append(seed)
    return cfg


def cmd_simulate(args, mode: str = "event") -> int:
    override: list = []
    cfg = _load_config(args.config, override)
    if args.dump_config:
        print(cfg.to_json())
        return EXIT_OK
    manifest = RunManifest(__version__, cfg.config_hash(), _now(), inputs=[args.config], seed_override=override[0] if override else None)
    if cfg.mode == "supermartingale":
        report = verify_supermartingale_mean(cfg, jobs=args.jobs, escalate=getattr(args, "escalate", False))
    else:
        if mode == "supermartingale":
            raise ParameterError("verify needs a supermartingale-mode config")
        report = estimate_event_probability(cfg, jobs=args.jobs)
    return _emit_report(report.to_dict(), report.verdict, manifest, args.out, args.csv)


def cmd_lil(args) -> int:
    if args.action == "constants":
        print(_dumps(lil.solve_h(args.lam).to_dict()))
        return EXIT_OK
    if not args.spec:
        raise UsageError("lil ratios needs --spec")
    horizon = _count(args.horizon)
    spec = _load_spec(args.spec, horizon)
    consts = lil.solve_h(args.lam)
    n_grid = np.unique(np.logspace(0, math.log10(horizon), args.points).astype(np.int64))
    rows = []
    for seed in parse_seeds(args.seeds):
        path = generate_path(spec, seed)
        rep = lil.lil_path_report(path, consts, n_grid)
        for row in rep.rows():
            rows.append([seed, row["n"], row["ratio"], row["stout_ratio"], row["centered_ratio"]])
    _write_csv(rows, ["seed", "n", "ratio", "stout_ratio", "centered_ratio"], args.out)
    return EXIT_OK


def cmd_mv(args) -> int:
    seed = _env_seed()
    override = seed
    seed = args.seed if seed is None else seed
    horizon, reps = _count(args.horizon), _count(args.reps)
    V = multivariate.parse_matrix(args.V, args.k)
    spec = _load_spec(args.spec, horizon)
    manifest = RunManifest(__version__, "", _now(), inputs=[args.spec], seed_override=override)
    report = multivariate.mv_crossing_probability(spec, V, args.a, horizon, reps, seed, update=args.update)
    manifest.config_hash = report.config_hash
    return _emit_report(report.to_dict(), report.verdict, manifest, args.out, args.csv)


SELFTEST = [
    ("bound 2.1 at x=1,y=1 is exp(-1/2)", lambda: bounds.evaluate("2.1", {"x": 1, "y": 1}).value, math.exp(-0.5)),
    ("bound 2.2 at x=1,s=1 is flagged saturated", lambda: float(bounds.evaluate("2.2", {"x": 1, "s": 1}).saturated), 1.0),
    ("bound 2.3 at alpha*beta*lam^2=1/2 is 1/e", lambda: bounds.evaluate("2.3", {"alpha": 1, "beta": 0.5, "lam": 1}).value, math.exp(-1.0)),
    ("AR(1) estimator bound at x=1,z=4 is 2e^-2", lambda: bounds.evaluate("ar1", {"x": 1, "z": 4}).value, 2 * math.exp(-2.0)),
    ("crossing bound of a unit-mass atom at c=4", lambda: mixtures.crossing_bound(4.0, mixtures.DiscreteGrid([1.0], [1.0])), 0.25),
    ("C_gamma at gamma=0 is 1/2", lambda: lil.c_gamma(0.0), 0.5),
    ("empty multivariate state has statistic 0", lambda: multivariate.mv_statistic(multivariate.MvPathState.empty(2), np.eye(2)), 0.0),
    ("empty multivariate threshold is 2 log a", lambda: multivariate.mv_threshold(multivariate.MvPathState.empty(2), np.eye(2), math.e), 2.0),
]


def cmd_selftest(args) -> int:
    ok = True
    for name, fn, expected in SELFTEST:
        got = fn()
        good = math.isclose(got, expected, rel_tol=1e-12, abs_tol=1e-15)
        ok &= good
        print(f"{'PASS' if good else 'FAIL'} {name}: {got!r}", file=sys.stderr)
    print(_dumps({"passed": bool(ok), "checks": len(SELFTEST)}))
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="selfnorm", description="Self-normalized bounds, mixture boundaries and Monte Carlo certification.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("bounds", help="evaluate closed-form tail bounds")
    b.add_argument("action", choices=["eval", "grid"])
    b.add_argument("--theorem", required=True)
    b.add_argument("--params", default="")
    b.add_argument("--grid", help="name=lo:hi:lin|log:n or name=a,b,c")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bounds)

    bd = sub.add_parser("boundary", help="tabulate a mixture boundary")
    bd.add_argument("--measure", required=True)
    bd.add_argument("--c", type=float, required=True)
    bd.add_argument("--v-grid", required=True)
    bd.add_argument("--out")
    bd.set_defaults(func=cmd_boundary)

    for name, mode, what in (
        ("simulate", "event", "estimate an event probability"),
        ("verify", "supermartingale", "check supermartingale means"),
    ):
        s = sub.add_parser(name, help=what)
        s.add_argument("--config", required=True)
        s.add_argument("--jobs", type=int, default=1)
        s.add_argument("--out", help="JSON-lines file the report is appended to")
        s.add_argument("--csv", help="CSV summary file")
        s.add_argument("--dump-config", action="store_true", help="print the parsed config and exit")
        if name == "verify":
            s.add_argument("--escalate", action="store_true", help="rerun heavy-tailed cells with 10x replications")
        s.set_defaults(func=lambda a, m=mode: cmd_simulate(a, m))

    li = sub.add_parser("lil", help="LIL constants and path ratios")
    li.add_argument("action", choices=["constants", "ratios"])
    li.add_argument("--lambda", dest="lam", type=float, default=0.5)
    li.add_argument("--spec")
    li.add_argument("--horizon", default="1e6")
    li.add_argument("--seeds", default="0")
    li.add_argument("--points", type=int, default=60, help="log-spaced indices per path")
    li.add_argument("--out")
    li.set_defaults(func=cmd_lil)

    mv = sub.add_parser("mv", help="multivariate determinant boundaries")
    mv.add_argument("action", choices=["certify"])
    mv.add_argument("--k", type=int, required=True)
    mv.add_argument("--a", type=float, required=True)
    mv.add_argument("--V", default="identity")
    mv.add_argument("--spec", default="Rademacher")
    mv.add_argument("--horizon", default="1e3")
    mv.add_argument("--reps", default="1e4")
    mv.add_argument("--seed", type=int, default=0)
    mv.add_argument("--update", choices=["scratch", "rank1"], default="scratch")
    mv.add_argument("--out")
    mv.add_argument("--csv")
    mv.set_defaults(func=cmd_mv)

    st = sub.add_parser("selftest", help="check the closed-form example table")
    st.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParameterError, SelfNormError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
