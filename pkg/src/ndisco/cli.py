"""Command-line interface: ``ndisco {run,bounds,sweep,replay,validate}``.

Exit codes: 0 success, 1 runtime failure (unfinished trials, replay
divergence), 2 invalid input.
"""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import sys
from pathlib import Path

from .analysis.bounds import BoundError, BoundInputs, compute_bounds
from .analysis.stats import empirical_stats, stats_rows, write_stats_csv
from .config import ConfigError, apply_override, load_config
from .impairments import ImpairmentError, slowdown_bound
from .model import TopologyError, derive_params, load_topology
from .protocols import StrategyKind
from .runner import bound_value, run_trials, scenario_bounds
from .trace import TraceError, replay_file, write_trace

EXIT_OK, EXIT_FAIL, EXIT_INVALID = 0, 1, 2


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    """``3,4,8`` or ``3-10`` (inclusive) or a mix: ``3-5,8``."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def _scenario_from_args(args):
    overrides = list(args.override or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "trials", None) is not None:
        overrides.append(f"trials={args.trials}")
    return load_config(args.config, overrides)


# -- run ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    sc = _scenario_from_args(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bounds = scenario_bounds(sc)
    bound = bound_value(bounds)
    results = run_trials(sc, record=args.trace, threads=args.threads)
    rows = []
    for r in results:
        rows.extend(stats_rows(sc["name"], r.trial, sc["seed"], r.report, bound))
    write_stats_csv(out / "stats.csv", rows)
    (out / "bounds.json").write_text(bounds.to_json() + "\n" if bounds else "null\n")
    if args.trace:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for r in results:
            write_trace(tdir / f"trial-{r.trial:05d}.jsonl.gz", r.header, r.events)
    summary = empirical_stats([r.report for r in results], bound)
    summary["success_ci"] = list(summary["success_ci"])
    if "within_bound_ci" in summary:
        summary["within_bound_ci"] = list(summary["within_bound_ci"])
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{sc['name']}: {summary['trials']} trials, success rate {summary['success_rate']:.4f}"
          + (f", within bound {summary['within_bound_rate']:.4f} (bound {bound:g})" if bound is not None else ""))
    return EXIT_OK if summary["success_rate"] == 1.0 else EXIT_FAIL


# -- bounds -----------------------------------------------------------------------


def cmd_bounds(args) -> int:
    if args.config:
        sc = _scenario_from_args(args)
        kind = sc.kind
        from .runner import bound_inputs

        inputs = bound_inputs(sc)
        if args.phi is not None:
            inputs = BoundInputs(**{**inputs.__dict__, "phi": args.phi})
    else:
        if args.kind is None:
            raise UsageError("bounds: give --config or --kind with the parameters")
        kind = StrategyKind(args.kind)
        missing = [n for n in ("N", "S", "rho") if getattr(args, n) is None]
        if missing:
            raise UsageError(f"bounds: missing {', '.join('--' + m for m in missing)}")
        delta = args.delta if args.delta is not None else (args.delta_est or 1)
        from .model import next_pow2

        inputs = BoundInputs(N=args.N, S=args.S, delta=delta, delta0=next_pow2(delta), rho=args.rho,
                             eps=args.eps, delta_est=args.delta_est, theta=args.theta, L=1.0,
                             drift=args.drift, phi=args.phi or 0.0, B=args.B)
    report = compute_bounds(kind, inputs)
    print(report.to_json())
    if kind.is_async:
        if kind is StrategyKind.ASYNC_KNOWN:
            print(f"drift assumption: delta <= 1/7 (given {inputs.drift:g})", file=sys.stderr)
        else:
            ok = "satisfied" if "drift-assumption-violated" not in report.flags else "VIOLATED"
            print(f"drift assumption: delta <= {report.drift_threshold:.6g} "
                  f"(given {inputs.drift:g}; {ok})", file=sys.stderr)
    return EXIT_OK


# -- sweep ------------------------------------------------------------------------


def slowdown_rows(system: str, ns: list[int], ss: list[int], p_case: str = "degree") -> list[dict]:
    rows = []
    for n, s in itertools.product(ns, ss):
        rows.append({"system": system, "p_case": p_case, "N": n, "S": s,
                     "metric": "slowdown_bound", "value": repr(slowdown_bound(n, s, system, p_case))})
    return rows


def grid_points(grid: dict) -> list[dict]:
    if not grid or any(not isinstance(v, list) or not v for v in grid.values()):
        raise UsageError("sweep grid is empty")
    keys = sorted(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def config_sweep_rows(spec: dict, base_dir: Path | None, threads: int | None = None) -> list[dict]:
    """Spec: ``{"base": <config or path>, "grid": {"dotted.key": [values, ...]}}``."""
    base = spec.get("base")
    if isinstance(base, str):
        path = Path(base) if base_dir is None or Path(base).is_absolute() else base_dir / base
        base = json.loads(path.read_text())
    if not isinstance(base, dict):
        raise UsageError("sweep spec needs a 'base' configuration")
    points = grid_points(spec.get("grid") or {})
    rows = []
    for point in points:
        doc = copy.deepcopy(base)
        for key, value in point.items():
            doc = apply_override(doc, f"{key}={json.dumps(value)}")
        sc = load_config(doc, base_dir=base_dir)
        bound = bound_value(scenario_bounds(sc))
        results = run_trials(sc, threads=threads)
        stats = empirical_stats([r.report for r in results], bound)
        for metric in ("success_rate", "within_bound_rate", "bound", "completion_p50", "completion_p90"):
            if metric in stats:
                rows.append({**point, "metric": metric, "value": repr(float(stats[metric]))})
    return rows


def _write_rows(rows: list[dict], dest) -> None:
    fields: list[str] = []
    for r in rows:
        fields.extend(k for k in r if k not in fields)
    w = csv.DictWriter(dest, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)


def cmd_sweep(args) -> int:
    if args.builtin == "slowdown":
        ns, ss = _int_list(args.n), _int_list(args.s)
        if not ns or not ss:
            raise UsageError("sweep grid is empty")
        systems = ["sync", "async"] if args.system == "both" else [args.system]
        rows = [r for sys_ in systems for r in slowdown_rows(sys_, ns, ss, args.p_case)]
    elif args.spec:
        spec_path = Path(args.spec)
        try:
            spec = json.loads(spec_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read sweep spec: {exc}") from exc
        rows = config_sweep_rows(spec, spec_path.parent, args.threads)
    else:
        raise UsageError("sweep: give --builtin slowdown or --spec FILE")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            _write_rows(rows, fh)
    else:
        _write_rows(rows, sys.stdout)
    return EXIT_OK


# -- replay / validate ---------------------------------------------------------------


def cmd_replay(args) -> int:
    status = EXIT_OK
    for path in args.trace:
        report = replay_file(path, layout_checks=not args.no_layout_checks)
        print(json.dumps({"trace": str(path), **report.to_dict()}, sort_keys=True))
        if not report.ok:
            status = EXIT_FAIL
    return status


def cmd_validate(args) -> int:
    if args.config:
        sc = load_config(args.config, args.override or [])
        topo = sc.topology
    elif args.topology:
        topo = load_topology(args.topology, symmetric=not args.asymmetric)
    else:
        raise UsageError("validate: give --topology FILE or --config FILE")
    p = derive_params(topo)
    info = {"ok": True, "N": p.N, "S": p.S, "delta": p.delta, "delta0": p.delta0,
            "rho": str(p.rho), "B": p.B, "links": p.link_count,
            "homogeneous": topo.is_homogeneous(), "bands": topo.bands is not None}
    print(json.dumps(info, sort_keys=True))
    return EXIT_OK


# -- entry point -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ndisco", description="Multichannel neighbor discovery simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, trials=True):
        p.add_argument("--config", help="scenario JSON file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        if trials:
            p.add_argument("--trials", type=int, help="number of trials (overrides the config)")
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="set a config key, dotted for nesting; value parsed as JSON")

    p = sub.add_parser("run", help="run trials of a scenario")
    common(p)
    p.add_argument("--out-dir", default="out", help="directory for stats.csv, bounds.json, traces/")
    p.add_argument("--trace", action=argparse.BooleanOptionalAction, default=False,
                   help="write one gzip trace per trial")
    p.add_argument("--threads", type=int, help="worker processes (also capped by NDISCO_THREADS)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bounds", help="evaluate the discovery-time bound")
    common(p, trials=False)
    p.add_argument("--kind", choices=[k.value for k in StrategyKind])
    p.add_argument("--N", type=int)
    p.add_argument("--S", type=int)
    p.add_argument("--delta", type=int, help="maximum degree")
    p.add_argument("--delta-est", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--drift", type=float, default=0.0)
    p.add_argument("--phi", type=float)
    p.add_argument("--B", type=int, default=1)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("sweep", help="grid sweep, long-form CSV")
    p.add_argument("--builtin", choices=["slowdown"])
    p.add_argument("--system", choices=["sync", "async", "both"], default="both")
    p.add_argument("--p-case", choices=["degree", "half"], default="degree")
    p.add_argument("--n", default="3,4,8", help="N values, e.g. 3,4,8 or 3-10")
    p.add_argument("--s", default="3-10", help="S values")
    p.add_argument("--spec", help="sweep spec JSON: {base, grid}")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("replay", help="verify traces")
    p.add_argument("trace", nargs="+")
    p.add_argument("--no-layout-checks", action="store_true", help="skip frame-layout checks")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("validate", help="lint a topology")
    p.add_argument("--topology")
    p.add_argument("--config")
    p.add_argument("--override", action="append")
    p.add_argument("--asymmetric", action="store_true", help="do not require symmetric links")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TopologyError, ImpairmentError, BoundError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except TraceError as exc:
        print(f"error: corrupt trace: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
