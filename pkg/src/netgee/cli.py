"""Command-line entry point: ``netgee {simulate,fit,fit-naive,reproduce,pipeline}``.

Every command writes its outputs plus one ``manifest.json`` into ``--out``.
Exit codes: 0 success, 2 usage or input error, 3 solver error,
4 experiment failure budget exceeded.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

import netgee
from netgee import experiments as exps
from netgee._csvio import format_number, read_matrix, read_vector, write_matrix, write_vector
from netgee.communities import GreedyModularity, LabelPropagation, Oracle, detect
from netgee.gee import FitError, FitOptions, WorkingCorrelation, ZMode, fit_gee, fit_naive
from netgee.graph import DirectedGraph, Partition, read_adjacency_csv, read_edge_list_csv, write_adjacency_csv
from netgee.inference import ExperimentBudgetError, SimStudyConfig, resolve_threads, simulate_replication
from netgee.model import ConvergenceError, Link, SingularSystemError
from netgee.pipeline import run_pipeline

logger = logging.getLogger("netgee")

MANIFEST_SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_BUDGET = 0, 2, 3, 4
# flags that never change outputs and stay out of the manifest echo
_UNRECORDED = {"config", "threads", "log_level", "handler", "command"}


class UsageError(Exception):
    pass


class SolverError(Exception):
    pass


# ----------------------------------------------------------------------------- io


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {p}")
    return p


def load_graph(path) -> DirectedGraph:
    """Adjacency matrix CSV, or an edge list when the header is ``src,dst,weight``."""
    path = _existing(path)
    with open(path, newline="") as fh:
        first = fh.readline().strip().replace(" ", "")
    if first.startswith("src,dst"):
        return read_edge_list_csv(path)
    return read_adjacency_csv(path)


def load_design(path, n: int) -> np.ndarray:
    """``n x l`` headerless CSV, returned as the ``l x n`` design."""
    mat = read_matrix(_existing(path))
    if mat.shape[0] != n:
        raise UsageError(f"{path}: design has {mat.shape[0]} rows for {n} nodes")
    return mat.T


def load_outcome(path, n: int) -> np.ndarray:
    y = read_vector(_existing(path))
    if y.size != n:
        raise UsageError(f"{path}: outcome has {y.size} values for {n} nodes")
    return y


def write_rows(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    fields = list(rows[0])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_cell(row.get(f)) for f in fields])


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (float, np.floating)):
        return format_number(v) if np.isfinite(v) else "nan"
    return str(v)


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_manifest(out: Path, args, outputs, seed=None) -> Path:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in _UNRECORDED}
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "command": args.command,
        "config": config,
        "seed": seed,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "version": netgee.__version__,
        "outputs": sorted(str(Path(p).relative_to(out)) for p in outputs),
    }
    path = out / "manifest.json"
    write_json(path, manifest)
    return path


# ------------------------------------------------------------------------ commands


def cmd_simulate(args) -> int:
    if args.k < 1 or args.n % args.k:
        raise UsageError(f"--n {args.n} is not divisible by --k {args.k}")
    if args.reps < 1:
        raise UsageError("--reps must be at least 1")
    try:
        config = SimStudyConfig.from_n(
            args.n, args.k, p=args.p, q=args.q, beta0=args.beta0, link=args.link, B=args.reps, base_seed=args.seed
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for b in range(args.reps):
        graph, planted, X, y = simulate_replication(config, b)
        files = {
            f"graph_{b}.csv": lambda p: write_adjacency_csv(graph, p),
            f"design_{b}.csv": lambda p: write_matrix(p, X.T),
            f"outcome_{b}.csv": lambda p: write_vector(p, y),
            f"partition_{b}.csv": planted.to_csv,
        }
        for name, writer in files.items():
            writer(out / name)
            outputs.append(out / name)
    write_manifest(out, args, outputs, seed=args.seed)
    return EXIT_OK


def _detector(args, graph: DirectedGraph, partition_path):
    if args.detect == "oracle":
        if partition_path is None:
            raise UsageError("--detect oracle needs --partition")
        part = Partition.from_csv(_existing(partition_path))
        if part.n != graph.n:
            raise UsageError(f"{partition_path}: partition has {part.n} nodes, graph has {graph.n}")
        return Oracle(part.labels)
    if args.detect == "labelprop":
        return LabelPropagation(seed=args.seed)
    return GreedyModularity(seed=args.seed)


def _solver_call(fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (FitError, SingularSystemError, ConvergenceError) as exc:
        raise SolverError(f"{type(exc).__name__}: {exc}") from None


def _finish_fit(args, fit, out: Path, outputs) -> int:
    path = out / "fit.json"
    write_json(path, fit.to_dict())
    outputs.append(path)
    write_manifest(out, args, outputs, seed=getattr(args, "seed", None))
    if not fit.converged:
        raise SolverError(f"solver did not converge in {fit.iterations} iterations (score norm {fit.score_norm:.3g})")
    return EXIT_OK


def cmd_fit(args) -> int:
    graph = load_graph(args.graph)
    X = load_design(args.design, graph.n)
    y = load_outcome(args.outcome, graph.n)
    if args.detect is None:
        args.detect = "oracle" if args.partition else "modularity"
    partition = detect(graph, _detector(args, graph, args.partition))
    opts = FitOptions(link=Link(args.link), z_mode=ZMode(args.zmode))
    fit = _solver_call(fit_gee, graph, partition, X, y, WorkingCorrelation(args.corr), opts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    part_path = out / "partition.csv"
    partition.to_csv(part_path)
    return _finish_fit(args, fit, out, [part_path])


def cmd_fit_naive(args) -> int:
    graph = load_graph(args.graph)
    X = load_design(args.design, graph.n)
    y = load_outcome(args.outcome, graph.n)
    fit = _solver_call(fit_naive, graph, X, y, Link(args.link))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return _finish_fit(args, fit, out, [])


def _report_lines(target: str, comparison: dict) -> list[str]:
    lines = [f"target: {target}"]
    if "cells" in comparison:
        lines.append(f"cells within 3 sigma of published: {comparison['cells_within_band']}/{comparison['cells_compared']}")
        for c in comparison["cells"]:
            mark = "ok " if c["within_band"] else "OUT"
            lines.append(
                f"  {mark} n={c['n']} K={c['K']} p={c['p']} q={c['q']} {c['method']:<9} "
                f"observed={c['observed']:.3f} published={c['published']:.3f} band=+-{c['band']:.3f}"
            )
        a, b = comparison["naive_ge_indep_at_q_pos"]
        lines.append(f"naive >= gee-indep at q >= 0.1: {a}/{b}")
        a, b = comparison["exch_ge_indep"]
        lines.append(f"gee-exch >= gee-indep: {a}/{b}")
    elif "bias_sq_nondecreasing" in comparison:
        for k, v in comparison["bias_sq_nondecreasing"].items():
            lines.append(f"bias^2 nondecreasing in q [{k}]: {v}")
        for k, v in comparison["naive_se_below_gee"].items():
            lines.append(f"naive SE < GEE SE [{k}]: {v}")
        lines.append(f"max |beta_gee - beta_naive|: {comparison['max_estimate_gap']}")
    else:
        for k in ("p_sd_nonincreasing", "q_sd_nonincreasing", "max_sd_ratio"):
            lines.append(f"{k}: {comparison[k]}")
    return lines


def cmd_reproduce(args) -> int:
    B = args.reps or exps.SCALES[args.scale]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    threads = resolve_threads(args.threads)
    outputs = []
    detection = {} if args.detect == "modularity" else {"detection": None}

    def progress(config, result):
        logger.info("done n=%d p=%.1f q=%.1f (%d reps)", config.n, config.p, config.q, config.B)

    budget_error = None
    if args.target in ("table1", "table2"):
        link = exps.TARGET_LINKS[args.target]
        results, rows = exps.type1_grid(link, B, args.seed, threads, progress, **detection)
        comparison = exps.compare_type1(rows, link, B)
    elif args.target in ("fig1", "fig2"):
        link = exps.TARGET_LINKS[args.target]
        results, rows = exps.figure_grid(link, B, args.seed, threads, progress, **detection)
        rows = [{k: r[k] for k in ("n", "K", "p", "q", "method", "bias_sq", "se", "mean_est_se", "mean_beta", "n_ok", "n_failed")} for r in rows]
        comparison = exps.compare_figure(rows, results)
    else:
        reps = args.reps or (500 if args.scale == "desk" else 1000)
        comparison = exps.rate_check_grid(reps=reps, seed=args.seed, gamma=args.gamma)
        rows, results = comparison["rows"], None
        comparison = {k: v for k, v in comparison.items() if k != "rows"}
    table = out / f"{args.target}.csv"
    write_rows(table, rows)
    report_json = out / f"{args.target}_comparison.json"
    write_json(report_json, comparison)
    report_txt = out / f"{args.target}_comparison.txt"
    report_txt.write_text("\n".join(_report_lines(args.target, comparison)) + "\n")
    outputs += [table, report_json, report_txt]
    write_manifest(out, args, outputs, seed=args.seed)
    print(report_txt.read_text(), end="")
    if results is not None:
        try:
            exps.check_budgets(results)
        except ExperimentBudgetError as exc:
            budget_error = exc
    if budget_error is not None:
        raise budget_error
    return EXIT_OK


def cmd_pipeline(args) -> int:
    for p in (args.flights, args.covariates):
        _existing(p)
    out = Path(args.out)
    paths = run_pipeline(
        args.flights,
        args.covariates,
        out,
        mode=args.mode,
        outcome=args.outcome,
        month=args.month,
        include_zeros=not args.q3_exclude_zeros,
        include_diagonal=args.q3_include_diagonal,
    )
    write_manifest(out, args, list(paths.values()))
    return EXIT_OK


# -------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file whose keys mirror the flags (a manifest also works)")
    common.add_argument("--threads", type=int, default=None, help="worker processes (default: NETGEE_THREADS or all cores)")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--out", default="out", help="output directory")

    parser = argparse.ArgumentParser(prog="netgee", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {netgee.__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", parents=[common], help="sample block-model graphs, designs and outcomes")
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--k", type=int, required=True)
    sim.add_argument("--p", type=float, required=True)
    sim.add_argument("--q", type=float, required=True)
    sim.add_argument("--beta0", type=float, default=0.5)
    sim.add_argument("--link", choices=[l.value for l in Link], default="identity")
    sim.add_argument("--reps", type=int, default=1)
    sim.add_argument("--seed", type=int, default=0)
    sim.set_defaults(handler=cmd_simulate)

    def fit_inputs(p):
        p.add_argument("--graph", required=True, help="adjacency CSV or src,dst,weight edge list")
        p.add_argument("--design", required=True, help="n x l headerless CSV")
        p.add_argument("--outcome", required=True, help="single-column CSV")
        p.add_argument("--link", choices=[l.value for l in Link], default="identity")

    fit = sub.add_parser("fit", parents=[common], help="community GEE fit")
    fit_inputs(fit)
    fit.add_argument("--partition", help="node_id,label CSV")
    fit.add_argument("--corr", choices=[c.value for c in WorkingCorrelation], default="indep")
    fit.add_argument("--zmode", choices=[z.value for z in ZMode], default="block")
    fit.add_argument("--detect", choices=["oracle", "labelprop", "modularity"], default=None)
    fit.add_argument("--seed", type=int, default=0, help="detection seed")
    fit.set_defaults(handler=cmd_fit)

    naive = sub.add_parser("fit-naive", parents=[common], help="least squares / GLM fit ignoring communities")
    fit_inputs(naive)
    naive.set_defaults(handler=cmd_fit_naive)

    rep = sub.add_parser("reproduce", parents=[common], help="rerun a simulation study")
    rep.add_argument("target", choices=["table1", "table2", "fig1", "fig2", "ratecheck"])
    rep.add_argument("--scale", choices=sorted(exps.SCALES), default="desk")
    rep.add_argument("--reps", type=int, default=None, help="override the replication count of --scale")
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--detect", choices=["modularity", "oracle"], default="modularity")
    rep.add_argument("--gamma", type=float, default=0.0, help="rate-check exponent")
    rep.set_defaults(handler=cmd_reproduce)

    pipe = sub.add_parser("pipeline", parents=[common], help="flight and indicator files to analysis inputs")
    pipe.add_argument("--flights", required=True)
    pipe.add_argument("--covariates", required=True)
    pipe.add_argument("--mode", choices=["weighted", "unweighted"], default="unweighted")
    pipe.add_argument("--outcome", choices=["incidence", "aid"], default="incidence")
    pipe.add_argument("--month", default=None)
    pipe.add_argument("--q3-exclude-zeros", action="store_true")
    pipe.add_argument("--q3-include-diagonal", action="store_true")
    pipe.set_defaults(handler=cmd_pipeline)
    return parser


def _load_config(path: str) -> dict:
    try:
        with open(_existing(path)) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(cfg, dict) and "schema_version" in cfg and isinstance(cfg.get("config"), dict):
        cfg = cfg["config"]
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def parse_args(argv=None):
    """Parse flags; values from ``--config`` become defaults, so typed flags win."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        cfg = _load_config(known.config)
        commands = parser._subparsers._group_actions[0].choices
        command = next((tok for tok in argv if tok in commands), None)
        if command is not None:
            sub = commands[command]
            actions = {a.dest: a for a in sub._actions}
            unknown = sorted(k for k in cfg if k not in actions and k not in _UNRECORDED)
            if unknown:
                raise UsageError(f"{known.config}: unknown key(s) {', '.join(unknown)}")
            for key, value in cfg.items():
                action = actions.get(key)
                if key in _UNRECORDED or action is None or not action.option_strings:
                    continue
                if action.choices is not None and value not in action.choices:
                    raise UsageError(f"{known.config}: {key}={value!r} not one of {sorted(action.choices)}")
                action.required = False
                sub.set_defaults(**{key: value})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"netgee: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"netgee: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"netgee: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ExperimentBudgetError as exc:
        print(f"netgee: experiment failure budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ValueError, OSError) as exc:
        print(f"netgee: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
