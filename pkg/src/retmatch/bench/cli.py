"""Command-line entry point: ``retmatch <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from ..errors import BudgetError, ConfigError, DegenerateInputError
from ..pipeline import run_realworld_protocol
from .charts import emit_charts
from .config import SWEEP_AXES, apply_override, config_hash, resolve_config, resolve_realworld, set_value
from .export import read_csv, write_results
from .lemmas import lemma_check
from .runner import ResultTable, records_to_rows, optimal_compare, run_experiment, run_sweep, small_scale_config

log = logging.getLogger("retmatch")

# flag -> dotted config key
FLAG_KEYS = {
    "n_x": "world.n_x",
    "n_y": "world.n_y",
    "d": "world.d",
    "kappa": "world.kappa",
    "delta": "world.noise_delta",
    "drift": "world.drift",
    "K": "protocol.K",
    "T": "protocol.T",
    "rho": "protocol.rho",
    "probe_prob": "protocol.probe_prob",
    "match_mode": "protocol.match_mode",
    "weight_family": "protocol.weight_family",
    "record_interval": "protocol.record_interval",
    "lam": "protocol.fairco_lambda",
    "retention_model": "model.retention_model",
    "n_train": "model.n_train",
    "workers": "run.workers",
    "output": "run.output",
    "budget": "run.optimal_budget",
}


def parse_seed_list(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            s = int(part)
        except ValueError:
            raise ConfigError(f"seed {part!r} is not an integer") from None
        if not 0 <= s < 2**64:
            raise ConfigError(f"seed {s} is not a 64-bit unsigned integer")
        seeds.append(s)
    if not seeds:
        raise ConfigError("--seed-list is empty")
    return seeds


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML file or preset name")
    p.add_argument("--n-x", dest="n_x", type=int)
    p.add_argument("--n-y", dest="n_y", type=int)
    p.add_argument("--n-xy", dest="n_xy", type=int, help="sets both sides")
    p.add_argument("--d", type=int)
    p.add_argument("--kappa", type=float)
    p.add_argument("--delta", type=float, help="match-probability noise scale")
    p.add_argument("--drift", choices=("on", "off"))
    p.add_argument("--K", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--probe-prob", dest="probe_prob", type=float)
    p.add_argument("--match-mode", dest="match_mode", choices=("sampled", "expected"))
    p.add_argument("--weight-family", dest="weight_family")
    p.add_argument("--record-interval", dest="record_interval", type=int)
    p.add_argument("--lambda", dest="lam", type=float, help="FairCo strength")
    p.add_argument("--retention-model", dest="retention_model", choices=("boosted", "cluster_binned"))
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--policies", help="comma-separated policy names")
    p.add_argument("--seed-list", dest="seed_list", help="comma-separated seeds")
    p.add_argument("--workers", type=int)
    p.add_argument("--output", help="output directory")
    p.add_argument("--set", dest="sets", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--no-charts", dest="charts", action="store_false")


def build_config(args):
    cfg = resolve_config(args.config)
    for flag, key in FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            apply_override(cfg, key, v == "on" if flag == "drift" else v)
    if getattr(args, "n_xy", None) is not None:
        cfg.world.n_x = cfg.world.n_y = args.n_xy
    if getattr(args, "policies", None):
        cfg.policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    if getattr(args, "seed_list", None):
        cfg.run.seeds = parse_seed_list(args.seed_list)
    for item in getattr(args, "sets", []):
        if "=" not in item:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        apply_override(cfg, key.strip(), value.strip())
    cfg.validate()
    return cfg


def _summary(table: ResultTable) -> dict:
    out = {}
    for r in table.final_rows():
        key = r["policy"] if r.get("axis_value") is None else f"{r['policy']}@{r['axis_value']}"
        entry = out.setdefault(key, {f: [] for f in ("matches_per_user", "retention_rate")})
        for f in entry:
            entry[f].append(r[f])
    return {k: {f: sum(v) / len(v) for f, v in e.items()} for k, e in out.items()}


def _finish(table, outdir, stem, charts):
    paths = write_results(table, outdir, stem)
    if charts:
        emit_charts(table, outdir, stem)
    return {k: str(v) for k, v in paths.items()}


def cmd_simulate(args) -> dict:
    cfg = build_config(args)
    start = time.perf_counter()
    table = run_experiment(cfg)
    files = _finish(table, args.output or cfg.run.output, "simulate", args.charts)
    return {
        "command": "simulate",
        "config_hash": config_hash(cfg),
        "seeds": cfg.run.seeds,
        "seconds": round(time.perf_counter() - start, 3),
        "final_seed_mean": _summary(table),
        "files": files,
    }


def _parse_values(axis: str, text: str) -> list:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if axis in ("weight_family",):
            out.append(part)
        elif axis == "drift":
            out.append(part.lower() in ("1", "true", "on", "yes"))
        elif axis in ("T", "n_xy", "n_train"):
            out.append(int(part))
        else:
            out.append(float(part))
    return out


def cmd_sweep(args) -> dict:
    if args.axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {args.axis!r}; expected one of {sorted(SWEEP_AXES)}")
    cfg = build_config(args)
    values = _parse_values(args.axis, args.values)
    start = time.perf_counter()
    table = run_sweep(cfg, args.axis, values)
    files = _finish(table, args.output or cfg.run.output, f"sweep_{args.axis}", args.charts) if values else {}
    return {
        "command": "sweep",
        "axis": args.axis,
        "values": values,
        "seconds": round(time.perf_counter() - start, 3),
        "final_seed_mean": _summary(table),
        "files": files,
    }


def cmd_lemma_check(args) -> dict:
    report = lemma_check(args.trials, args.tolerance, args.seed, reference=args.reference)
    return {"command": "lemma-check", **report.to_dict()}


def cmd_optimal_compare(args) -> dict:
    base = resolve_config(args.config)
    cfg = small_scale_config(base) if args.config is None else base
    if args.seed_list:
        cfg.run.seeds = parse_seed_list(args.seed_list)
    if args.K is not None:
        cfg.protocol.K = args.K
    if args.T is not None:
        cfg.protocol.T = args.T
    if args.budget is not None:
        cfg.run.optimal_budget = args.budget
    cfg.validate()
    start = time.perf_counter()
    report = optimal_compare(cfg)
    return {"command": "optimal-compare", "seconds": round(time.perf_counter() - start, 3), **report.to_dict()}


def cmd_real_pipeline(args) -> dict:
    cfg, run = resolve_realworld(args.config)
    seeds = parse_seed_list(args.seed_list) if args.seed_list else list(run.get("seeds", [0]))
    if args.T is not None:
        set_value(cfg.sim, "protocol", "T", args.T)
    for item in args.sets:
        key, _, value = item.partition("=")
        section, _, name = key.strip().partition(".")
        target = cfg.sim if section == "protocol" else cfg
        if section not in ("protocol", "realworld") or not name:
            raise ConfigError(f"--set for real-pipeline expects realworld.KEY or protocol.KEY, got {key!r}")
        set_value(target, section, name, value.strip())
    cfg.validate()
    start = time.perf_counter()
    table = ResultTable()
    chash = "realworld"
    for seed in seeds:
        table.rows.extend(records_to_rows(run_realworld_protocol(cfg, seed), chash, seed))
    order = {p: i for i, p in enumerate(cfg.policies)}
    table.rows.sort(key=lambda r: (order[r["policy"]], r["seed"], r["step"]))
    outdir = args.output or run.get("output", "results/realworld")
    files = _finish(table, outdir, "realworld", args.charts)
    return {
        "command": "real-pipeline",
        "seeds": seeds,
        "seconds": round(time.perf_counter() - start, 3),
        "final_seed_mean": _summary(table),
        "files": files,
    }


def cmd_plot(args) -> dict:
    table = read_csv(args.input)
    written = emit_charts(table, args.output, Path(args.input).stem)
    return {"command": "plot", "files": [str(p) for p in written]}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="retmatch", description="Retention-aware matching simulations.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one configuration over its seed list")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="vary one parameter")
    _add_common(p)
    p.add_argument("--axis", required=True, help=f"one of {', '.join(sorted(SWEEP_AXES))}")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("lemma-check", help="randomized check of the score's lower bounds")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reference", action="store_true", help="also report counts on the simulator's own curves")
    p.set_defaults(func=cmd_lemma_check)

    p = sub.add_parser("optimal-compare", help="MRet with true curves vs exhaustive search, small market")
    p.add_argument("--config")
    p.add_argument("--seed-list", dest="seed_list")
    p.add_argument("--K", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--budget", type=int)
    p.set_defaults(func=cmd_optimal_compare)

    p = sub.add_parser("real-pipeline", help="sparse-matrix stand-in protocol")
    p.add_argument("--config")
    p.add_argument("--seed-list", dest="seed_list")
    p.add_argument("--T", type=int)
    p.add_argument("--output")
    p.add_argument("--set", dest="sets", action="append", default=[])
    p.add_argument("--no-charts", dest="charts", action="store_false")
    p.set_defaults(func=cmd_real_pipeline)

    p = sub.add_parser("plot", help="charts from a raw CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


EXIT_CODES = {ConfigError: 2, DegenerateInputError: 3, BudgetError: 4}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        result = args.func(args)
    except Exception as exc:  # noqa: BLE001 - reported as one machine-readable line
        code = next((c for t, c in EXIT_CODES.items() if isinstance(exc, t)), 1)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
        return code
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
