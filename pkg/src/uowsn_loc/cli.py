"""Command-line entry point.

Exit status: 0 on success, 1 for configuration or usage errors, 2 when a run
fails.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys

import numpy as np

from .config import SWEEP_AXES, ConfigError, ScenarioConfig, load_config
from .energy import optimize_duty_cycle
from .graph import read_graph_csv
from .harness import (
    CSV_COLUMNS,
    NO_SWEEP,
    apply_sweep_value,
    duty_cycle_problem,
    emit_csv,
    run_sweep,
    trial_graph,
    with_seed,
    write_jsonl,
    write_rows,
)
from .localization import LocalizeOptions, localize

log = logging.getLogger("uowsn_loc")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

CRLB_COLUMNS = (
    "sweep_axis",
    "sweep_value",
    "n_sensors",
    "n_anchors",
    "tx_range",
    "noise_variance",
    "trials",
    "crlb_analytic",
    "crlb_oracle",
    "rmspe_mean",
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _emit(rows, out, columns):
    if out:
        emit_csv(rows, out, columns)
    else:
        write_rows(sys.stdout, rows, columns)


def _parse_values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --values list {text!r}") from exc


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = with_seed(cfg, args.seed)
    return cfg


def _cmd_run(args) -> int:
    cfg = _load(args)
    sweep = run_sweep(cfg, axis=NO_SWEEP, workers=args.workers)
    _emit(sweep.rows, args.out, CSV_COLUMNS)
    if args.jsonl:
        write_jsonl(sweep, args.jsonl)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    values = _parse_values(args.values) if args.values else None
    sweep = run_sweep(cfg, axis=args.axis, values=values, workers=args.workers)
    _emit(sweep.rows, args.out, CSV_COLUMNS)
    if args.jsonl:
        write_jsonl(sweep, args.jsonl)
    return EXIT_OK


def _finite_mean(xs) -> float:
    xs = [x for x in xs if math.isfinite(x)]
    return float(np.mean(xs)) if xs else float("nan")


def _cmd_crlb(args) -> int:
    cfg = _load(args)
    if cfg.localization.crlb != "both":
        cfg = cfg.with_section("localization", crlb="both")
    sweep = run_sweep(cfg, workers=args.workers)
    rows = []
    for value, results in zip(sweep.values, sweep.trials):
        scen = apply_sweep_value(cfg, sweep.axis, value)
        conn = [r for r in results if r.connected]
        proposed = [
            r.rmspe.get("proposed", math.nan) for r in conn if r.converged.get("proposed")
        ]
        rows.append(
            {
                "sweep_axis": sweep.axis,
                "sweep_value": value,
                "n_sensors": scen.deployment.n_sensors,
                "n_anchors": scen.deployment.n_anchors,
                "tx_range": scen.deployment.tx_range,
                "noise_variance": scen.noise.variance,
                "trials": len(results),
                "crlb_analytic": _finite_mean([r.crlb_analytic for r in conn]),
                "crlb_oracle": _finite_mean([r.crlb for r in conn]),
                "rmspe_mean": _finite_mean(proposed),
            }
        )
    _emit(rows, args.out, CRLB_COLUMNS)
    return EXIT_OK


def _cmd_duty_cycle(args) -> int:
    cfg = _load(args)
    if not 0 <= args.node < cfg.deployment.n_sensors:
        raise ConfigError(f"--node must lie in [0, {cfg.deployment.n_sensors})")
    problem = duty_cycle_problem(cfg, args.trial, args.node)
    rates = problem.arrival_rates
    sched = optimize_duty_cycle(problem)
    trace = sched.battery_trace if sched.battery_trace is not None else np.full(problem.n_slots, math.nan)
    rows = [
        {"slot": t + 1, "arrival": rates[t], "duty_cycle": sched.duty_cycles[t], "battery": trace[t],
         "active": bool(sched.active_slots[t])}
        for t in range(problem.n_slots)
    ]
    _emit(rows, args.out, ("slot", "arrival", "duty_cycle", "battery", "active"))
    log.info("mean duty cycle %.6g, feasible=%s", sched.objective, sched.feasible)
    return EXIT_OK


def _cmd_localize(args) -> int:
    if bool(args.graph) == bool(args.config):
        raise ConfigError("give exactly one of --graph or --config")
    if args.config:
        cfg = _load(args)
        graph, _ = trial_graph(cfg, args.trial)
        if graph is None:
            raise RuntimeError(f"trial {args.trial} has no active sensor")
        loc = cfg.localization
        opts = LocalizeOptions(loc.matrix_mode, loc.max_iters, loc.tol, loc.init, loc.fill_weight_ratio)
    else:
        try:
            graph = read_graph_csv(args.graph)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read graph {args.graph}: {exc}") from exc
        opts = LocalizeOptions()
    res = localize(graph, opts, rng=np.random.default_rng(0))
    truth = graph.true_positions
    n = graph.n_sensors
    fh = open(args.out, "w", newline="", encoding="ascii") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x_true", "y_true", "x_est", "y_est"])
        for i in range(n):
            xt, yt = truth[i] if truth is not None else (math.nan, math.nan)
            w.writerow([i, repr(float(xt)), repr(float(yt)), repr(float(res.estimates[i, 0])),
                        repr(float(res.estimates[i, 1]))])
        w.writerow([])
        w.writerow(["rmspe", "iterations", "converged"])
        w.writerow([repr(float(res.rmspe)), res.iterations, str(res.converged).lower()])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uowsn-loc", description="Localization experiments for optical underwater sensor networks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", required=True, help="scenario TOML file")
        sp.add_argument("--seed", type=int, help="override experiment.master_seed")
        sp.add_argument("--workers", type=int, help="worker processes (default: experiment.workers)")
        sp.add_argument("--out", help="output CSV path (default: stdout)")

    sp = sub.add_parser("run", help="run the configured scenario without sweeping")
    common(sp)
    sp.add_argument("--jsonl", help="also dump per-trial records as JSON lines")
    sp.set_defaults(func=_cmd_run)

    sp = sub.add_parser("sweep", help="sweep one scenario parameter")
    common(sp)
    sp.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sp.add_argument("--values", help="comma-separated sweep values (default: experiment.sweep_values)")
    sp.add_argument("--jsonl", help="also dump per-trial records as JSON lines")
    sp.set_defaults(func=_cmd_sweep)

    sp = sub.add_parser("crlb", help="bounds next to the proposed localizer's accuracy")
    common(sp)
    sp.set_defaults(func=_cmd_crlb)

    sp = sub.add_parser("duty-cycle", help="optimal duty cycles and battery trace of one sensor")
    sp.add_argument("--config", required=True, help="scenario TOML file")
    sp.add_argument("--seed", type=int, help="override experiment.master_seed")
    sp.add_argument("--trial", type=int, default=0)
    sp.add_argument("--node", type=int, default=0)
    sp.add_argument("--out", help="output CSV path (default: stdout)")
    sp.set_defaults(func=_cmd_duty_cycle)

    sp = sub.add_parser("localize", help="localize one graph from a CSV edge list or a scenario")
    sp.add_argument("--graph", help="edge-list CSV with a .nodes.csv sidecar")
    sp.add_argument("--config", help="scenario TOML file (one trial is generated)")
    sp.add_argument("--seed", type=int, help="override experiment.master_seed")
    sp.add_argument("--trial", type=int, default=0)
    sp.add_argument("--out", help="output CSV path (default: stdout)")
    sp.set_defaults(func=_cmd_localize)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "workers", None) is not None and args.workers < 1:
        print("uowsn-loc: error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"uowsn-loc: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BrokenPipeError:
        # downstream reader (e.g. ``head``) closed early; not a failure
        sys.stderr.close()
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - any failure of a run maps to exit 2
        print(f"uowsn-loc: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
