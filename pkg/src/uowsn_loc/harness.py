"""Seeded Monte Carlo trials, parameter sweeps and CSV output."""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .channel import DISTANCE_DOMAIN, received_power
from .config import MDS_BASELINE, PROPOSED, ConfigError, ScenarioConfig
from .crlb import SingularFisherError, crlb_value, fim_analytic, fim_oracle, power_noise_std
from .energy import (
    DutyCycleProblem,
    consumption_for_range,
    optimize_duty_cycle,
    range_for_tx_power,
)
from .graph import NetworkGraph, NoiseSpec, build_graph, deploy_network, is_connected
from .localization import LocalizeOptions, localize, mds_baseline

__all__ = [
    "TrialResult",
    "SweepResult",
    "CSV_COLUMNS",
    "trial_rng",
    "apply_sweep_value",
    "active_set",
    "consumption_power",
    "duty_cycle_problem",
    "trial_graph",
    "write_rows",
    "run_trial",
    "run_trials",
    "run_sweep",
    "aggregate",
    "emit_csv",
    "read_csv",
    "write_jsonl",
    "with_seed",
]

CSV_COLUMNS = (
    "sweep_axis",
    "sweep_value",
    "algorithm",
    "trials",
    "connected_fraction",
    "rmspe_mean",
    "rmspe_std",
    "crlb_mean",
    "iterations_mean",
    "unconverged",
)

NO_SWEEP = "none"

# stream purposes; the trial index and, for per-node draws, the node index
# complete the spawn key
_ENERGY, _DEPLOY, _NOISE, _SNAPSHOT, _INIT = range(5)

# received power at this distance with the configured transmitter is the
# default receiver sensitivity
_REFERENCE_RANGE = 20.0


def trial_rng(master_seed: int, trial: int, purpose: int, node: int | None = None) -> np.random.Generator:
    """Independent stream for one (trial, purpose[, node]) triple."""
    key = (trial, purpose) if node is None else (trial, purpose, node)
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))


@dataclass
class TrialResult:
    trial: int
    seed: int
    n_active: int
    connected: bool
    rmspe: dict[str, float] = field(default_factory=dict)
    iterations: dict[str, int] = field(default_factory=dict)
    converged: dict[str, bool] = field(default_factory=dict)
    crlb: float = float("nan")
    crlb_analytic: float = float("nan")
    fim_deviation: float = float("nan")
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class SweepResult:
    axis: str
    values: list
    trials: list[list[TrialResult]]
    rows: list[dict]


def _as_count(axis: str, value) -> int:
    if float(value) != int(value) or value < 0:
        raise ConfigError(f"sweep axis {axis!r} needs non-negative integer values, got {value}")
    return int(value)


def _scaled_arrivals(cfg: ScenarioConfig, mean: float) -> ScenarioConfig:
    # keep the spread proportional to the mean of the configured interval
    lo, hi = cfg.energy.arrival_min, cfg.energy.arrival_max
    base = 0.5 * (lo + hi)
    if base > 0:
        lo, hi = lo * mean / base, hi * mean / base
    else:
        lo = hi = mean
    return cfg.with_section("energy", enabled=True, arrival_min=lo, arrival_max=hi)


def apply_sweep_value(config: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    """Scenario with the swept parameter set to ``value``.

    ``active_nodes`` deploys ``value`` sensors and bypasses the energy model
    so every deployed sensor is active; ``node_count`` deploys ``value``
    sensors and keeps the energy model as configured.  The two energy axes
    set the mean arrival rate, scaling the configured interval, and differ in
    whether transmission ranges follow the harvest.
    """
    if axis == NO_SWEEP or axis is None:
        return config
    if value is None or (isinstance(value, float) and math.isnan(value)):
        raise ConfigError(f"sweep axis {axis!r} needs a value")
    if axis == "active_nodes":
        cfg = config.with_section("deployment", n_sensors=_as_count(axis, value))
        return cfg.with_section("energy", enabled=False)
    if axis == "node_count":
        return config.with_section("deployment", n_sensors=_as_count(axis, value))
    if axis == "energy_arrival":
        cfg = _scaled_arrivals(config, float(value))
        return cfg.with_section("energy", range_from_harvest=False)
    if axis == "energy_arrival_range":
        cfg = _scaled_arrivals(config, float(value))
        return cfg.with_section("energy", range_from_harvest=True)
    if axis == "tx_range":
        return config.with_section("deployment", tx_range=float(value))
    if axis == "anchors":
        return config.with_section("deployment", n_anchors=_as_count(axis, value))
    if axis == "noise_variance":
        return config.with_section("noise", variance=float(value))
    if axis == "measurements":
        return config.with_section("localization", samples_per_link=_as_count(axis, value))
    raise ConfigError(f"unknown sweep axis {axis!r}")


def _sensitivity(config: ScenarioConfig) -> float:
    if config.energy.sensitivity is not None:
        return config.energy.sensitivity
    return received_power(config.channel, _REFERENCE_RANGE)


def consumption_power(config: ScenarioConfig) -> float:
    e = config.energy
    if e.consumption is not None:
        return e.consumption
    target = e.target_range if e.target_range is not None else config.deployment.tx_range
    return consumption_for_range(config.channel, target, _sensitivity(config), e.power_scale)


def duty_cycle_problem(config: ScenarioConfig, trial: int, node: int) -> DutyCycleProblem:
    """The duty-cycle LP of one sensor in one trial (its own arrival draw)."""
    e = config.energy
    rng = trial_rng(config.experiment.master_seed, trial, _ENERGY, node)
    return DutyCycleProblem(
        arrival_rates=rng.uniform(e.arrival_min, e.arrival_max, e.slots),
        consumption=consumption_power(config),
        slot_duration=e.slot_duration,
        leak=e.leak,
        store_efficiency=e.store_efficiency,
        initial_battery=e.initial_battery,
        capacity=e.capacity,
        activity_threshold=e.threshold,
    )


def active_set(config: ScenarioConfig, trial: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Activity flags and (optionally) harvest-driven ranges for the sensors of a trial.

    Each sensor solves its duty-cycle LP and is active when its duty cycle
    in a common, randomly drawn snapshot slot exceeds the threshold.  Dead
    sensors are inactive.
    """
    n = config.deployment.n_sensors
    e = config.energy
    if not e.enabled:
        return np.ones(n, dtype=bool), None
    slot = int(trial_rng(config.experiment.master_seed, trial, _SNAPSHOT).integers(e.slots))
    active = np.zeros(n, dtype=bool)
    ranges = np.empty(n) if e.range_from_harvest else None
    for node in range(n):
        problem = duty_cycle_problem(config, trial, node)
        sched = optimize_duty_cycle(problem)
        active[node] = sched.feasible and bool(sched.active_slots[slot])
        if ranges is not None:
            optical = e.store_efficiency * float(problem.arrival_rates.mean()) / e.power_scale
            ranges[node] = range_for_tx_power(config.channel, optical, _sensitivity(config))
    return active, ranges


def trial_graph(config: ScenarioConfig, trial: int) -> tuple[NetworkGraph | None, int]:
    """Ranging graph of a trial and its active-sensor count (graph is None with no active sensor)."""
    seed = config.experiment.master_seed
    d = config.deployment
    active, ranges = active_set(config, trial)
    deployment = deploy_network(
        d.n_sensors,
        d.n_anchors,
        trial_rng(seed, trial, _DEPLOY),
        area=d.area,
        anchor_layout=d.anchor_layout,
        tx_range=d.tx_range,
    ).with_active(active)
    if ranges is not None:
        tx = deployment.tx_range.copy()
        tx[: d.n_sensors] = ranges
        deployment = deployment.with_range(tx)
    n_active = int(active.sum())
    if n_active == 0:
        return None, 0
    noise = NoiseSpec(config.noise.mode, config.noise.variance)
    graph = build_graph(
        deployment,
        config.channel,
        noise,
        trial_rng(seed, trial, _NOISE),
        samples_per_link=config.localization.samples_per_link,
    )
    return graph, n_active


def _crlb(config: ScenarioConfig, graph) -> tuple[float, float, float]:
    kind = config.localization.crlb
    if kind == "none":
        return float("nan"), float("nan"), float("nan")
    n = graph.n_sensors
    pos = graph.true_positions
    adj = graph.adjacency.copy()
    # anchor pairs carry no unknowns; drop them so both forms see the same links
    adj[n:, n:] = False
    noise = config.noise
    per_link = math.sqrt(noise.variance) / math.sqrt(config.localization.samples_per_link)
    oracle = analytic = deviation = float("nan")
    fo = fa = None
    if kind in ("oracle", "both"):
        fo = fim_oracle(pos, adj, n, config.channel, per_link, mode=noise.mode)
        try:
            oracle = crlb_value(fo, adj).per_node
        except SingularFisherError:
            pass
    if kind in ("analytic", "both"):
        if noise.mode == DISTANCE_DOMAIN:
            diff = pos[:, None, :] - pos[None, :, :]
            d = np.sqrt((diff**2).sum(axis=-1))
            np.fill_diagonal(d, 1.0)
            sigma = power_noise_std(config.channel, d, per_link)
        else:
            sigma = per_link
        fa = fim_analytic(pos, adj, n, config.channel, sigma)
        try:
            analytic = crlb_value(fa, adj).per_node
        except SingularFisherError:
            pass
    if fo is not None and fa is not None:
        scale = np.abs(fo.matrix).max()
        if scale > 0:
            deviation = float(np.abs(fa.matrix - fo.matrix).max() / scale)
    return oracle, analytic, deviation


def run_trial(config: ScenarioConfig, trial: int) -> TrialResult:
    """One seeded Monte Carlo realisation of ``config``.

    Disconnected networks are reported with ``connected=False`` and no
    accuracy figures.  Deterministic in ``(config, trial)``.
    """
    start = time.perf_counter()
    seed = config.experiment.master_seed
    graph, n_active = trial_graph(config, trial)
    result = TrialResult(trial=trial, seed=seed, n_active=n_active, connected=False)
    result.connected = graph is not None and is_connected(graph)
    if not result.connected:
        result.wall_time = time.perf_counter() - start
        return result

    loc = config.localization
    for algo in loc.algorithms:
        try:
            if algo == PROPOSED:
                opts = LocalizeOptions(
                    mode=loc.matrix_mode,
                    max_iters=loc.max_iters,
                    tol=loc.tol,
                    init=loc.init,
                    fill_weight_ratio=loc.fill_weight_ratio,
                )
                res = localize(graph, opts, rng=trial_rng(seed, trial, _INIT))
            elif algo == MDS_BASELINE:
                res = mds_baseline(graph)
            else:
                raise ConfigError(f"unknown algorithm {algo!r}")
        except np.linalg.LinAlgError:
            result.rmspe[algo] = float("nan")
            result.iterations[algo] = 0
            result.converged[algo] = False
            continue
        result.rmspe[algo] = float(res.rmspe)
        result.iterations[algo] = int(res.iterations)
        result.converged[algo] = bool(res.converged)

    result.crlb, result.crlb_analytic, result.fim_deviation = _crlb(config, graph)
    result.wall_time = time.perf_counter() - start
    return result


def _run_one(task):
    config, trial = task
    return run_trial(config, trial)


def run_trials(tasks: list[tuple[ScenarioConfig, int]], workers: int = 1) -> list[TrialResult]:
    """Run ``(config, trial)`` tasks, in input order, optionally across processes."""
    if workers <= 1 or len(tasks) <= 1:
        return [_run_one(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, tasks, chunksize=chunk))


def _mean(xs) -> float:
    return float(np.mean(xs)) if len(xs) else float("nan")


def aggregate(axis: str, value, results: list[TrialResult], algorithms) -> list[dict]:
    """One summary row per algorithm, folded in trial order.

    Accuracy means use connected trials whose run converged; disconnected
    trials count only towards ``connected_fraction`` and unconverged ones
    only towards ``unconverged``.  ``crlb_mean`` averages the finite
    bounds of connected trials.
    """
    results = sorted(results, key=lambda r: r.trial)
    connected = [r for r in results if r.connected]
    crlbs = [r.crlb for r in connected if math.isfinite(r.crlb)]
    rows = []
    for algo in algorithms:
        ok = [r for r in connected if r.converged.get(algo) and math.isfinite(r.rmspe.get(algo, math.nan))]
        errs = [r.rmspe[algo] for r in ok]
        rows.append(
            {
                "sweep_axis": axis,
                "sweep_value": value,
                "algorithm": algo,
                "trials": len(results),
                "connected_fraction": len(connected) / len(results) if results else float("nan"),
                "rmspe_mean": _mean(errs),
                "rmspe_std": float(np.std(errs, ddof=1)) if len(errs) > 1 else (0.0 if errs else float("nan")),
                "crlb_mean": _mean(crlbs),
                "iterations_mean": _mean([r.iterations[algo] for r in ok]),
                "unconverged": len(connected) - len(ok),
            }
        )
    return rows


def run_sweep(
    config: ScenarioConfig,
    axis: str | None = None,
    values=None,
    workers: int | None = None,
) -> SweepResult:
    """Run ``trials`` trials at every sweep value and aggregate them.

    ``axis`` and ``values`` default to the experiment section; without an
    axis a single unswept scenario is run.  Trial ``t`` uses the same seed
    streams at every sweep value.
    """
    exp = config.experiment
    axis = axis if axis is not None else exp.sweep_axis
    if axis is None or axis == NO_SWEEP:
        axis, values = NO_SWEEP, [None]
    else:
        values = list(values if values is not None else exp.sweep_values)
        if not values:
            raise ConfigError(f"sweep over {axis!r} needs sweep_values")
    workers = workers if workers is not None else exp.workers
    configs = [apply_sweep_value(config, axis, v) for v in values]
    tasks = [(cfg, t) for cfg in configs for t in range(exp.trials)]
    flat = run_trials(tasks, workers)
    grouped = [flat[i * exp.trials: (i + 1) * exp.trials] for i in range(len(values))]
    rows = []
    for v, results in zip(values, grouped):
        rows.extend(aggregate(axis, v, results, config.localization.algorithms))
    return SweepResult(axis, values, grouped, rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def emit_csv(rows: list[dict], path, columns=CSV_COLUMNS) -> Path:
    """Write ``rows`` as CSV with ``repr`` floats (exact round trip).

    Raises
    ------
    ValueError
        For an empty table or an empty path.
    OSError
        When the file cannot be written; the message names the path.
    """
    if not rows:
        raise ValueError("refusing to write an empty table")
    if path is None or str(path) == "":
        raise ValueError("output path must not be empty")
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="ascii") as fh:
            write_rows(fh, rows, columns)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def write_rows(fh, rows, columns) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])


def _parse(v: str):
    if v == "":
        return None
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def read_csv(path) -> list[dict]:
    """Parse a file written by `emit_csv`; numbers come back as int or float."""
    with open(path, newline="", encoding="ascii") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_jsonl(sweep: SweepResult, path) -> Path:
    """Per-trial records, one JSON object per line, for debugging."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for value, results in zip(sweep.values, sweep.trials):
            for r in results:
                rec = {"sweep_axis": sweep.axis, "sweep_value": value, **asdict(r)}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def with_seed(config: ScenarioConfig, seed: int) -> ScenarioConfig:
    return replace(config, experiment=replace(config.experiment, master_seed=seed))
