"""Duty-cycle optimisation for energy-harvesting nodes and the reporting-cost model."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .channel import ChannelParams, range_from_power, received_power

__all__ = [
    "DutyCycleProblem",
    "BatterySchedule",
    "EnergyCostModel",
    "InfeasibleScheduleError",
    "simulate_battery",
    "check_energy_causality",
    "optimize_duty_cycle",
    "classify_active",
    "pairwise_report_cost",
    "consumption_for_range",
    "range_for_tx_power",
]

# slack for round-off in the battery recursion, relative to max(1, B_max)
_FEAS_TOL = 1e-9


class InfeasibleScheduleError(RuntimeError):
    """The battery would go negative; ``slot`` is the 1-based first violating slot."""

    def __init__(self, slot: int, level: float):
        super().__init__(f"battery drops to {level:.6g} J in slot {slot}")
        self.slot = slot
        self.level = level


@dataclass(frozen=True)
class DutyCycleProblem:
    arrival_rates: np.ndarray
    consumption: float
    slot_duration: float = 1.0
    leak: float = 0.0
    store_efficiency: float = 0.9
    initial_battery: float = 1.0
    capacity: float = 10.0
    activity_threshold: float = 0.1

    def __post_init__(self):
        rates = np.asarray(self.arrival_rates, dtype=float).ravel()
        object.__setattr__(self, "arrival_rates", rates)
        if rates.size == 0:
            raise ValueError("need at least one slot")
        if np.any(rates < 0):
            raise ValueError("arrival rates must be non-negative")
        if self.consumption <= 0:
            raise ValueError("consumption power must be positive")
        if self.leak < 0:
            raise ValueError("leak power must be non-negative")
        if not 0 < self.store_efficiency <= 1:
            raise ValueError("store_efficiency must lie in (0, 1]")
        if not 0 <= self.initial_battery <= self.capacity:
            raise ValueError("need 0 <= initial_battery <= capacity")
        if self.slot_duration <= 0:
            raise ValueError("slot_duration must be positive")

    @property
    def n_slots(self) -> int:
        return self.arrival_rates.size

    def slot_terms(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-slot battery change as ``income + cost * alpha``.

        ``income`` is the passive-state storage minus leakage; ``cost`` (always
        negative) is the change per unit of duty cycle.  Only one of the two
        brackets is non-zero in a slot, so the recursion is affine in alpha.
        """
        T, eta, pc = self.slot_duration, self.store_efficiency, self.consumption
        ph = self.arrival_rates
        income = eta * T * ph - T * self.leak
        cost = eta * T * np.maximum(ph - pc, 0.0) - eta * T * ph - T * np.maximum(pc - ph, 0.0)
        return income, cost


@dataclass
class BatterySchedule:
    duty_cycles: np.ndarray
    battery_trace: np.ndarray | None
    objective: float
    active_slots: np.ndarray
    feasible: bool = True
    lp_objective: float = field(default=float("nan"), repr=False)

    @property
    def dead(self) -> bool:
        return not self.feasible


@dataclass(frozen=True)
class EnergyCostModel:
    node_count: float
    packet_ratio: float = 1.0
    avg_neighbors: float = 1.0
    energy_per_bit: float = 1.0

    def __post_init__(self):
        for name in ("node_count", "packet_ratio", "avg_neighbors", "energy_per_bit"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def _check_alpha(problem: DutyCycleProblem, alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float).ravel()
    if alpha.size != problem.n_slots:
        raise ValueError(f"expected {problem.n_slots} duty cycles, got {alpha.size}")
    if np.any(alpha < 0) or np.any(alpha > 1):
        raise ValueError("duty cycles must lie in [0, 1]")
    return alpha


def simulate_battery(problem: DutyCycleProblem, alpha) -> np.ndarray:
    """Battery level at the end of each slot for the duty cycles ``alpha``.

    Harvest that would push the level past capacity is discarded.

    Raises
    ------
    InfeasibleScheduleError
        If the level goes negative in some slot.
    """
    alpha = _check_alpha(problem, alpha)
    income, cost = problem.slot_terms()
    delta = income + cost * alpha
    tol = _FEAS_TOL * max(1.0, problem.capacity)
    trace = np.empty(problem.n_slots)
    b = problem.initial_battery
    for t in range(problem.n_slots):
        b = b + delta[t]
        if b < -tol:
            raise InfeasibleScheduleError(t + 1, b)
        b = min(max(b, 0.0), problem.capacity)
        trace[t] = b
    return trace


def check_energy_causality(problem: DutyCycleProblem, alpha, battery_trace) -> bool:
    """True if no slot consumed more energy than was stored before it."""
    alpha = _check_alpha(problem, alpha)
    trace = np.asarray(battery_trace, dtype=float).ravel()
    if trace.size != problem.n_slots:
        return False
    income, cost = problem.slot_terms()
    before = np.concatenate(([problem.initial_battery], trace[:-1]))
    tol = _FEAS_TOL * max(1.0, problem.capacity)
    return bool(np.all(before + income + cost * alpha >= -tol))


def _repair(problem: DutyCycleProblem, alpha: np.ndarray) -> np.ndarray:
    # shave round-off deficits left by the LP so the clamped recursion stays >= 0
    income, cost = problem.slot_terms()
    alpha = np.clip(alpha, 0.0, 1.0)
    b = problem.initial_battery
    for t in range(problem.n_slots):
        nxt = b + income[t] + cost[t] * alpha[t]
        if nxt < 0:
            alpha[t] = max(0.0, alpha[t] + nxt / -cost[t])
            nxt = max(b + income[t] + cost[t] * alpha[t], 0.0)
        b = min(nxt, problem.capacity)
    return alpha


def _dead_schedule(problem: DutyCycleProblem) -> BatterySchedule:
    n = problem.n_slots
    return BatterySchedule(
        duty_cycles=np.zeros(n),
        battery_trace=None,
        objective=0.0,
        active_slots=np.zeros(n, dtype=bool),
        feasible=False,
    )


def optimize_duty_cycle(problem: DutyCycleProblem) -> BatterySchedule:
    """Maximise the mean duty cycle subject to battery dynamics and bounds.

    The LP carries battery levels as variables with
    ``B(t) <= B(t-1) + income(t) + cost(t) * alpha(t)``; the inequality lets
    harvest spill at capacity.  Since every unit of duty cycle costs energy,
    the all-passive schedule is the cheapest one: if it is infeasible the node
    is dead and a schedule with ``feasible=False`` is returned.
    """
    try:
        simulate_battery(problem, np.zeros(problem.n_slots))
    except InfeasibleScheduleError:
        return _dead_schedule(problem)

    n = problem.n_slots
    income, cost = problem.slot_terms()
    # variables: [alpha_1..alpha_n, B_1..B_n]
    rows = np.arange(n)
    a_ub = sparse.lil_matrix((n, 2 * n))
    a_ub[rows, rows] = -cost
    a_ub[rows, n + rows] = 1.0
    a_ub[rows[1:], n + rows[:-1]] = -1.0
    b_ub = income.copy()
    b_ub[0] += problem.initial_battery
    c = np.concatenate((-np.ones(n) / n, np.zeros(n)))
    bounds = [(0.0, 1.0)] * n + [(0.0, problem.capacity)] * n
    res = linprog(c, A_ub=a_ub.tocsr(), b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"duty-cycle LP failed: {res.message}")

    alpha = _repair(problem, res.x[:n].copy())
    trace = simulate_battery(problem, alpha)
    return BatterySchedule(
        duty_cycles=alpha,
        battery_trace=trace,
        objective=float(alpha.mean()),
        active_slots=alpha > problem.activity_threshold,
        lp_objective=float(-res.fun),
    )


def classify_active(schedule: BatterySchedule, beta: float) -> np.ndarray:
    """Per-slot activity flags: a slot is active iff its duty cycle exceeds ``beta``."""
    return np.asarray(schedule.duty_cycles) > beta


def pairwise_report_cost(model: EnergyCostModel) -> float:
    """Energy for all nodes to ship their pairwise ranges to the surface.

    Grows as ``K**1.5`` (packets per node times average hop count).
    """
    k = float(model.node_count)
    # K*sqrt(K) keeps E(4K) == 8*E(K) bit-exact
    return (model.packet_ratio * model.avg_neighbors) * (k * math.sqrt(k)) * model.energy_per_bit


def consumption_for_range(
    channel: ChannelParams,
    target_range: float,
    sensitivity: float,
    power_scale: float,
) -> float:
    """Electrical consumption needed to reach ``target_range``.

    The optical power that puts ``sensitivity`` watts on the receiver at
    ``target_range`` is scaled by ``power_scale`` (electrical W per optical W).
    """
    if target_range <= 0 or sensitivity <= 0 or power_scale <= 0:
        raise ValueError("target_range, sensitivity and power_scale must be positive")
    per_watt = received_power(channel.with_tx_power(1.0), target_range)
    return power_scale * sensitivity / per_watt


def range_for_tx_power(channel: ChannelParams, tx_power: float, sensitivity: float) -> float:
    """Distance at which a transmitter of ``tx_power`` watts delivers ``sensitivity``."""
    if tx_power <= 0:
        return 0.0
    return range_from_power(channel.with_tx_power(tx_power), sensitivity)
