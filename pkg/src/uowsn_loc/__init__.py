"""Localization of energy-harvesting underwater optical wireless sensor networks.

Submodules: `channel` (optical link model and RSS ranging), `energy`
(duty-cycle optimisation), `graph` (deployment and ranging graph),
`localization` (anchored majorization and the MDS baseline), `crlb`
(Fisher information and bound), `harness` (Monte Carlo sweeps) and `cli`.
"""
from .channel import ChannelParams, lambert_w0, range_from_power, received_power
from .config import ScenarioConfig, load_config
from .crlb import crlb_value, fim_analytic, fim_oracle
from .energy import DutyCycleProblem, optimize_duty_cycle
from .graph import NoiseSpec, build_graph, complete_midrange, deploy_network, shortest_path_complete
from .harness import run_sweep, run_trial
from .localization import LocalizeOptions, localize, mds_baseline, rmspe

__version__ = "0.1.0"

__all__ = [
    "ChannelParams",
    "DutyCycleProblem",
    "LocalizeOptions",
    "NoiseSpec",
    "ScenarioConfig",
    "build_graph",
    "complete_midrange",
    "crlb_value",
    "deploy_network",
    "fim_analytic",
    "fim_oracle",
    "lambert_w0",
    "load_config",
    "localize",
    "mds_baseline",
    "optimize_duty_cycle",
    "range_from_power",
    "received_power",
    "rmspe",
    "run_sweep",
    "run_trial",
    "shortest_path_complete",
]
