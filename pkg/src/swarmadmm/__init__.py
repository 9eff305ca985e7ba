"""Distributed multi-drone trajectory planning with consensus ADMM."""

from .admm import ADMMConfig, SwarmIterate, admm_round, run_admm
from .dynamics import DroneParams, Quadrotor, rk4_step, rollout
from .graph import CommGraph
from .netsim import Channel, ChannelConfig
from .runner import mpc_loop, write_outputs
from .scenario import ScenarioConfig, load_scenario

__all__ = [
    "ADMMConfig", "SwarmIterate", "admm_round", "run_admm",
    "DroneParams", "Quadrotor", "rk4_step", "rollout",
    "CommGraph", "Channel", "ChannelConfig",
    "mpc_loop", "write_outputs", "ScenarioConfig", "load_scenario",
]
__version__ = "0.1.0"
