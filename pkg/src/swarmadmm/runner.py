"""Receding-horizon loop around consensus ADMM, and its file outputs."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import admm, dynamics, trajopt
from .netsim import Channel, DirectExchange, write_delivery_csv
from .scenario import ScenarioConfig

log = logging.getLogger(__name__)

STATE_COLUMNS = ["px", "py", "pz", "vx", "vy", "vz", "roll", "pitch", "yaw", "wx", "wy", "wz"]
INPUT_COLUMNS = ["thrust", "tau_x", "tau_y", "tau_z"]


class MPCStepError(RuntimeError):
    def __init__(self, step, err):
        super().__init__(f"MPC step {step}: {err}")
        self.step = step
        self.cause = err


class SwarmMPCProblem:
    """Per-agent local MPC subproblems for one receding-horizon step."""

    def __init__(self, cfg: ScenarioConfig, layout, model):
        self.cfg = cfg
        self.layout = layout
        self.model = model
        self.x_refs = [cfg.goal_state(i) for i in range(cfg.n_agents)]

    def primal_update(self, i, theta, lam, midpoints, rho):
        c = self.cfg
        return trajopt.solve_primal(theta, i, self.x_refs[i], lam, midpoints, rho,
                                    c.graph, c.mpc, c.solver, self.model)

    def objective(self, i, theta):
        return trajopt.local_cost(theta, i, self.x_refs[i], self.cfg.graph, self.cfg.mpc)


@dataclass
class RunResult:
    states: np.ndarray  # (T+1, N, 12) executed states
    inputs: np.ndarray  # (T, N, 4) applied inputs
    residuals: list = field(default_factory=list)  # per MPC step: list[ResidualRecord]
    converged: list = field(default_factory=list)  # per MPC step
    min_distance: np.ndarray = None  # (T+1,), inf for a single agent
    goal_reached_step: list = field(default_factory=list)
    delivery_log: list = field(default_factory=list)

    @property
    def n_steps(self):
        return self.inputs.shape[0]

    @property
    def n_agents(self):
        return self.states.shape[1]


def initial_guess(cfg: ScenarioConfig, layout):
    """Straight-line positions to the goal over the horizon, hover inputs."""
    theta = layout.zeros()
    s = np.linspace(0.0, 1.0, layout.H + 1)[:, None]
    for a in range(cfg.n_agents):
        xs = np.zeros((layout.H + 1, layout.nx))
        p0, pg = cfg.initial_states[a, :3], cfg.goal_positions[a]
        xs[:, :3] = (1 - s) * p0 + s * pg
        layout.set_states(theta, a, xs)
        layout.set_inputs(theta, a, np.tile(cfg.drone_params.hover_input(), (layout.H, 1)))
    return theta


def shift(theta, layout):
    """Drop the first stage of every block and repeat the last."""
    out = theta.copy()
    for a in range(layout.n_agents):
        xs = layout.states(out, a)
        xs[:-1] = xs[1:].copy()
        us = layout.inputs(out, a)
        us[:-1] = us[1:].copy()
    return out


def pairwise_min_distance(positions):
    n = positions.shape[0]
    if n < 2:
        return np.inf
    d = positions[:, None, :] - positions[None, :, :]
    r = np.sqrt(np.sum(d * d, axis=-1))
    return float(r[np.triu_indices(n, 1)].min())


def at_goal(cfg: ScenarioConfig, states):
    pos_err = np.linalg.norm(states[:, :3] - cfg.goal_positions, axis=1)
    speed = np.linalg.norm(states[:, 3:6], axis=1)
    return (pos_err <= cfg.goal_tolerance) & (speed < cfg.speed_tolerance)


def mpc_loop(cfg: ScenarioConfig, exchange="netsim") -> RunResult:
    """Run consensus-ADMM MPC until every agent is at rest at its goal.

    `exchange` selects the message layer: ``"netsim"`` (seeded channel,
    logged) or ``"direct"`` (in-memory, lossless).
    """
    N = cfg.n_agents
    model = dynamics.Quadrotor(cfg.drone_params)
    lay = trajopt.Layout(N, cfg.mpc.H)
    problem = SwarmMPCProblem(cfg, lay, model)
    if exchange == "netsim":
        link = Channel(cfg.graph, cfg.channel)
    elif exchange == "direct":
        link = DirectExchange(cfg.graph)
    else:
        raise ValueError(f"unknown exchange {exchange!r}")

    x = np.array(cfg.initial_states, dtype=float)
    states = [x.copy()]
    inputs = []
    residuals, converged = [], []
    min_dist = [pairwise_min_distance(x[:, :3])]
    reached = [None] * N

    guess = initial_guess(cfg, lay)
    thetas = [guess.copy() for _ in range(N)]
    lams = None

    step = 0
    while True:
        done = at_goal(cfg, x)
        for i in np.flatnonzero(done):
            if reached[i] is None:
                reached[i] = step
        if done.all() or step >= cfg.mpc_max_steps:
            break
        try:
            for i in range(N):
                lay.states(thetas[i], i)[0] = x[i]
                thetas[i] = trajopt.with_rollout(thetas[i], i, cfg.mpc, model)
            start = admm.SwarmIterate.start(thetas, cfg.graph, lams)
            it, recs, ok = admm.run_admm(start, cfg.admm, problem, cfg.graph, link)
            u = np.array([lay.inputs(it.thetas[i], i)[0] for i in range(N)])
            x = np.array([dynamics.rk4_step(x[i], u[i], cfg.mpc.h, model) for i in range(N)])
        except Exception as err:
            raise MPCStepError(step, err) from err
        residuals.append(recs)
        converged.append(ok)
        inputs.append(u)
        states.append(x.copy())
        min_dist.append(pairwise_min_distance(x[:, :3]))
        thetas = [shift(t, lay) for t in it.thetas]
        if cfg.warm_start_duals:
            lams = [shift(l, lay) for l in it.lams]
        step += 1
        log.info("MPC step %d: %d ADMM rounds, converged=%s", step, len(recs), ok)

    return RunResult(
        states=np.array(states),
        inputs=np.array(inputs).reshape(len(inputs), N, model.nu),
        residuals=residuals,
        converged=converged,
        min_distance=np.array(min_dist),
        goal_reached_step=reached,
        delivery_log=link.delivery_log() if hasattr(link, "delivery_log") else [],
    )


def _f(v):
    return format(float(v), ".17g")


def write_outputs(result: RunResult, out_dir):
    """Write trajectories.csv, residuals.csv, summary.json and delivery.csv."""
    os.makedirs(out_dir, exist_ok=True)
    T, N = result.n_steps, result.n_agents

    with open(os.path.join(out_dir, "trajectories.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "agent", *STATE_COLUMNS, *INPUT_COLUMNS])
        for k in range(T + 1):
            for a in range(N):
                u = [_f(v) for v in result.inputs[k, a]] if k < T else [""] * len(INPUT_COLUMNS)
                w.writerow([k, a, *(_f(v) for v in result.states[k, a]), *u])

    with open(os.path.join(out_dir, "residuals.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mpc_step", "round", "consensus_residual", "dual_residual"])
        for k, recs in enumerate(result.residuals):
            for r in recs:
                w.writerow([k, r.round, _f(r.consensus_residual), _f(r.dual_residual)])

    md = float(np.min(result.min_distance)) if N > 1 else None
    summary = {
        "n_agents": N,
        "mpc_steps": T,
        "goal_reached_step": result.goal_reached_step,
        "all_reached": all(s is not None for s in result.goal_reached_step),
        "min_distance": md,
        "rounds_per_mpc_step": [len(r) for r in result.residuals],
        "admm_converged": result.converged,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    write_delivery_csv(result.delivery_log, os.path.join(out_dir, "delivery.csv"))


def read_trajectories(path):
    """Parse trajectories.csv back into ``(states, inputs)`` arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    steps = max(int(r["step"]) for r in rows) + 1
    agents = max(int(r["agent"]) for r in rows) + 1
    X = np.zeros((steps, agents, len(STATE_COLUMNS)))
    U = np.zeros((steps - 1, agents, len(INPUT_COLUMNS)))
    for r in rows:
        k, a = int(r["step"]), int(r["agent"])
        X[k, a] = [float(r[c]) for c in STATE_COLUMNS]
        if k < steps - 1:
            U[k, a] = [float(r[c]) for c in INPUT_COLUMNS]
    return X, U
