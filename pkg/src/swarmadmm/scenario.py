"""Scenario files: loading, validation and the built-in demos."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .admm import ADMMConfig
from .dynamics import NX, DroneParams
from .graph import CommGraph, GraphError
from .netsim import ChannelConfig
from .trajopt import MPCConfig, SolverConfig


class ScenarioError(Exception):
    pass


class ParseError(ScenarioError):
    pass


class ValidationError(ScenarioError):
    def __init__(self, field, msg):
        super().__init__(f"{field}: {msg}")
        self.field = field


@dataclass
class ScenarioConfig:
    n_agents: int
    graph: CommGraph
    initial_states: np.ndarray  # (N, 12)
    goal_positions: np.ndarray  # (N, 3)
    drone_params: DroneParams = field(default_factory=DroneParams)
    mpc: MPCConfig = field(default_factory=MPCConfig)
    admm: ADMMConfig = field(default_factory=ADMMConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    mpc_max_steps: int = 200
    goal_tolerance: float = 0.1
    speed_tolerance: float = 0.1
    warm_start_duals: bool = True

    def goal_state(self, i):
        x = np.zeros(NX)
        x[:3] = self.goal_positions[i]
        return x


DEFAULT_MPC = {
    "H": 15,
    "h": 0.05,
    "Q": [10.0, 10.0, 10.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.1, 0.1, 0.1],
    "R": [0.1, 10.0, 10.0, 10.0],
    "d_min": 0.5,
    "input_bounds": [[0.0, 20.0], [-0.1, 0.1], [-0.1, 0.1], [-0.1, 0.1]],
    "state_bounds": None,
    "collision_weight": 3000.0,
    "terminal_weight": True,
}

# tol_consensus is 5% of d_min; tol_dual is rho * 1e-3 (per-round change of 1e-3)
DEFAULT_ADMM = {"rho": 150.0, "max_rounds": 30, "tol_consensus": 0.025, "tol_dual": 0.15}

DEFAULT_SOLVER = {"max_inner_iters": 30, "grad_tol": 1e-4}


def _num(d, key, where, cast=float):
    try:
        v = cast(d[key])
    except KeyError:
        raise ValidationError(key, f"missing in {where}") from None
    except (TypeError, ValueError):
        raise ValidationError(key, f"not a number: {d[key]!r}") from None
    if cast is float and not np.isfinite(v):
        raise ValidationError(key, "must be finite")
    return v


def _vec(v, n, key):
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(key, "not numeric") from None
    if a.shape != (n,):
        raise ValidationError(key, f"expected {n} values, got shape {a.shape}")
    return a


def _bounds(v, n, key):
    if v is None:
        return None, None
    if len(v) != n:
        raise ValidationError(key, f"expected {n} [lo, hi] pairs, got {len(v)}")
    lo, hi = [], []
    for pair in v:
        if pair is None:
            lo.append(None)
            hi.append(None)
            continue
        if len(pair) != 2:
            raise ValidationError(key, f"bound entry {pair!r} is not a [lo, hi] pair")
        lo.append(pair[0])
        hi.append(pair[1])
    lo = [None if b is None else float(b) for b in lo]
    hi = [None if b is None else float(b) for b in hi]
    for a, b in zip(lo, hi):
        if a is not None and b is not None and a > b:
            raise ValidationError(key, f"lo {a} > hi {b}")
    return lo, hi


def from_dict(raw: dict) -> ScenarioConfig:
    """Build and validate a ScenarioConfig from parsed JSON."""
    if not isinstance(raw, dict):
        raise ParseError("scenario must be a JSON object")
    n = _num(raw, "n_agents", "scenario", int)
    if n < 1:
        raise ValidationError("n_agents", "must be >= 1")

    try:
        g = CommGraph.from_edges(n, raw.get("graph", raw.get("edges", [])))
    except GraphError as err:
        raise ValidationError("graph", str(err)) from None
    except (TypeError, ValueError):
        raise ValidationError("graph", "edges must be a list of [i, j] pairs") from None

    x0 = np.zeros((n, NX))
    init = raw.get("initial_states")
    if init is None or len(init) != n:
        raise ValidationError("initial_states", f"need one state per agent ({n})")
    for i, s in enumerate(init):
        s = np.asarray(s, dtype=float)
        if s.shape == (3,):
            x0[i, :3] = s
        elif s.shape == (NX,):
            x0[i] = s
        else:
            raise ValidationError("initial_states", f"agent {i}: expected 3 or {NX} values")
    if not np.all(np.isfinite(x0)):
        raise ValidationError("initial_states", "must be finite")
    goals = raw.get("goal_positions")
    if goals is None or len(goals) != n:
        raise ValidationError("goal_positions", f"need one goal per agent ({n})")
    goals = np.array([_vec(p, 3, "goal_positions") for p in goals])

    dp = raw.get("drone_params", {})
    try:
        params = DroneParams(
            mass=float(dp.get("mass", 1.0)),
            inertia_diag=tuple(dp.get("inertia_diag", (0.01, 0.01, 0.02))),
            gravity=float(dp.get("gravity", 9.81)),
        )
    except ValueError as err:
        raise ValidationError("drone_params", str(err)) from None

    m = {**DEFAULT_MPC, **raw.get("mpc", {})}
    H = _num(m, "H", "mpc", int)
    if H < 1:
        raise ValidationError("H", "must be >= 1")
    h = _num(m, "h", "mpc")
    if h <= 0:
        raise ValidationError("h", "must be positive")
    Q = _vec(m["Q"], NX, "Q")
    if np.any(Q < 0):
        raise ValidationError("Q", "entries must be >= 0")
    R = _vec(m["R"], 4, "R")
    if np.any(R <= 0):
        raise ValidationError("R", "entries must be > 0")
    d_min = _num(m, "d_min", "mpc")
    if d_min <= 0:
        raise ValidationError("d_min", "must be positive")
    cw = _num(m, "collision_weight", "mpc")
    if cw <= 0:
        raise ValidationError("collision_weight", "must be positive")
    ulo, uhi = _bounds(m.get("input_bounds"), 4, "input_bounds")
    xlo, xhi = _bounds(m.get("state_bounds"), NX, "state_bounds")
    u_ref = m.get("input_ref")
    u_ref = params.hover_input() if u_ref is None else _vec(u_ref, 4, "input_ref")
    mpc = MPCConfig(
        H=H, h=h, Q=Q, R=R, d_min=d_min, input_lo=ulo, input_hi=uhi,
        state_lo=xlo, state_hi=xhi, collision_weight=cw,
        state_bound_weight=float(m.get("state_bound_weight", 100.0)),
        terminal_weight=bool(m.get("terminal_weight", True)), input_ref=u_ref,
    )

    a = {**DEFAULT_ADMM, **raw.get("admm", {})}
    rho = _num(a, "rho", "admm")
    if rho <= 0:
        raise ValidationError("rho", "must be positive")
    max_rounds = _num(a, "max_rounds", "admm", int)
    if max_rounds < 1:
        raise ValidationError("max_rounds", "must be >= 1")
    for key in ("tol_consensus", "tol_dual"):
        if _num(a, key, "admm") <= 0:
            raise ValidationError(key, "must be positive")
    admm = ADMMConfig(rho=rho, max_rounds=max_rounds,
                      tol_consensus=float(a["tol_consensus"]), tol_dual=float(a["tol_dual"]))

    try:
        solver = SolverConfig(**{**DEFAULT_SOLVER, **raw.get("solver", {})})
    except (TypeError, ValueError) as err:
        raise ValidationError("solver", str(err)) from None

    c = raw.get("channel", {})
    p_drop = float(c.get("drop_probability", 0.0))
    if not 0.0 <= p_drop < 1.0:
        raise ValidationError("drop_probability", "must be in [0, 1)")
    channel = ChannelConfig(drop_probability=p_drop, seed=int(c.get("seed", 0)))

    steps = _num(raw, "mpc_max_steps", "scenario", int) if "mpc_max_steps" in raw else 200
    if steps < 0:
        raise ValidationError("mpc_max_steps", "must be >= 0")
    tol = _num(raw, "goal_tolerance", "scenario") if "goal_tolerance" in raw else 0.1
    if tol <= 0:
        raise ValidationError("goal_tolerance", "must be positive")

    return ScenarioConfig(
        n_agents=n, graph=g, initial_states=x0, goal_positions=goals,
        drone_params=params, mpc=mpc, admm=admm, solver=solver, channel=channel,
        mpc_max_steps=steps, goal_tolerance=tol,
        warm_start_duals=bool(raw.get("warm_start_duals", True)),
    )


def load_scenario(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as err:
        raise ParseError(f"{path}: {err}") from None
    except OSError as err:
        raise ParseError(f"{path}: {err.strerror}") from None
    return from_dict(raw)


def with_overrides(raw: dict, rho=None, max_rounds=None, seed=None) -> dict:
    raw = copy.deepcopy(raw)
    if rho is not None:
        raw.setdefault("admm", {})["rho"] = rho
    if max_rounds is not None:
        raw.setdefault("admm", {})["max_rounds"] = max_rounds
    if seed is not None:
        raw.setdefault("channel", {})["seed"] = seed
    return raw


def _base(n, edges, init, goals, **extra):
    d = {
        "n_agents": n,
        "graph": edges,
        "initial_states": init,
        "goal_positions": goals,
        "drone_params": {"mass": 1.0, "inertia_diag": [0.01, 0.01, 0.02], "gravity": 9.81},
        "mpc": dict(DEFAULT_MPC),
        "admm": dict(DEFAULT_ADMM),
        "solver": dict(DEFAULT_SOLVER),
        "channel": {"drop_probability": 0.0, "seed": 0},
        "mpc_max_steps": 200,
        "goal_tolerance": 0.1,
    }
    d.update(extra)
    return d


def demo(name: str) -> dict:
    """Raw (JSON-ready) built-in scenario."""
    if name == "single_hover":
        return _base(1, [], [[0.0, 0.0, 1.0]], [[1.0, 0.0, 1.0]])
    if name == "two_drone_swap":
        # small lateral offset so the head-on encounter is not perfectly collinear
        return _base(
            2, [[0, 1]],
            [[-2.0, 0.1, 1.0], [2.0, -0.1, 1.0]],
            [[2.0, 0.1, 1.0], [-2.0, -0.1, 1.0]],
        )
    if name == "triangle":
        r = 1.5
        pts = [[r * np.cos(a), r * np.sin(a), 1.0] for a in (0.0, 2 * np.pi / 3, 4 * np.pi / 3)]
        pts = [[round(c, 12) for c in p] for p in pts]
        return _base(3, [[0, 1], [1, 2], [0, 2]], pts, [pts[1], pts[2], pts[0]])
    raise KeyError(f"unknown demo {name!r}; choose from {', '.join(DEMOS)}")


DEMOS = ("two_drone_swap", "single_hover", "triangle")
