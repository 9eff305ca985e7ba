"""
Local primal subproblem of consensus-ADMM MPC.

Each agent keeps a *local copy* ``theta`` of every agent's state and input
trajectories over the horizon, stored as one flat vector. Agent ``a``'s block
is its ``(H+1) x nx`` state trajectory followed by its ``H x nu`` input
trajectory; blocks are ordered by agent id.

For agent ``i`` the free variables are its own inputs (its own states are
the RK4 rollout of those inputs from the measured state) and the full
blocks of every other agent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import dynamics
from .dynamics import DynamicsError, NonFinite
from .graph import CommGraph, neighbors

log = logging.getLogger(__name__)

COINCIDENT = 1e-9


class Layout:
    """Index arithmetic for the stacked local variable."""

    def __init__(self, n_agents, H, nx=dynamics.NX, nu=dynamics.NU):
        self.n_agents = int(n_agents)
        self.H = int(H)
        self.nx = int(nx)
        self.nu = int(nu)
        self.n_states = (self.H + 1) * self.nx
        self.n_inputs = self.H * self.nu
        self.block = self.n_states + self.n_inputs
        self.size = self.n_agents * self.block

    @classmethod
    def for_theta(cls, theta, cfg):
        nx, nu = len(cfg.Q), len(cfg.R)
        block = (cfg.H + 1) * nx + cfg.H * nu
        n, rem = divmod(np.size(theta), block)
        if rem or n < 1:
            raise ValueError(
                f"local variable of length {np.size(theta)} is not a whole number "
                f"of agent blocks of length {block}"
            )
        return cls(n, cfg.H, nx, nu)

    def zeros(self):
        return np.zeros(self.size)

    def state_slice(self, a):
        s = a * self.block
        return slice(s, s + self.n_states)

    def input_slice(self, a):
        s = a * self.block + self.n_states
        return slice(s, s + self.n_inputs)

    def states(self, theta, a):
        """View of agent `a`'s ``(H+1, nx)`` state block."""
        return theta[self.state_slice(a)].reshape(self.H + 1, self.nx)

    def inputs(self, theta, a):
        """View of agent `a`'s ``(H, nu)`` input block."""
        return theta[self.input_slice(a)].reshape(self.H, self.nu)

    def set_states(self, theta, a, xs):
        theta[self.state_slice(a)] = np.asarray(xs, dtype=float).ravel()

    def set_inputs(self, theta, a, us):
        theta[self.input_slice(a)] = np.asarray(us, dtype=float).ravel()

    def all_states(self, theta):
        """``(N, H+1, nx)`` view-compatible copy of every agent's states."""
        blocks = theta.reshape(self.n_agents, self.block)
        return blocks[:, : self.n_states].reshape(self.n_agents, self.H + 1, self.nx)

    def all_inputs(self, theta):
        blocks = theta.reshape(self.n_agents, self.block)
        return blocks[:, self.n_states :].reshape(self.n_agents, self.H, self.nu)


@dataclass
class MPCConfig:
    """Horizon, weights and bounds of one agent's MPC problem.

    `Q` and `R` are diagonals. `input_ref` is the input the input cost is
    measured from (zero by default; the scenario runner sets hover thrust).
    State bounds, when given, are enforced on the agent's own rollout by a
    squared-hinge penalty of weight `state_bound_weight` and by projection
    on the free copies of other agents' states.
    """

    H: int = 15
    h: float = 0.05
    Q: np.ndarray = field(default_factory=lambda: np.ones(dynamics.NX))
    R: np.ndarray = field(default_factory=lambda: np.ones(dynamics.NU))
    d_min: float = 0.5
    input_lo: np.ndarray | None = None
    input_hi: np.ndarray | None = None
    state_lo: np.ndarray | None = None
    state_hi: np.ndarray | None = None
    collision_weight: float = 100.0
    state_bound_weight: float = 100.0
    terminal_weight: bool = True
    input_ref: np.ndarray | None = None
    position_dims: int = 3

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        nx, nu = len(self.Q), len(self.R)
        if int(self.H) != self.H or self.H < 1:
            raise ValueError(f"H must be an integer >= 1, got {self.H}")
        self.H = int(self.H)
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")
        if np.any(self.Q < 0):
            raise ValueError("Q must be positive semidefinite (diagonal entries >= 0)")
        if np.any(self.R <= 0):
            raise ValueError("R must be positive definite (diagonal entries > 0)")
        if not self.d_min > 0:
            raise ValueError(f"d_min must be positive, got {self.d_min}")
        if self.collision_weight < 0:
            raise ValueError("collision_weight must be >= 0")
        self.input_lo = _bound(self.input_lo, nu, -np.inf)
        self.input_hi = _bound(self.input_hi, nu, np.inf)
        if np.any(self.input_lo > self.input_hi):
            raise ValueError("input bounds have lo > hi")
        self.state_lo = _bound(self.state_lo, nx, -np.inf)
        self.state_hi = _bound(self.state_hi, nx, np.inf)
        if np.any(self.state_lo > self.state_hi):
            raise ValueError("state bounds have lo > hi")
        self.input_ref = _bound(self.input_ref, nu, 0.0)

    @property
    def has_state_bounds(self):
        return bool(np.isfinite(self.state_lo).any() or np.isfinite(self.state_hi).any())


def _bound(v, n, fill):
    if v is None:
        return np.full(n, fill, dtype=float)
    v = np.array([fill if b is None else b for b in np.ravel(v)], dtype=float)
    if v.shape != (n,):
        raise ValueError(f"expected {n} bound entries, got {v.shape[0]}")
    return v


@dataclass
class SolverConfig:
    max_inner_iters: int = 50
    grad_tol: float = 1e-6
    step_init: float = 1.0
    step_min: float = 1e-10
    step_max: float = 1e3
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    fd_eps: float = 1e-6

    def __post_init__(self):
        for name in ("max_inner_iters", "grad_tol", "step_init", "step_min", "step_max",
                     "armijo_c", "backtrack", "max_backtracks", "fd_eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.backtrack < 1:
            raise ValueError("backtrack factor must be < 1")


def _ref_traj(x_ref, lay):
    x_ref = np.asarray(x_ref, dtype=float)
    if x_ref.ndim == 1:
        x_ref = np.broadcast_to(x_ref, (lay.H + 1, lay.nx))
    if x_ref.shape != (lay.H + 1, lay.nx):
        raise ValueError(f"x_ref must have shape {(lay.H + 1, lay.nx)}, got {x_ref.shape}")
    return x_ref


def _stage_range(cfg):
    return cfg.H + 1 if cfg.terminal_weight else cfg.H


def tracking_cost(theta, i, x_ref, cfg: MPCConfig) -> float:
    """Quadratic tracking cost of agent `i`'s own block.

    Stage states ``k = 0..H-1`` (plus ``k = H`` when ``cfg.terminal_weight``)
    are weighted by `Q`; inputs, measured from ``cfg.input_ref``, by `R`.
    """
    lay = Layout.for_theta(theta, cfg)
    dx = lay.states(theta, i)[: _stage_range(cfg)] - _ref_traj(x_ref, lay)[: _stage_range(cfg)]
    du = lay.inputs(theta, i) - cfg.input_ref
    return float(np.sum(dx * dx * cfg.Q) + np.sum(du * du * cfg.R))


def _pair_geometry(theta, i, g, cfg, lay):
    nbrs = neighbors(g, i)
    pd = cfg.position_dims
    p_i = lay.states(theta, i)[:, :pd]
    if not nbrs:
        return nbrs, np.zeros((0, lay.H + 1, pd)), np.zeros((0, lay.H + 1))
    p_j = np.stack([lay.states(theta, j)[:, :pd] for j in nbrs])
    d = p_i[None] - p_j
    r = np.sqrt(np.sum(d * d, axis=-1))
    return nbrs, d, r


def collision_penalty(theta, i, g: CommGraph, cfg: MPCConfig) -> float:
    """Squared-hinge penalty on neighbor distances below ``d_min``, k = 0..H."""
    lay = Layout.for_theta(theta, cfg)
    _, _, r = _pair_geometry(theta, i, g, cfg, lay)
    gap = np.maximum(0.0, cfg.d_min - r)
    return float(cfg.collision_weight * np.sum(gap * gap))


def state_bound_penalty(theta, i, cfg: MPCConfig) -> float:
    if not cfg.has_state_bounds:
        return 0.0
    lay = Layout.for_theta(theta, cfg)
    xs = lay.states(theta, i)
    over = np.maximum(0.0, xs - cfg.state_hi) + np.maximum(0.0, cfg.state_lo - xs)
    return float(cfg.state_bound_weight * np.sum(over * over))


def _stack(midpoints, n):
    if len(midpoints) == 0:
        return np.zeros((0, n))
    M = np.stack([np.asarray(m, dtype=float) for m in midpoints])
    if M.shape[1] != n:
        raise ValueError(f"midpoint length {M.shape[1]} does not match variable length {n}")
    return M


def consensus_dual_terms(theta, lam, midpoints, rho) -> float:
    """``lam . theta + rho * sum_j ||theta - midpoint_j||^2``."""
    theta = np.asarray(theta, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if lam.shape != theta.shape:
        raise ValueError(f"dual shape {lam.shape} does not match {theta.shape}")
    M = _stack(midpoints, theta.size)
    diff = theta[None] - M
    return float(lam @ theta + rho * np.sum(diff * diff))


def local_cost(theta, i, x_ref, g, cfg) -> float:
    """Agent objective without the consensus and dual terms."""
    return (tracking_cost(theta, i, x_ref, cfg)
            + collision_penalty(theta, i, g, cfg)
            + state_bound_penalty(theta, i, cfg))


def local_objective(theta, i, x_ref, lam, midpoints, rho, g, cfg) -> float:
    return local_cost(theta, i, x_ref, g, cfg) + consensus_dual_terms(theta, lam, midpoints, rho)


def full_gradient(theta, i, x_ref, lam, midpoints, rho, g, cfg):
    """Partial derivative of `local_objective` w.r.t. every entry of `theta`.

    Treats agent `i`'s own states as independent; see :func:`gradient` for
    the derivative through the rollout.
    """
    theta = np.asarray(theta, dtype=float)
    lay = Layout.for_theta(theta, cfg)
    out = 2.0 * rho * (len(midpoints) * theta - _stack(midpoints, theta.size).sum(axis=0))
    out += lam

    gx = lay.states(out, i)
    gu = lay.inputs(out, i)
    nt = _stage_range(cfg)
    gx[:nt] += 2.0 * cfg.Q * (lay.states(theta, i)[:nt] - _ref_traj(x_ref, lay)[:nt])
    gu += 2.0 * cfg.R * (lay.inputs(theta, i) - cfg.input_ref)

    if cfg.has_state_bounds:
        xs = lay.states(theta, i)
        gx += 2.0 * cfg.state_bound_weight * (
            np.maximum(0.0, xs - cfg.state_hi) - np.maximum(0.0, cfg.state_lo - xs)
        )

    nbrs, d, r = _pair_geometry(theta, i, g, cfg, lay)
    if nbrs and cfg.collision_weight > 0:
        pd = cfg.position_dims
        gap = np.maximum(0.0, cfg.d_min - r)
        safe_r = np.where(r < COINCIDENT, 1.0, r)
        unit = d / safe_r[..., None]
        unit[r < COINCIDENT] = np.eye(pd)[0]
        # d/dp_i of w * (d_min - r)^2 is -2 w gap * unit
        gp = (-2.0 * cfg.collision_weight * gap)[..., None] * unit
        gx[:, :pd] += gp.sum(axis=0)
        for idx, j in enumerate(nbrs):
            lay.states(out, j)[:, :pd] -= gp[idx]
    if not np.all(np.isfinite(out)):
        raise NonFinite("non-finite gradient")
    return out


def chain_rollout(gx, Fx, Fu):
    """Back-propagate state gradients through a rollout onto its inputs.

    `gx` is ``(H+1, nx)`` partial derivatives w.r.t. the rolled-out states;
    returns the ``(H, nu)`` contribution to the input gradient.
    """
    return _chain_rollout(np.ascontiguousarray(gx), np.ascontiguousarray(Fx),
                          np.ascontiguousarray(Fu))


@njit(cache=True)
def _chain_rollout(gx, Fx, Fu):
    H, nx, nu = Fu.shape
    gu = np.empty((H, nu))
    adj = gx[H].copy()
    for k in range(H - 1, -1, -1):
        for c in range(nu):
            acc = 0.0
            for r in range(nx):
                acc += Fu[k, r, c] * adj[r]
            gu[k, c] = acc
        nxt = gx[k].copy()
        for c in range(nx):
            acc = 0.0
            for r in range(nx):
                acc += Fx[k, r, c] * adj[r]
            nxt[c] += acc
        adj = nxt
    return gu


def _model(model):
    return dynamics.as_model(model)


def with_rollout(theta, i, cfg, model=None):
    """Copy of `theta` whose agent-`i` states are the rollout of its inputs."""
    model = _model(model)
    lay = Layout.for_theta(theta, cfg)
    out = np.array(theta, dtype=float)
    xs = dynamics.rollout(lay.states(out, i)[0], lay.inputs(out, i), cfg.h, model)
    lay.set_states(out, i, xs)
    return out


def gradient(theta, i, x_ref, lam, midpoints, rho, g, cfg, model=None):
    """Gradient of `local_objective` w.r.t. agent `i`'s free variables.

    Agent `i`'s states are taken as the rollout of its inputs from
    ``states[0]``, so their partials are chained onto the inputs and the
    state entries of the result are zero. Every other block is free.
    """
    model = _model(model)
    theta = np.asarray(theta, dtype=float)
    lay = Layout.for_theta(theta, cfg)
    xs, Fx, Fu = dynamics.rollout_jac(lay.states(theta, i)[0], lay.inputs(theta, i), cfg.h, model)
    theta = theta.copy()
    lay.set_states(theta, i, xs)
    out = full_gradient(theta, i, x_ref, lam, midpoints, rho, g, cfg)
    lay.inputs(out, i)[...] += chain_rollout(lay.states(out, i), Fx, Fu)
    lay.states(out, i)[...] = 0.0
    if not np.all(np.isfinite(out)):
        raise NonFinite("non-finite gradient")
    return out


def reduced_objective(theta, i, x_ref, lam, midpoints, rho, g, cfg, model=None) -> float:
    """`local_objective` with agent `i`'s states re-derived from its inputs."""
    return local_objective(with_rollout(theta, i, cfg, model), i, x_ref, lam, midpoints, rho, g, cfg)


def project(theta, cfg: MPCConfig, own=None):
    """Clip every input block to the input box and every state block except
    `own` to the state box."""
    lay = Layout.for_theta(theta, cfg)
    out = np.array(theta, dtype=float)
    U = lay.all_inputs(out)
    np.clip(U, cfg.input_lo, cfg.input_hi, out=U)
    if cfg.has_state_bounds:
        X = lay.all_states(out)
        for a in range(lay.n_agents):
            if a != own:
                np.clip(X[a], cfg.state_lo, cfg.state_hi, out=X[a])
    return out


def minimize_projected(fun, grad, x0, project, scfg: SolverConfig, history=None, scale=None):
    """Projected (scaled) gradient descent with Armijo backtracking.

    Trial points are ``project(x - a * scale * g)``. The first trial length
    of each iteration is the Barzilai-Borwein step of the previous accepted
    pair in the metric defined by `scale`, clipped to ``[step_min,
    step_max]``; backtracking then enforces sufficient decrease, so accepted
    objective values never increase. `fun` may raise
    :class:`DynamicsError` at trial points, which rejects the step.

    `project` must be a box projection (separable), so scaling the
    direction keeps each iterate the projection of a descent step.
    Stops when ``||x - project(x - g)|| <= grad_tol``.

    Returns ``(x, f(x), n_iters)``.
    """
    x = project(np.asarray(x0, dtype=float))
    D = np.ones_like(x) if scale is None else np.asarray(scale, dtype=float)
    f = fun(x)
    gx = grad(x)
    if history is not None:
        history.append(f)
    step = scfg.step_init
    n_it = 0
    while n_it < scfg.max_inner_iters:
        if np.linalg.norm(x - project(x - gx)) <= scfg.grad_tol:
            break
        a = step
        accepted = False
        for _ in range(scfg.max_backtracks):
            trial = project(x - a * D * gx)
            try:
                f_trial = fun(trial)
            except DynamicsError:
                a *= scfg.backtrack
                continue
            if np.isfinite(f_trial) and f_trial <= f + scfg.armijo_c * (gx @ (trial - x)):
                accepted = True
                break
            a *= scfg.backtrack
        if not accepted:
            log.debug("line search stalled after %d iterations", n_it)
            break
        n_it += 1
        g_new = grad(trial)
        s = trial - x
        y = g_new - gx
        sy = s @ y
        step = (float(np.clip((s @ (s / D)) / sy, scfg.step_min, scfg.step_max))
                if sy > 0 else scfg.step_max)
        x, f, gx = trial, f_trial, g_new
        if history is not None:
            history.append(f)
    return x, f, n_it


def input_curvature(theta, i, rho, n_nbrs, cfg, model):
    """Gauss-Newton diagonal of the objective w.r.t. agent `i`'s inputs.

    Includes the tracking weights, the consensus pull on every own state
    and input, and the input weights; collision terms are left out.
    """
    lay = Layout.for_theta(theta, cfg)
    _, Fx, Fu = dynamics.rollout_jac(lay.states(theta, i)[0], lay.inputs(theta, i), cfg.h, model)
    H = lay.H
    nt = _stage_range(cfg)
    cons = 2.0 * rho * n_nbrs
    out = np.tile(2.0 * cfg.R + cons, (H, 1))
    for k in range(H):
        S = Fu[k]
        for t in range(k + 1, H + 1):
            w = (2.0 * cfg.Q if t < nt else 0.0) + cons
            out[k] += np.sum(w[:, None] * S * S, axis=0) if np.ndim(w) else w * np.sum(S * S, axis=0)
            if t < H:
                S = Fx[t] @ S
    return out


def solve_primal(initial_guess, i, x_ref, lam, midpoints, rho, g, cfg: MPCConfig,
                 scfg: SolverConfig | None = None, model=None, history=None):
    """Local primal update for agent `i`.

    Minimizes the local objective over agent `i`'s inputs and the other
    agents' blocks, starting from `initial_guess`. The returned variable has
    agent `i`'s states equal to the rollout of its (projected) inputs from
    ``initial_guess``'s state at k = 0.

    The descent direction is diagonally scaled: other agents' blocks by the
    inverse consensus curvature, own inputs by the inverse Gauss-Newton
    diagonal at the initial guess.
    """
    scfg = scfg or SolverConfig()
    model = _model(model)
    args = (i, x_ref, lam, midpoints, rho, g, cfg)

    def proj(th):
        return project(th, cfg, own=i)

    def fun(th):
        return reduced_objective(th, *args, model)

    def grad(th):
        return gradient(th, *args, model)

    theta0 = with_rollout(proj(initial_guess), i, cfg, model)
    if not np.isfinite(fun(theta0)):
        raise NonFinite(f"objective is not finite at the initial guess of agent {i}")

    lay = Layout.for_theta(theta0, cfg)
    n_nbrs = len(midpoints)
    scale = np.full(lay.size, 1.0 / (2.0 * rho * n_nbrs) if rho * n_nbrs > 0 else 1.0)
    lay.inputs(scale, i)[...] = 1.0 / input_curvature(theta0, i, rho, n_nbrs, cfg, model)

    theta, _, n_it = minimize_projected(fun, grad, theta0, proj, scfg, history, scale)
    log.debug("agent %d primal solve: %d inner iterations", i, n_it)
    return with_rollout(theta, i, cfg, model)
