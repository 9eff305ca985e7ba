"""
Consensus ADMM engine.

One round, for every agent ``i`` with neighbors ``N_i``::

    theta_i <- argmin  g_i(theta) + lam_i . theta
                       + rho * sum_j || theta - (theta_i + theta_j) / 2 ||^2
    (exchange new iterates with neighbors)
    lam_i   <- lam_i + rho * sum_j (theta_i - theta_j)

All primal updates read round-k data only; the exchange is the barrier
between primal and dual updates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .graph import CommGraph, neighbors
from .netsim import DirectExchange

log = logging.getLogger(__name__)


class AgentFailure(RuntimeError):
    """A primal update failed; ``agent`` names who."""

    def __init__(self, agent, err):
        super().__init__(f"agent {agent}: {err}")
        self.agent = agent
        self.cause = err


@dataclass(frozen=True)
class ADMMConfig:
    rho: float = 1.0
    max_rounds: int = 50
    tol_consensus: float = 1e-4
    tol_dual: float = 1e-4

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if int(self.max_rounds) != self.max_rounds or self.max_rounds < 1:
            raise ValueError(f"max_rounds must be an integer >= 1, got {self.max_rounds}")
        if not (self.tol_consensus > 0 and self.tol_dual > 0):
            raise ValueError("tolerances must be positive")


class ConsensusProblem(Protocol):
    def primal_update(self, i, theta, lam, midpoints, rho): ...

    def objective(self, i, theta): ...


@dataclass
class SwarmIterate:
    """Per-agent local variables, duals and last-received neighbor iterates."""

    thetas: list
    lams: list
    received: list
    round: int = 0
    prev_thetas: list | None = None

    @classmethod
    def start(cls, thetas, g: CommGraph, lams=None):
        """Fresh iterate; duals default to zero."""
        thetas = [np.asarray(t, dtype=float) for t in thetas]
        shape = thetas[0].shape
        if any(t.shape != shape for t in thetas):
            raise ValueError("all local variables must share one shape")
        if lams is None:
            lams = [np.zeros(shape) for _ in thetas]
        else:
            lams = [np.asarray(l, dtype=float) for l in lams]
            if any(l.shape != shape for l in lams):
                raise ValueError("duals must match the local variable shape")
        received = DirectExchange(g)(thetas)
        return cls(thetas, lams, received)


@dataclass(frozen=True)
class ResidualRecord:
    round: int
    consensus_residual: float
    dual_residual: float
    objectives: tuple = field(default=())


def dual_update(lam, rho, theta_new, neighbor_thetas):
    lam = np.asarray(lam, dtype=float)
    theta_new = np.asarray(theta_new, dtype=float)
    if lam.shape != theta_new.shape:
        raise ValueError(f"dual shape {lam.shape} does not match {theta_new.shape}")
    acc = np.zeros_like(lam)
    for t in neighbor_thetas:
        t = np.asarray(t, dtype=float)
        if t.shape != lam.shape:
            raise ValueError(f"neighbor shape {t.shape} does not match {lam.shape}")
        acc += theta_new - t
    return lam + rho * acc


def consensus_residual(thetas, g: CommGraph) -> float:
    """Root-sum-square of edge disagreements."""
    if isinstance(thetas, SwarmIterate):
        thetas = thetas.thetas
    total = 0.0
    for a, b in g.sorted_edges():
        d = thetas[a] - thetas[b]
        total += float(d @ d)
    return float(np.sqrt(total))


def dual_residual(now, prev, rho) -> float:
    if isinstance(now, SwarmIterate):
        now = now.thetas
    if isinstance(prev, SwarmIterate):
        prev = prev.thetas
    if len(now) != len(prev):
        raise ValueError("iterates disagree on number of agents")
    total = 0.0
    for a, b in zip(now, prev):
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
        d = a - b
        total += float(d @ d)
    return float(rho * np.sqrt(total))


def admm_round(iterate: SwarmIterate, problem, g: CommGraph, rho, exchange=None):
    """One synchronous round; returns ``(new_iterate, ResidualRecord)``."""
    exchange = exchange if exchange is not None else DirectExchange(g)
    n = g.n_agents
    new_thetas = []
    for i in range(n):
        th = iterate.thetas[i]
        mids = [0.5 * (th + iterate.received[i][j]) for j in neighbors(g, i)]
        try:
            new_thetas.append(np.asarray(problem.primal_update(i, th, iterate.lams[i], mids, rho)))
        except Exception as err:
            raise AgentFailure(i, err) from err

    delivered = exchange(new_thetas)

    new_lams = [
        dual_update(iterate.lams[i], rho, new_thetas[i], [delivered[i][j] for j in neighbors(g, i)])
        for i in range(n)
    ]
    objective = getattr(problem, "objective", None)
    objs = tuple(float(objective(i, new_thetas[i])) for i in range(n)) if objective else ()
    rec = ResidualRecord(
        round=iterate.round + 1,
        consensus_residual=consensus_residual(new_thetas, g),
        dual_residual=dual_residual(new_thetas, iterate.thetas, rho),
        objectives=objs,
    )
    nxt = SwarmIterate(new_thetas, new_lams, delivered, iterate.round + 1, iterate.thetas)
    return nxt, rec


def run_admm(initial: SwarmIterate, cfg: ADMMConfig, problem, g: CommGraph, exchange=None):
    """Iterate rounds until both residuals meet tolerance or `max_rounds`.

    An iterate that already carries a previous round (``prev_thetas``) and
    meets both tolerances is returned without further rounds. Returns
    ``(iterate, records, converged)``.
    """
    exchange = exchange if exchange is not None else DirectExchange(g)
    if initial.prev_thetas is not None:
        rc = consensus_residual(initial.thetas, g)
        rd = dual_residual(initial.thetas, initial.prev_thetas, cfg.rho)
        if rc <= cfg.tol_consensus and rd <= cfg.tol_dual:
            return initial, [], True
    prime = getattr(exchange, "prime", None)
    if prime is not None:
        prime(initial.thetas)

    it = initial
    records = []
    for _ in range(cfg.max_rounds):
        it, rec = admm_round(it, problem, g, cfg.rho, exchange)
        records.append(rec)
        log.debug("round %d: consensus %.3e dual %.3e", rec.round,
                  rec.consensus_residual, rec.dual_residual)
        if rec.consensus_residual <= cfg.tol_consensus and rec.dual_residual <= cfg.tol_dual:
            return it, records, True
    return it, records, False


class QuadraticConsensus:
    """Agents with ``g_i(theta) = sum_c w_ic (theta_c - a_ic)^2``.

    The primal update is solved in closed form, channel by channel.
    """

    def __init__(self, targets, weights=None):
        self.targets = np.atleast_2d(np.asarray(targets, dtype=float))
        self.weights = (np.ones_like(self.targets) if weights is None
                        else np.broadcast_to(np.asarray(weights, dtype=float), self.targets.shape))

    def primal_update(self, i, theta, lam, midpoints, rho):
        w, a = self.weights[i], self.targets[i]
        msum = np.sum(midpoints, axis=0) if len(midpoints) else 0.0
        return (2.0 * w * a - lam + 2.0 * rho * msum) / (2.0 * w + 2.0 * rho * len(midpoints))

    def objective(self, i, theta):
        d = theta - self.targets[i]
        return float(np.sum(self.weights[i] * d * d))
