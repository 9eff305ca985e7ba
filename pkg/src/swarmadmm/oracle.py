"""Independent reference solutions for checking the distributed solvers."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .graph import CommGraph


@dataclass
class ConsensusLSQInstance:
    targets: np.ndarray  # (N, d)
    weights: np.ndarray  # (N, d), diagonal weights
    graph: CommGraph

    def __post_init__(self):
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        self.weights = np.broadcast_to(np.asarray(self.weights, dtype=float), self.targets.shape).copy()
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")

    @classmethod
    def random(cls, rng, n_agents, dim, graph, weight_range=(0.5, 2.0), spread=5.0):
        return cls(rng.uniform(-spread, spread, (n_agents, dim)),
                   rng.uniform(*weight_range, (n_agents, dim)), graph)


def centralized_consensus_lsq(instance: ConsensusLSQInstance):
    """Minimizer of ``sum_i ||theta - a_i||^2_{W_i}`` over a single shared theta.

    Solved as one stacked least-squares system, not a weighted average.
    """
    A, W = instance.targets, instance.weights
    n, d = A.shape
    if np.any(W.sum(axis=0) <= 0):
        raise ValueError("zero total weight in some channel")
    sw = np.sqrt(W)
    M = np.zeros((n * d, d))
    for i in range(n):
        M[i * d:(i + 1) * d] = np.diag(sw[i])
    rhs = (sw * A).ravel()
    sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return sol


def grid_minimize(f, lo, hi, resolution):
    """Exhaustive search on a regular grid over the box ``[lo, hi]``.

    Only a sanity bound: for Lipschitz `f` the returned point is within one
    cell of a global minimizer. Dimension is capped at 3.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape:
        raise ValueError("lo and hi must have the same length")
    if lo.size > 3:
        raise ValueError(f"grid_minimize supports at most 3 dimensions, got {lo.size}")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and resolution > 0):
        raise ValueError("box and resolution must be finite and positive")
    axes = [np.linspace(a, b, int(np.floor((b - a) / resolution + 1e-9)) + 1) for a, b in zip(lo, hi)]
    best, best_val = None, np.inf
    for pt in itertools.product(*axes):
        x = np.array(pt)
        v = f(x if x.size > 1 else x[0])
        if v < best_val:
            best, best_val = x, v
    return best, float(best_val)
