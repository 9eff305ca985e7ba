"""Undirected communication graph between agents."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field


class GraphError(ValueError):
    """Base class for malformed communication graphs."""


class Disconnected(GraphError):
    pass


class SelfLoop(GraphError):
    pass


class BadIndex(GraphError):
    pass


@dataclass(frozen=True)
class CommGraph:
    """Undirected agent topology.

    Edges are stored once as ``(min, max)`` pairs. Construction does not
    validate connectivity; call :func:`validate` (or :meth:`from_edges`
    with ``check=True``) before use.
    """

    n_agents: int
    edges: frozenset = field(default_factory=frozenset)

    @classmethod
    def from_edges(cls, n_agents, edges, check=True):
        pairs = set()
        for e in edges:
            a, b = (int(v) for v in e)
            pairs.add((min(a, b), max(a, b)))
        g = cls(int(n_agents), frozenset(pairs))
        if check:
            validate(g)
        return g

    @classmethod
    def complete(cls, n_agents):
        return cls.from_edges(
            n_agents, [(i, j) for i in range(n_agents) for j in range(i + 1, n_agents)]
        )

    @classmethod
    def path(cls, n_agents):
        return cls.from_edges(n_agents, [(i, i + 1) for i in range(n_agents - 1)])

    def neighbors(self, i):
        return neighbors(self, i)

    def sorted_edges(self):
        return sorted(self.edges)


def neighbors(g: CommGraph, i: int) -> list[int]:
    """Neighbors of agent `i`, sorted ascending."""
    if not 0 <= i < g.n_agents:
        raise BadIndex(f"agent id {i} out of range for {g.n_agents} agents")
    out = []
    for a, b in g.edges:
        if a == i and b != i:
            out.append(b)
        elif b == i and a != i:
            out.append(a)
    return sorted(out)


def edge_count(g: CommGraph) -> int:
    return len(g.edges)


def validate(g: CommGraph) -> None:
    """Raise a :class:`GraphError` subclass unless `g` is a connected simple graph."""
    if g.n_agents < 1:
        raise BadIndex(f"n_agents must be >= 1, got {g.n_agents}")
    for a, b in sorted(g.edges):
        if a == b:
            raise SelfLoop(f"self-loop at node {a}")
        if not (0 <= a < g.n_agents and 0 <= b < g.n_agents):
            raise BadIndex(f"edge ({a}, {b}) has endpoint outside [0, {g.n_agents})")

    adj = {i: [] for i in range(g.n_agents)}
    for a, b in g.edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    if len(seen) != g.n_agents:
        missing = min(set(range(g.n_agents)) - seen)
        raise Disconnected(f"node {missing} is not reachable from node 0")
