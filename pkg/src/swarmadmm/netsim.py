"""Simulated synchronous message passing between graph neighbors."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .graph import CommGraph, neighbors


class NoPriorMessage(RuntimeError):
    """A message was dropped and the receiver has nothing older to fall back on."""


@dataclass(frozen=True)
class ChannelConfig:
    drop_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError(f"drop_probability must be in [0, 1], got {self.drop_probability}")


@dataclass(frozen=True)
class IterateMessage:
    sender: int
    round: int
    payload: np.ndarray


@dataclass(frozen=True)
class Delivery:
    round: int
    sender: int
    receiver: int
    status: str  # "delivered" | "dropped"

    @property
    def edge(self):
        return (self.sender, self.receiver)


class Channel:
    """Lossy broadcast channel with stale fallback.

    Every directed edge gets one Bernoulli draw per round from a generator
    seeded with ``cfg.seed``; draws happen in a fixed order (sorted edges,
    lower id sending first), so a seed fixes every decision. A dropped
    message is replaced by the last payload the receiver got from that
    sender.
    """

    def __init__(self, g: CommGraph, cfg: ChannelConfig | None = None):
        self.graph = g
        self.cfg = cfg or ChannelConfig()
        self._rng = np.random.default_rng(self.cfg.seed)
        self._last = {}
        self._log = []
        self.rounds = 0

    def prime(self, outgoing, round=0):
        """Seed the stale cache without logging (payloads known before round 1)."""
        for i in range(self.graph.n_agents):
            for j in neighbors(self.graph, i):
                self._last[(j, i)] = IterateMessage(j, round, outgoing[j])

    def exchange(self, round, outgoing):
        """Deliver round-`round` payloads; returns ``inbox[i][j]`` for j in N_i.

        Blocks until every sender's payload is present (a barrier).
        """
        g = self.graph
        if len(outgoing) != g.n_agents:
            raise ValueError(f"expected {g.n_agents} outgoing payloads, got {len(outgoing)}")
        p = self.cfg.drop_probability
        inbox = [dict() for _ in range(g.n_agents)]
        for a, b in g.sorted_edges():
            for sender, receiver in ((a, b), (b, a)):
                dropped = self._rng.random() < p
                key = (sender, receiver)
                if dropped:
                    if key not in self._last:
                        raise NoPriorMessage(
                            f"message {sender}->{receiver} dropped in round {round} "
                            "with no earlier delivery to fall back on"
                        )
                else:
                    self._last[key] = IterateMessage(sender, round, outgoing[sender])
                self._log.append(Delivery(round, sender, receiver, "dropped" if dropped else "delivered"))
                inbox[receiver][sender] = self._last[key].payload
        return [dict(sorted(box.items())) for box in inbox]

    def deliver(self, outgoing):
        self.rounds += 1
        return self.exchange(self.rounds, outgoing)

    __call__ = deliver

    def delivery_log(self):
        return list(self._log)

    def write_csv(self, path):
        write_delivery_csv(self._log, path)


def write_delivery_csv(log, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "sender", "receiver", "status"])
        for d in log:
            w.writerow([d.round, d.sender, d.receiver, d.status])


class DirectExchange:
    """Lossless in-memory exchange; the reference path for `Channel`."""

    def __init__(self, g: CommGraph):
        self.graph = g

    def __call__(self, outgoing):
        return [{j: outgoing[j] for j in neighbors(self.graph, i)}
                for i in range(self.graph.n_agents)]
