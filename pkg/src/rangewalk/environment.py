"""Finite windows of random range graphs that are exact where they are used.

A path of finite length only shows part of the infinite range graph.  The
last exact cut-point ``C*`` of a one-sided window separates the part that
is already final from the part that later steps could still change: every
vertex visited before ``C*`` (and ``C*`` itself) keeps its degree forever.
Balls of radius below ``d(root, C*)`` are therefore exact, and so is any
walk computation that cannot reach beyond ``C*``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .graph import build_graph, graph_distance
from .lattice import DEFAULT_GUARD, MAX_STEPS, cut_times, gen_path
from .resistance import ConductanceNetwork, CutChain
from .rng import derive_seed
from .walk import HorizonError

log = logging.getLogger(__name__)


@dataclass(eq=False)
class Environment:
    """One-sided range graph truncated just after its last exact cut-point."""

    path: object
    cuts: object
    graph: object
    guard_time: int
    _nets: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_path(cls, path, guard=DEFAULT_GUARD):
        if path.sided != "one":
            raise ValueError("expected a one-sided path")
        cuts = cut_times(path, "one", guard)
        exact = cuts.exact_times
        exact = exact[exact > 0]
        if len(exact) == 0:
            raise HorizonError("no exact cut-time beyond the origin")
        t_star = int(exact[-1])
        g = build_graph(path, 0, min(t_star + 1, path.last_time))
        return cls(path, cuts, g, t_star)

    @classmethod
    def generate(cls, d, seed, horizon=None, min_guard_distance=0, guard=DEFAULT_GUARD):
        """Generate an environment, doubling the path until the guard is far enough.

        Paths with one seed are prefixes of each other, so the result only
        depends on ``(d, seed)`` and the requested distance.
        """
        n = horizon if horizon is not None else max(1024, 4 * min_guard_distance)
        while True:
            try:
                env = cls.from_path(gen_path(d, n, seed), guard)
                if env.guard_distance >= min_guard_distance:
                    return env
            except HorizonError:
                pass
            if 2 * n > MAX_STEPS:
                raise HorizonError(f"guard distance {min_guard_distance} not reached within {n} steps")
            n *= 2

    @property
    def root(self):
        return self.graph.root

    @cached_property
    def guard_vertex(self):
        return self.graph.vertex_at(self.guard_time)

    @cached_property
    def distances(self):
        """Graph distance of every vertex from the root."""
        return graph_distance(self.graph, self.root)

    @cached_property
    def guard_distance(self):
        return int(self.distances[self.guard_vertex])

    @cached_property
    def cut_vertices(self):
        """Vertices at exact cut-times ``0 <= t <= guard_time``, in time order."""
        t = self.cuts.exact_times
        t = t[(t >= 0) & (t <= self.guard_time)]
        return self.graph.visits[t - self.graph.start_time]

    def network(self, mode="uniform"):
        if mode not in self._nets:
            self._nets[mode] = ConductanceNetwork(self.graph, mode)
        return self._nets[mode]

    def require(self, radius):
        """Raise unless ``B(root, radius)`` is exact."""
        if radius >= self.guard_distance:
            raise HorizonError(f"radius {radius} reaches the guard at distance {self.guard_distance}")


@dataclass(eq=False)
class TwoSidedEnvironment:
    """Two-sided range graph with all exact cut-times used as chain boundaries."""

    path: object
    cuts: object
    graph: object
    boundary_times: np.ndarray
    _chains: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_path(cls, path, guard=DEFAULT_GUARD, min_cuts=3):
        if path.sided != "two":
            raise ValueError("expected a two-sided path")
        cuts = cut_times(path, "two", guard)
        bt = cuts.exact_times
        if len(bt) < min_cuts:
            raise HorizonError(f"need at least {min_cuts} exact two-sided cut-times, found {len(bt)}")
        g = build_graph(path, int(bt[0]), int(bt[-1]))
        return cls(path, cuts, g, bt)

    @classmethod
    def generate(cls, d, seed, horizon, guard=DEFAULT_GUARD, min_cuts=3):
        return cls.from_path(gen_path(d, horizon, seed, sided="two"), guard, min_cuts)

    def chain(self, mode="uniform"):
        if mode not in self._chains:
            net = ConductanceNetwork(self.graph, mode)
            self._chains[mode] = CutChain.from_times(net, self.boundary_times)
        return self._chains[mode]

    @cached_property
    def cut_label(self):
        """Chain index of each boundary vertex, ``-1`` elsewhere."""
        lab = np.full(self.graph.n_vertices, -1, dtype=np.int64)
        lab[self.graph.visits[self.boundary_times - self.graph.start_time]] = np.arange(len(self.boundary_times))
        return lab


def environment_seed(master_seed, index, *keys):
    """Seed of environment ``index`` under ``master_seed``."""
    return derive_seed(master_seed, index, *keys)
