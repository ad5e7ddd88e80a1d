"""Effective resistance on range graphs viewed as electrical networks."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .graph import graph_distance, segment_labels

log = logging.getLogger(__name__)

DENSE_CUTOFF = 2000
CG_RTOL = 1e-10

_MODES = {"unit": "unit", "uniform": "unit", "crossing": "crossing", "weighted": "crossing"}


class SingularNetworkError(ValueError):
    """Terminals are not connected, so the Dirichlet problem has no solution."""


class BallCoversGraphError(ValueError):
    """The ball has no complement inside the generated window."""


def conductance_mode(mode):
    try:
        return _MODES[mode]
    except KeyError:
        raise ValueError(f"unknown conductance mode {mode!r}") from None


@dataclass(frozen=True, eq=False)
class ConductanceNetwork:
    """A range graph with a conductance on every edge.

    ``mode="unit"`` puts a unit resistor on each edge; ``mode="crossing"``
    uses the crossing counts of the generating path as conductances.
    """

    graph: object
    mode: str = "unit"

    def __post_init__(self):
        object.__setattr__(self, "mode", conductance_mode(self.mode))

    @cached_property
    def conductance(self):
        if self.mode == "unit":
            return np.ones(self.graph.n_edges)
        return self.graph.edge_mult.astype(np.float64)

    @cached_property
    def adjacency(self):
        if self.mode == "unit":
            a = self.graph.adjacency.copy()
            a.data[:] = 1.0
            return a
        return self.graph.adjacency

    @cached_property
    def weight(self):
        """Total conductance at each vertex (degree in unit mode)."""
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    @cached_property
    def laplacian(self):
        return (sp.diags(self.weight) - self.adjacency).tocsr()


def pcg(A, b, rtol=CG_RTOL, maxiter=None, x0=None):
    """Jacobi-preconditioned conjugate gradient for SPD ``A``.

    Returns ``(x, iterations, converged)``; convergence is judged on the
    relative residual ``|b - A x| / |b|``.
    """
    n = len(b)
    maxiter = int(20 * np.sqrt(n)) + 1 if maxiter is None else maxiter
    minv = 1.0 / A.diagonal()
    x = np.zeros(n) if x0 is None else x0.astype(np.float64).copy()
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n), 0, True
    z = minv * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        q = A @ p
        alpha = rz / (p @ q)
        x += alpha * p
        r -= alpha * q
        if np.linalg.norm(r) <= rtol * bnorm:
            return x, it, True
        z = minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, maxiter, False


def _solve(A, b, method="auto"):
    n = A.shape[0]
    if method == "auto":
        method = "dense" if n < DENSE_CUTOFF else "cg"
    if method == "dense":
        try:
            return np.linalg.solve(A.toarray(), b)
        except np.linalg.LinAlgError as exc:
            raise SingularNetworkError(str(exc)) from None
    if method == "cg":
        x, it, ok = pcg(A, b)
        if ok:
            return x
        log.debug("pcg stalled after %d iterations on n=%d; using sparse LU", it, n)
        method = "direct"
    if method == "direct":
        try:
            return splu(A.tocsc()).solve(b)
        except RuntimeError as exc:
            raise SingularNetworkError(str(exc)) from None
    raise ValueError(f"unknown solver method {method!r}")


def _as_set(b):
    return np.unique(np.atleast_1d(np.asarray(b, dtype=np.int64)))


def effective_resistance(net, a, b, method="auto"):
    """Effective resistance between vertex ``a`` and vertex (set) ``b``.

    Grounds ``b`` (collapsed to one node), injects unit current at ``a`` and
    reads off the potential at ``a``.
    """
    bset = _as_set(b)
    n = net.graph.n_vertices
    if not 0 <= a < n or bset.min() < 0 or bset.max() >= n:
        raise IndexError("terminal outside the network")
    if a in bset:
        raise ValueError("a must not belong to the b-set")
    keep = np.ones(n, dtype=bool)
    keep[bset] = False
    idx = np.flatnonzero(keep)
    L = net.laplacian[idx][:, idx]
    rhs = np.zeros(len(idx))
    ia = np.searchsorted(idx, a)
    rhs[ia] = 1.0
    x = _solve(L, rhs, method)
    r = x[ia]
    if not np.isfinite(r) or r <= 0:
        raise SingularNetworkError("a and the b-set are not connected")
    return float(r)


def resistance_to_ball_complement(net, root, r, method="auto"):
    """``R(root, B(root, r)^c)`` with the complement shorted to a single node."""
    dist = graph_distance(net.graph, root, limit=r)
    inside = np.flatnonzero(dist >= 0)
    if len(inside) == net.graph.n_vertices:
        raise BallCoversGraphError(f"B(root, {r}) covers the generated graph")
    L = net.laplacian[inside][:, inside]
    rhs = np.zeros(len(inside))
    i = np.searchsorted(inside, root)
    rhs[i] = 1.0
    return float(_solve(L, rhs, method)[i])


class CutChain:
    """Electrical view of a graph cut into segments by separating cut-points.

    ``boundary`` lists vertex ids ``b_0, b_1, ..., b_k`` that the path
    visits at increasing cut-times; segment ``j`` is the part of the graph
    crossed between ``b_j`` and ``b_{j+1}``.  Every non-boundary vertex
    touched by a segment lies in exactly one segment, so the Dirichlet
    problem with all boundary vertices fixed decouples per segment and a
    single sparse factorisation serves all of them.
    """

    def __init__(self, net, boundary, edge_seg):
        self.net = net
        self.boundary = np.asarray(boundary, dtype=np.int64)
        self.edge_seg = np.asarray(edge_seg, dtype=np.int64)
        g = net.graph
        use = self.edge_seg >= 0
        self.eu = g.edge_u[use]
        self.ev = g.edge_v[use]
        self.ec = net.conductance[use]
        self.es = self.edge_seg[use]
        touched = np.unique(np.concatenate([self.eu, self.ev]))
        is_b = np.zeros(g.n_vertices, dtype=bool)
        is_b[self.boundary] = True
        self.is_boundary = is_b
        self.interior = touched[~is_b[touched]]
        self._pos = np.full(g.n_vertices, -1, dtype=np.int64)
        self._pos[self.interior] = np.arange(len(self.interior))

    @classmethod
    def from_times(cls, net, boundary_times):
        g = net.graph
        bt = np.asarray(boundary_times, dtype=np.int64)
        boundary = g.visits[bt - g.start_time]
        return cls(net, boundary, segment_labels(g, bt))

    @property
    def n_segments(self):
        return len(self.boundary) - 1

    @cached_property
    def _lu(self):
        idx = self.interior
        if len(idx) == 0:
            return None
        L = self.net.laplacian[idx][:, idx].tocsc()
        return splu(L)

    def solve(self, rhs):
        """Solve the interior system ``L_II x = rhs``."""
        if self._lu is None:
            return np.zeros(0)
        return self._lu.solve(np.asarray(rhs, dtype=np.float64))

    def potential(self, boundary_values):
        """Harmonic extension of boundary values to every touched vertex."""
        v = np.zeros(self.net.graph.n_vertices)
        v[self.boundary] = boundary_values
        rhs = np.zeros(len(self.interior))
        # A_IB v_B: conductance-weighted boundary values seen by interior vertices
        for a, b in ((self.eu, self.ev), (self.ev, self.eu)):
            m = (self._pos[a] >= 0) & self.is_boundary[b]
            np.add.at(rhs, self._pos[a[m]], self.ec[m] * v[b[m]])
        v[self.interior] = self.solve(rhs)
        return v

    def resistances(self):
        """Effective resistance across each segment, ``R(b_j, b_{j+1})``."""
        k = self.n_segments
        v = self.potential(np.arange(k + 1, dtype=np.float64))
        current = np.zeros(k)
        left = self.boundary[self.es]
        for a, b in ((self.eu, self.ev), (self.ev, self.eu)):
            m = a == left
            np.add.at(current, self.es[m], self.ec[m] * (v[b[m]] - v[a[m]]))
        return 1.0 / current

    def distances(self):
        """Graph distance across each segment, ``d(b_j, b_{j+1})``."""
        dist = graph_distance(self.net.graph, int(self.boundary[0]))
        return np.diff(dist[self.boundary]).astype(np.int64)


def cutpoint_resistance_profile(net, cuts, method=None):
    """``R(root, C_n)`` for the exact cut-points ``C_1, C_2, ...`` of a one-sided graph.

    Uses the series law across the cut-point chain; ``method="direct"``
    instead solves one grounded problem per cut-point (slow, for checks).
    """
    g = net.graph
    times = cuts.exact_times
    times = times[(times > 0) & (times <= g.end_time)]
    cp = g.visits[times - g.start_time]
    if method == "direct":
        return np.array([0.0 if v == g.root else effective_resistance(net, g.root, int(v)) for v in cp])
    if len(cp) and cp[0] == g.root:
        # the last return to the origin happened at a cut-time, so C_1 = 0;
        # the excursion before it hangs off the origin and carries no current
        chain = CutChain.from_times(net, times)
        return np.concatenate([[0.0], np.cumsum(chain.resistances())])
    chain = CutChain.from_times(net, np.concatenate([[0], times]))
    return np.cumsum(chain.resistances())
