"""Range graphs of lattice paths: structure, metric balls, measures and blocks."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .lattice import PointIndex, cut_times

MAX_VERTICES = 2**31 - 1


class InsufficientCutTimesError(ValueError):
    """Fewer exact cut-times than an operation needs."""


@dataclass(frozen=True, eq=False)
class RangeGraph:
    """Vertex/edge structure of the range of a path window.

    Vertices are numbered by first visit inside the window.  ``visits[i]``
    is the vertex occupied at time ``start_time + i``.  Each undirected edge
    is stored once as ``(edge_u[k], edge_v[k])`` with ``edge_u < edge_v``
    together with its crossing count and the first time it was crossed.
    """

    dim: int
    points: np.ndarray
    visits: np.ndarray
    start_time: int
    root: int
    edge_u: np.ndarray
    edge_v: np.ndarray
    edge_mult: np.ndarray
    edge_time: np.ndarray

    @property
    def n_vertices(self):
        return len(self.points)

    @property
    def n_edges(self):
        return len(self.edge_u)

    @property
    def end_time(self):
        return self.start_time + len(self.visits) - 1

    @cached_property
    def adjacency(self):
        """Symmetric CSR matrix whose entries are crossing counts."""
        n = self.n_vertices
        rows = np.concatenate([self.edge_u, self.edge_v])
        cols = np.concatenate([self.edge_v, self.edge_u])
        data = np.concatenate([self.edge_mult, self.edge_mult]).astype(np.float64)
        a = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
        a.sort_indices()
        return a

    @cached_property
    def degree(self):
        return np.diff(self.adjacency.indptr).astype(np.int64)

    @cached_property
    def crossings(self):
        """Per-vertex total crossing count ``mu_x``."""
        return np.asarray(self.adjacency.sum(axis=1)).ravel().astype(np.int64)

    @cached_property
    def index(self):
        return PointIndex(self.points)

    def vertex_of(self, point):
        v = int(self.index.lookup(np.atleast_2d(point))[0])
        if v < 0:
            raise KeyError(f"{tuple(point)} is not a vertex")
        return v

    def vertex_at(self, time):
        i = time - self.start_time
        if not 0 <= i < len(self.visits):
            raise IndexError(f"time {time} outside the graph window")
        return int(self.visits[i])

    def neighbors(self, v):
        a = self.adjacency
        return a.indices[a.indptr[v] : a.indptr[v + 1]]

    def check_vertex(self, v):
        if not 0 <= v < self.n_vertices:
            raise IndexError(f"invalid vertex id {v}")

    def dump(self, fh):
        """Text adjacency: ``id x1 .. xd deg n1 n2 ..`` per line."""
        a = self.adjacency
        for v in range(self.n_vertices):
            nb = a.indices[a.indptr[v] : a.indptr[v + 1]]
            fields = [v, *self.points[v].tolist(), len(nb), *nb.tolist()]
            fh.write(" ".join(map(str, fields)) + "\n")


@dataclass(frozen=True)
class EdgeMultiplicity:
    """Crossing counts per edge (aligned with the graph's edge arrays) and per vertex."""

    edge_u: np.ndarray
    edge_v: np.ndarray
    per_edge: np.ndarray
    per_vertex: np.ndarray


def build_graph(path, first_time=None, last_time=None):
    """Range graph of ``path`` restricted to times ``[first_time, last_time]``.

    Defaults to the whole generated window (both halves of a two-sided path).
    """
    t0 = path.first_time if first_time is None else first_time
    t1 = path.last_time if last_time is None else last_time
    if not path.first_time <= t0 <= t1 <= path.last_time:
        raise ValueError(f"window [{t0}, {t1}] outside the path")
    o = path.origin_index
    raw = path.point_ids[t0 + o : t1 + o + 1]
    _, first, inv = np.unique(raw, return_index=True, return_inverse=True)
    if len(first) > MAX_VERTICES:
        raise MemoryError("range graph exceeds the vertex budget")
    order = np.argsort(first, kind="stable")
    relabel = np.empty_like(order)
    relabel[order] = np.arange(len(order))
    visits = relabel[inv.ravel()]
    points = path.positions[t0 + o + first[order]]

    n = len(points)
    a, b = visits[:-1], visits[1:]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    key = lo.astype(np.int64) * n + hi
    ukey, efirst, mult = np.unique(key, return_index=True, return_counts=True)
    root = int(visits[-t0]) if t0 <= 0 <= t1 else -1
    return RangeGraph(
        dim=path.dim,
        points=points,
        visits=visits,
        start_time=t0,
        root=root,
        edge_u=(ukey // n).astype(np.int64),
        edge_v=(ukey % n).astype(np.int64),
        edge_mult=mult.astype(np.int64),
        edge_time=(t0 + efirst).astype(np.int64),
    )


def edge_multiplicities(path, g):
    """Crossing counts of every edge of ``g`` by the path window ``g`` was built from."""
    o = path.origin_index
    i0 = g.start_time + o
    pos = path.positions[i0 : i0 + len(g.visits)]
    ids = g.index.lookup(pos)
    if np.any(ids < 0) or np.any(ids != g.visits):
        raise ValueError("graph was not built from this path window")
    n = g.n_vertices
    a, b = ids[:-1], ids[1:]
    key = np.minimum(a, b) * n + np.maximum(a, b)
    ukey, counts = np.unique(key, return_counts=True)
    gkey = g.edge_u * n + g.edge_v
    j = np.searchsorted(ukey, gkey)
    per_edge = counts[j]
    per_vertex = np.bincount(g.edge_u, per_edge, n) + np.bincount(g.edge_v, per_edge, n)
    return EdgeMultiplicity(g.edge_u, g.edge_v, per_edge, per_vertex.astype(np.int64))


def graph_distance(g, source, limit=None):
    """Breadth-first graph distances from ``source`` (int32).

    With ``limit`` set, vertices farther than ``limit`` get ``-1``.
    """
    g.check_vertex(source)
    kw = {} if limit is None else {"limit": float(limit) + 0.5}
    dist = dijkstra(g.adjacency, indices=source, unweighted=True, **kw)
    out = np.full(len(dist), -1, dtype=np.int32)
    ok = np.isfinite(dist)
    if limit is None and not ok.all():
        raise RuntimeError("range graph is disconnected")
    out[ok] = dist[ok].astype(np.int32)
    return out


def ball(g, center, r):
    """Vertex ids of ``B_G(center, r)``, sorted."""
    if r < 0:
        raise ValueError("radius must be >= 0")
    dist = graph_distance(g, center, limit=r)
    return np.flatnonzero(dist >= 0)


def volume(g, vertices, weighted=False):
    """``mu_G`` of a vertex set: sum of degrees (or of crossing totals)."""
    vertices = np.asarray(vertices, dtype=np.int64)
    m = g.crossings if weighted else g.degree
    return int(m[vertices].sum())


@dataclass(frozen=True, eq=False)
class Block:
    """Path section between consecutive cut-times, translated to its left cut-point."""

    points: np.ndarray
    edges: np.ndarray
    cut_point: np.ndarray
    displacement: np.ndarray
    duration: int
    start_time: int

    @cached_property
    def key(self):
        """Hashable shape: equal for translated copies of the same block."""
        order = np.lexsort(self.points.T[::-1])
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        e = np.sort(rank[self.edges], axis=1)
        e = e[np.lexsort(e.T[::-1])]
        return (self.points[order].tobytes(), e.tobytes(), self.displacement.tobytes())


def block_decompose(path, cuts=None):
    """Split a two-sided path into blocks between consecutive exact cut-times."""
    if path.sided != "two":
        raise ValueError("block decomposition needs a two-sided path")
    cuts = cut_times(path, "two") if cuts is None else cuts
    times = cuts.exact_times
    if len(times) < 2:
        raise InsufficientCutTimesError(
            f"need at least two exact cut-times, found {len(times)}"
        )
    o = path.origin_index
    ids = path.point_ids
    blocks = []
    for t0, t1 in zip(times[:-1], times[1:]):
        sl = slice(t0 + o, t1 + o + 1)
        uniq, first, inv = np.unique(ids[sl], return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")
        relabel = np.empty_like(order)
        relabel[order] = np.arange(len(order))
        loc = relabel[inv.ravel()]
        pts = path.positions[sl][first[order]]
        cp = path.positions[t0 + o]
        e = np.unique(np.sort(np.stack([loc[:-1], loc[1:]], axis=1), axis=1), axis=0)
        blocks.append(
            Block(
                points=pts - cp,
                edges=e,
                cut_point=cp.copy(),
                displacement=path.positions[t1 + o] - cp,
                duration=int(t1 - t0),
                start_time=int(t0),
            )
        )
    return blocks


def assemble_blocks(blocks):
    """Glue blocks back at their cut-points: returns (points, edge point pairs)."""
    pts = []
    edges = []
    for b in blocks:
        absolute = b.points + b.cut_point
        pts.append(absolute)
        edges.append(np.concatenate([absolute[b.edges[:, 0]], absolute[b.edges[:, 1]]], axis=1))
    pts = np.unique(np.concatenate(pts), axis=0)
    edges = np.concatenate(edges)
    d = pts.shape[1]
    a, b = edges[:, :d], edges[:, d:]
    less = _lex_less(a, b)[:, None]
    lo = np.where(less, a, b)
    hi = np.where(less, b, a)
    edges = np.unique(np.concatenate([lo, hi], axis=1), axis=0)
    return pts, edges


def _lex_less(a, b):
    diff = a != b
    first = np.argmax(diff, axis=1)
    rows = np.arange(len(a))
    return a[rows, first] < b[rows, first]


def segment_labels(g, boundary_times):
    """Label each edge of ``g`` by the segment ``[t_k, t_{k+1})`` it is crossed in.

    ``boundary_times`` must be cut-times (increasing) inside the graph
    window; edges crossed before the first or after the last get ``-1``.
    Because cut-points separate the path, every crossing of an edge falls
    in the same segment, so the first crossing time decides.
    """
    bt = np.asarray(boundary_times, dtype=np.int64)
    seg = np.searchsorted(bt, g.edge_time, side="right") - 1
    seg[(seg < 0) | (seg >= len(bt) - 1)] = -1
    return seg
