"""The walk X on a range graph: trajectories, exact laws and hitting structure.

Two kernels are supported: ``"uniform"`` (step to a uniformly chosen
neighbour) and ``"weighted"`` (step along edge ``{x, y}`` with probability
``mu_xy / mu_x``, where ``mu`` counts crossings by the generating path).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .graph import ball, graph_distance
from .resistance import ConductanceNetwork

_KERNELS = {"uniform": "unit", "weighted": "crossing", "unit": "unit", "crossing": "crossing"}


class HorizonError(ValueError):
    """The generated environment is too short for the requested computation."""


def _net(g, mode):
    if isinstance(g, ConductanceNetwork):
        return g
    try:
        return ConductanceNetwork(g, _KERNELS[mode])
    except KeyError:
        raise ValueError(f"unknown walk mode {mode!r}") from None


class Kernel:
    """Transition kernel of the walk on a network, in CSR form."""

    def __init__(self, g, mode="uniform"):
        self.net = _net(g, mode)
        a = self.net.adjacency
        self.indptr = a.indptr
        self.indices = a.indices
        self.weight = self.net.weight
        self.uniform = self.net.mode == "unit"
        self.cum = np.cumsum(a.data)
        self.base = np.concatenate([[0.0], self.cum])[a.indptr[:-1]]

    @cached_property
    def matrix(self):
        """Row-stochastic transition matrix ``P``."""
        a = self.net.adjacency
        return (sp.diags(1.0 / self.weight) @ a).tocsr()

    def step(self, v, u):
        """Vectorised one-step move of walkers at ``v`` driven by uniforms ``u``."""
        if self.uniform:
            deg = self.indptr[v + 1] - self.indptr[v]
            k = self.indptr[v] + (u * deg).astype(np.int64)
        else:
            target = self.base[v] + u * self.weight[v]
            k = np.searchsorted(self.cum, target, side="right")
            k = np.minimum(k, self.indptr[v + 1] - 1)
        return self.indices[k]


@dataclass(frozen=True)
class Trajectory:
    vertices: np.ndarray
    censored: bool = False


def simulate(g, start, n_steps, rng, mode="uniform", guard=None):
    """One trajectory of ``n_steps`` steps from ``start``.

    If ``guard`` (a vertex id) is hit the run stops early and is flagged
    censored.
    """
    kern = Kernel(g, mode)
    g0 = g.graph if isinstance(g, ConductanceNetwork) else g
    g0.check_vertex(start)
    u = rng.random(n_steps)
    indptr = kern.indptr.tolist()
    indices = kern.indices.tolist()
    out = [start]
    v = start
    stop = -1 if guard is None else guard
    if kern.uniform:
        for x in u.tolist():
            lo = indptr[v]
            v = indices[lo + int(x * (indptr[v + 1] - lo))]
            out.append(v)
            if v == stop:
                break
    else:
        cum = kern.cum
        base = kern.base
        w = kern.weight
        for x in u.tolist():
            k = int(np.searchsorted(cum, base[v] + x * w[v], side="right"))
            v = indices[min(k, indptr[v + 1] - 1)]
            out.append(v)
            if v == stop:
                break
    return Trajectory(np.asarray(out, dtype=np.int64), censored=(v == stop))


def simulate_batch(g, starts, n_steps, rng, mode="uniform", times=None):
    """Run independent walkers in lock-step.

    Returns the final positions, or with ``times`` (increasing step counts
    up to ``n_steps``) a ``(len(times), n_walkers)`` array of positions at
    those steps.
    """
    kern = g if isinstance(g, Kernel) else Kernel(g, mode)
    v = np.array(starts, dtype=np.int64)
    if times is None:
        for _ in range(n_steps):
            v = kern.step(v, rng.random(len(v)))
        return v
    times = np.asarray(times, dtype=np.int64)
    if len(times) and (times[0] < 0 or times[-1] > n_steps or np.any(np.diff(times) < 0)):
        raise ValueError("times must be increasing within [0, n_steps]")
    out = np.empty((len(times), len(v)), dtype=np.int64)
    k = 0
    for t in range(n_steps + 1):
        while k < len(times) and times[k] == t:
            out[k] = v
            k += 1
        if t < n_steps:
            v = kern.step(v, rng.random(len(v)))
    return out


def evolve_distribution(g, start, n_max, mode="uniform", guard_distance=None, prune=True):
    """Exact ``P(X_n = start)`` for ``n = 0..n_max``.

    Mass that wanders farther than ``n_max / 2`` can no longer come back in
    time, so with ``prune`` the computation is restricted to that ball.
    ``guard_distance`` is the graph distance from ``start`` to the first
    vertex whose neighbourhood may be incomplete; the series is exact when
    ``n_max <= 2 * guard_distance``.
    """
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    if guard_distance is not None and n_max > 2 * guard_distance:
        raise HorizonError(
            f"n_max={n_max} needs the guard at distance >= {(n_max + 1) // 2}, have {guard_distance}"
        )
    kern = Kernel(g, mode)
    P = kern.matrix
    if prune:
        g0 = kern.net.graph
        keep = ball(g0, start, n_max // 2 + 1)
        P = P[keep][:, keep]
        s = int(np.searchsorted(keep, start))
    else:
        s = start
    PT = P.T.tocsr()
    p = np.zeros(PT.shape[0])
    p[s] = 1.0
    out = np.empty(n_max + 1)
    out[0] = 1.0
    for n in range(1, n_max + 1):
        p = PT @ p
        out[n] = p[s]
    return out


def evolve(g, start, n_steps, mode="uniform"):
    """Full distribution of ``X_{n_steps}`` (no pruning)."""
    PT = Kernel(g, mode).matrix.T.tocsr()
    p = np.zeros(PT.shape[0])
    p[start] = 1.0
    for _ in range(n_steps):
        p = PT @ p
    return p


@dataclass(frozen=True)
class CutChainRecord:
    """Hitting structure of a trajectory on the cut-point set.

    ``H`` are the hitting times of the cut-point set and ``J`` the indices
    of the cut-points hit.  By default ``Z[n] = J[m]`` with ``m`` the first
    index such that ``H[m] > n``, i.e. the next cut-point to be visited
    (defined for ``n < H[-1]``); ``which="last"`` gives the most recent one
    instead (defined for ``H[0] <= n <= H[-1]``, stored from ``n = H[0]``).
    """

    H: np.ndarray
    J: np.ndarray
    Z: np.ndarray


def cut_chain(trajectory, cut_label, which="next"):
    """Extract ``(H, J, Z)`` from a trajectory.

    ``cut_label[v]`` is the cut index of vertex ``v`` or ``-1`` when ``v``
    is not a cut-point.
    """
    x = trajectory.vertices if isinstance(trajectory, Trajectory) else np.asarray(trajectory)
    lab = np.asarray(cut_label)[x]
    H = np.flatnonzero(lab >= 0)
    J = lab[H]
    if len(H) == 0:
        return CutChainRecord(H, J, np.zeros(0, dtype=np.int64))
    if which == "next":
        Z = J[np.searchsorted(H, np.arange(H[-1]), side="right")]
    elif which == "last":
        Z = J[np.searchsorted(H, np.arange(H[0], H[-1] + 1), side="right") - 1]
    else:
        raise ValueError(f"which must be 'next' or 'last', got {which!r}")
    return CutChainRecord(H, J, Z)


def jump_chain_law(chain, j):
    """Closed-form ``(p_stay, p_up, p_down)`` for the jump chain at cut index ``j``.

    ``chain`` is a :class:`~rangewalk.resistance.CutChain`; ``j`` must have
    both neighbours ``j - 1`` and ``j + 1`` inside it.
    """
    if not 1 <= j < chain.n_segments:
        raise IndexError(f"cut index {j} needs neighbours inside the chain")
    R = _chain_resistances(chain)
    w = chain.net.weight[chain.boundary[j]]
    r_down, r_up = R[j - 1], R[j]
    p_up = 1.0 / (w * r_up)
    p_down = 1.0 / (w * r_down)
    p_stay = 1.0 - (r_down + r_up) / (w * r_down * r_up)
    return p_stay, p_up, p_down


def jump_chain_laws(chain):
    """Vectorised :func:`jump_chain_law` for all interior cut indices."""
    R = _chain_resistances(chain)
    w = chain.net.weight[chain.boundary[1:-1]]
    r_down, r_up = R[:-1], R[1:]
    p_up = 1.0 / (w * r_up)
    p_down = 1.0 / (w * r_down)
    p_stay = 1.0 - (r_down + r_up) / (w * r_down * r_up)
    return p_stay, p_up, p_down


def _chain_resistances(chain):
    R = getattr(chain, "_R", None)
    if R is None:
        R = chain.resistances()
        chain._R = R
    return R


def weighted_return_times(chain):
    """``w(C_j) * E_{C_j} H_1`` for every interior cut index ``j``.

    ``H_1`` is the first time after 0 at which the walk is back on the
    cut-point set.  Conditioning on the first step gives
    ``w(C) E H_1 = w(C) + sum_y c(C, y) h(y)``, with ``h`` the expected
    hitting time of the cut-point set from a non-cut neighbour ``y``.
    """
    net = chain.net
    h_int = chain.solve(net.weight[chain.interior])
    h = np.zeros(net.graph.n_vertices)
    h[chain.interior] = h_int
    k = chain.n_segments
    acc = np.zeros(k + 1)
    pos = np.full(net.graph.n_vertices, -1, dtype=np.int64)
    pos[chain.boundary] = np.arange(k + 1)
    for a, b in ((chain.eu, chain.ev), (chain.ev, chain.eu)):
        m = pos[a] >= 0
        np.add.at(acc, pos[a[m]], chain.ec[m] * h[b[m]])
    w = net.weight[chain.boundary]
    return (w + acc)[1:-1]


def expected_H1(chain, j):
    """``E_{C_j} H_1`` for interior cut index ``j``."""
    if not 1 <= j < chain.n_segments:
        raise IndexError(f"cut index {j} needs neighbours inside the chain")
    return float(weighted_return_times(chain)[j - 1] / chain.net.weight[chain.boundary[j]])


def _ball_system(g, root, r, mode, guard_distance):
    if guard_distance is not None and r >= guard_distance:
        raise HorizonError(f"radius {r} reaches the guard at distance {guard_distance}")
    net = _net(g, mode)
    g0 = net.graph
    inside = ball(g0, root, r)
    if len(inside) == g0.n_vertices:
        raise HorizonError(f"B(root, {r}) covers the generated graph")
    L = net.laplacian[inside][:, inside].tocsc()
    return net, inside, splu(L)


def expected_exit_time(g, root, r, mode="uniform", guard_distance=None):
    """Exact ``E_root tau(root, r)``, the mean exit time from ``B(root, r)``."""
    net, inside, lu = _ball_system(g, root, r, mode, guard_distance)
    h = lu.solve(net.weight[inside])
    return float(h[np.searchsorted(inside, root)])


def occupation_density(g, root, r, mode="uniform", guard_distance=None):
    """Occupation density of the walk from ``root`` killed on leaving ``B(root, r)``.

    Returns ``(vertices, density)`` normalised so that
    ``sum(density * mu(vertices))`` is the expected exit time, with ``mu``
    the degree (or crossing total in weighted mode).  The density at the
    root equals ``R(root, B^c)``.
    """
    net, inside, lu = _ball_system(g, root, r, mode, guard_distance)
    e = np.zeros(len(inside))
    e[np.searchsorted(inside, root)] = 1.0
    return inside, lu.solve(e)


def exit_time(g, root, r, rng, mode="uniform", n_walkers=None, max_steps=10**9):
    """Sample exit times from ``B(root, r)``; one value, or an array for ``n_walkers``."""
    kern = Kernel(g, mode)
    dist = graph_distance(kern.net.graph, root, limit=r)
    inside = dist >= 0
    if inside.all():
        raise HorizonError(f"B(root, {r}) covers the generated graph")
    w = 1 if n_walkers is None else n_walkers
    v = np.full(w, root, dtype=np.int64)
    tau = np.zeros(w, dtype=np.int64)
    alive = np.ones(w, dtype=bool)
    t = 0
    while alive.any() and t < max_steps:
        t += 1
        idx = np.flatnonzero(alive)
        v[idx] = kern.step(v[idx], rng.random(len(idx)))
        out = ~inside[v[idx]]
        tau[idx[out]] = t
        alive[idx[out]] = False
    return int(tau[0]) if n_walkers is None else tau


def dump_trajectory(trajectory, fh):
    """Write one vertex id per line."""
    x = trajectory.vertices if isinstance(trajectory, Trajectory) else trajectory
    fh.write("".join(f"{int(v)}\n" for v in x))


def write_return_series(series, fh):
    """Write a return-probability series as CSV rows ``n,p_return``."""
    fh.write("n,p_return\n")
    for n, p in enumerate(np.asarray(series, dtype=np.float64)):
        fh.write(f"{n},{p:.17g}\n")
