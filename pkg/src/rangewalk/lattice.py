"""Simple random walk paths on Z^d and their path-level combinatorics.

Steps are stored as one byte each: ``code = 2 * axis + (0 if +1 else 1)``.
A two-sided path glues an independent backward walk ``S'`` at the origin, so
that time ``-m`` maps to ``S'_m``.  Arrays of positions are indexed by
``time + origin_index``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .rng import make_rng

MAX_STEPS = 50_000_000
CHUNK = 1 << 16
DEFAULT_GUARD = 0.1

_MAGIC = b"RWRW"


class CapacityError(MemoryError):
    """Requested path exceeds the configured memory budget."""


def unit_vectors(d):
    """Rows ``2*i`` and ``2*i + 1`` are ``+e_i`` and ``-e_i``."""
    e = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        e[2 * i, i] = 1
        e[2 * i + 1, i] = -1
    return e


def _walk(codes, d):
    pos = np.zeros((len(codes) + 1, d), dtype=np.int64)
    if len(codes):
        np.cumsum(unit_vectors(d)[codes], axis=0, out=pos[1:])
    return pos


@dataclass(frozen=True, eq=False)
class WalkPath:
    """A nearest-neighbour lattice trajectory, one- or two-sided.

    ``steps`` holds the forward increments ``omega_1..omega_N``;
    ``back_steps`` (two-sided only) holds the increments of the independent
    backward walk ``S'``.
    """

    dim: int
    steps: np.ndarray
    back_steps: np.ndarray | None = None
    seed: int | None = None

    @property
    def sided(self):
        return "one" if self.back_steps is None else "two"

    @property
    def n_steps(self):
        return len(self.steps)

    @property
    def n_back(self):
        return 0 if self.back_steps is None else len(self.back_steps)

    @property
    def origin_index(self):
        return self.n_back

    @property
    def first_time(self):
        return -self.n_back

    @property
    def last_time(self):
        return self.n_steps

    @cached_property
    def positions(self):
        """All positions, indexed by ``time + origin_index``."""
        fwd = _walk(self.steps, self.dim)
        if self.back_steps is None:
            return fwd
        back = _walk(self.back_steps, self.dim)
        return np.concatenate([back[:0:-1], fwd])

    def position(self, n):
        i = n + self.origin_index
        if not 0 <= i < len(self.positions):
            raise IndexError(f"time {n} outside [{self.first_time}, {self.last_time}]")
        return self.positions[i]

    @cached_property
    def point_ids(self):
        """Per-array-index id of the visited point, ids dense from 0 in first-visit order."""
        keys = PointIndex.encode_all(self.positions)
        _, first, inv = np.unique(keys, return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")
        relabel = np.empty_like(order)
        relabel[order] = np.arange(len(order))
        return relabel[inv.ravel()]

    def forward(self):
        """The one-sided path ``S`` (drops the backward half)."""
        if self.back_steps is None:
            return self
        return WalkPath(self.dim, self.steps, None, self.seed)

    def truncated(self, n_steps, n_back=None):
        back = None
        if self.back_steps is not None:
            back = self.back_steps[: self.n_back if n_back is None else n_back]
        return WalkPath(self.dim, self.steps[:n_steps], back, self.seed)


def _gen_steps(d, n, seed, side):
    if n > MAX_STEPS:
        raise CapacityError(f"{n} steps exceeds the budget of {MAX_STEPS}")
    out = np.empty(n, dtype=np.uint8)
    for c, start in enumerate(range(0, n, CHUNK)):
        stop = min(start + CHUNK, n)
        rng = make_rng(seed, side, c)
        out[start:stop] = rng.integers(0, 2 * d, size=CHUNK, dtype=np.uint8)[: stop - start]
    return out


def gen_path(d, n_steps, seed, sided="one", n_back=None):
    """Generate a simple random walk path.

    Steps are drawn in fixed chunks from streams keyed on ``(seed, side,
    chunk)``, so a longer path with the same seed extends a shorter one.

    Parameters
    ----------
    d : int
        Lattice dimension, ``d >= 1``.
    n_steps : int
        Number of forward steps.
    seed : int
        64-bit seed.
    sided : {"one", "two"}
        Two-sided paths also get a backward walk of ``n_back`` steps
        (default ``n_steps``).
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    if sided not in ("one", "two"):
        raise ValueError(f"sided must be 'one' or 'two', got {sided!r}")
    steps = _gen_steps(d, n_steps, seed, 0)
    back = None
    if sided == "two":
        back = _gen_steps(d, n_steps if n_back is None else n_back, seed, 1)
    return WalkPath(d, steps, back, seed)


def codes_from_points(points):
    points = np.asarray(points, dtype=np.int64)
    if points.ndim != 2:
        raise ValueError("points must be a (k, d) array")
    inc = np.diff(points, axis=0)
    if len(inc) and not np.all(np.abs(inc).sum(axis=1) == 1):
        raise ValueError("consecutive points must differ by one unit in one coordinate")
    axis = np.argmax(np.abs(inc), axis=1) if len(inc) else np.zeros(0, dtype=np.int64)
    neg = inc[np.arange(len(inc)), axis] < 0 if len(inc) else np.zeros(0, dtype=bool)
    return (2 * axis + neg).astype(np.uint8)


def path_from_points(points, back_points=None):
    """Build a path from explicit positions starting at the origin.

    ``back_points`` lists ``S'_0 = 0, S'_1, ...`` for a two-sided path.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.int64))
    if np.any(points[0] != 0):
        raise ValueError("path must start at the origin")
    back = None
    if back_points is not None:
        back_points = np.atleast_2d(np.asarray(back_points, dtype=np.int64))
        if np.any(back_points[0] != 0):
            raise ValueError("backward path must start at the origin")
        back = codes_from_points(back_points)
    return WalkPath(points.shape[1], codes_from_points(points), back)


def straight_path(d, n, n_back=None):
    """The monotone path ``k e_1``; two-sided paths continue to ``-k e_1``."""
    steps = np.zeros(n, dtype=np.uint8)
    back = None if n_back is None else np.ones(n_back, dtype=np.uint8)
    return WalkPath(d, steps, back)


class PointIndex:
    """Associative point -> id lookup.

    Points are packed into one int64 using per-axis offsets and bit widths
    fitted to the data; if the coordinate ranges do not fit in 63 bits a
    tuple dictionary is used instead.
    """

    def __init__(self, points):
        points = np.asarray(points, dtype=np.int64)
        self.dim = points.shape[1]
        self._packer = _Packer.fit(points)
        if self._packer is not None:
            keys = self._packer.pack(points)
            self._order = np.argsort(keys, kind="stable")
            self._sorted = keys[self._order]
            self._dict = None
        else:
            self._dict = {tuple(p): i for i, p in enumerate(points.tolist())}

    @staticmethod
    def encode_all(points):
        """Integer keys for a fixed set of points (equal points, equal keys)."""
        packer = _Packer.fit(points)
        if packer is not None:
            return packer.pack(points)
        _, inv = np.unique(points, axis=0, return_inverse=True)
        return inv.ravel().astype(np.int64)

    def lookup(self, points):
        """Ids of ``points`` (rows), ``-1`` where absent."""
        points = np.atleast_2d(np.asarray(points, dtype=np.int64))
        if self._dict is not None:
            return np.array([self._dict.get(tuple(p), -1) for p in points.tolist()], dtype=np.int64)
        ok = self._packer.fits(points)
        out = np.full(len(points), -1, dtype=np.int64)
        if not ok.any():
            return out
        keys = self._packer.pack(points[ok])
        j = np.searchsorted(self._sorted, keys)
        j_clip = np.minimum(j, len(self._sorted) - 1)
        hit = (j < len(self._sorted)) & (self._sorted[j_clip] == keys)
        res = np.full(len(keys), -1, dtype=np.int64)
        res[hit] = self._order[j_clip[hit]]
        out[ok] = res
        return out


@dataclass(frozen=True)
class _Packer:
    lo: np.ndarray
    widths: np.ndarray
    shifts: np.ndarray

    @classmethod
    def fit(cls, points):
        if len(points) == 0:
            d = points.shape[1]
            return cls(np.zeros(d, np.int64), np.ones(d, np.int64), np.arange(d, dtype=np.int64))
        lo = points.min(axis=0)
        span = points.max(axis=0) - lo
        widths = np.maximum(1, np.ceil(np.log2(span + 2)).astype(np.int64))
        if widths.sum() > 63:
            return None
        shifts = np.concatenate([[0], np.cumsum(widths)[:-1]]).astype(np.int64)
        return cls(lo, widths, shifts)

    def fits(self, points):
        rel = points - self.lo
        return np.all((rel >= 0) & (rel < (np.int64(1) << self.widths)), axis=1)

    def pack(self, points):
        rel = points - self.lo
        return np.bitwise_or.reduce(rel << self.shifts, axis=1)


@dataclass(frozen=True)
class CutTimeSet:
    """Cut-times found within a generated window.

    ``times`` are all window times passing the disjointness test; ``exact``
    marks those far enough from the window ends that later (or earlier)
    steps are unlikely to disqualify them.  Only exact times are used for
    statistics.
    """

    times: np.ndarray
    exact: np.ndarray
    horizon: tuple
    sided: str
    guard: float

    @property
    def exact_times(self):
        return self.times[self.exact]

    def __len__(self):
        return len(self.times)


def cut_times(path, sided=None, guard=DEFAULT_GUARD):
    """Cut-times of ``path`` within its generated window.

    A time ``n`` passes when no point visited at or before ``n`` (back to
    time 0 for one-sided, back to the window start for two-sided) is
    visited again after ``n``.  Computed with a last-visit index: ``n``
    passes iff the running maximum of last-visit times equals ``n``.
    """
    sided = path.sided if sided is None else sided
    if sided == "two" and path.sided != "two":
        raise ValueError("two-sided cut-times need a two-sided path")
    if sided == "one":
        ids = path.point_ids[path.origin_index:]
        t0 = 0
    else:
        ids = path.point_ids
        t0 = path.first_time
    # ids restricted to a sub-window are still valid labels
    last = np.full(ids.max() + 1 if len(ids) else 0, -1, dtype=np.int64)
    idx = np.arange(len(ids), dtype=np.int64)
    np.maximum.at(last, ids, idx)
    running = np.maximum.accumulate(last[ids])
    hits = np.flatnonzero(running == idx)
    times = hits + t0
    n_fwd = path.n_steps
    hi = path.last_time - int(np.ceil(guard * n_fwd))
    exact = times < hi if guard > 0 else times <= path.last_time
    if sided == "two":
        lo = path.first_time + int(np.ceil(guard * path.n_back))
        exact &= times >= lo if guard > 0 else True
    return CutTimeSet(times, exact, (t0, path.last_time), sided, guard)


def loop_erase(path, n):
    """Chronological loop erasure of ``S_0..S_n``.

    Returns the erased point sequence and ``Y_n``, the number of its edges.
    """
    points, times = _erase(path, n)
    return points, len(times) - 1


def _erase(path, n, record=False):
    if not 0 <= n <= path.n_steps:
        raise IndexError(f"n={n} outside [0, {path.n_steps}]")
    o = path.origin_index
    ids = path.point_ids[o : o + n + 1].tolist()
    chain = []
    times = []
    where = {}
    ys = [] if record else None
    for t, k in enumerate(ids):
        j = where.get(k)
        if j is None:
            where[k] = len(chain)
            chain.append(k)
            times.append(t)
        else:
            for kk in chain[j + 1 :]:
                del where[kk]
            del chain[j + 1 :]
            del times[j + 1 :]
        if record:
            ys.append(len(chain) - 1)
    points = path.positions[o + np.asarray(times, dtype=np.int64)]
    if record:
        return points, times, np.asarray(ys, dtype=np.int64)
    return points, times


def loop_erasure_lengths(path, n):
    """``Y_m`` for every ``m <= n`` in one incremental pass."""
    return _erase(path, n, record=True)[2]


def retained_times(path, horizon):
    """Times ``m <= horizon`` whose point survives erasure of ``S_0..S_horizon``.

    A surviving point is credited to the visit at which it last entered
    the erased chain; revisits that close a loop keep the earlier entry.
    """
    return np.asarray(_erase(path, horizon)[1], dtype=np.int64)


def retained_count(path, n, horizon):
    """Approximation of ``Y'_n``: how many of ``S_0..S_n`` survive erasing the window.

    The true quantity erases the infinite path; erasing up to ``horizon``
    agrees with it unless a loop closing after ``horizon`` reaches back
    before ``n``.
    """
    if n > horizon:
        raise ValueError("n must not exceed horizon")
    return int(np.count_nonzero(retained_times(path, horizon) <= n))


def range_count(path, n):
    """Number of distinct points among ``S_0..S_n``."""
    if not 0 <= n <= path.n_steps:
        raise IndexError(f"n={n} outside [0, {path.n_steps}]")
    o = path.origin_index
    return int(np.unique(path.point_ids[o : o + n + 1]).size)


def range_counts(path):
    """``range_count(path, n)`` for all ``n`` at once."""
    o = path.origin_index
    ids = path.point_ids[o:]
    new = np.zeros(len(ids), dtype=np.int64)
    _, first = np.unique(ids, return_index=True)
    new[first] = 1
    return np.cumsum(new)


def dump_path(path, fh):
    """Write the binary sidecar format.

    Header: ``b"RWRW"``, version u16, d u16, n_steps u64, seed u64, all
    little-endian, then one byte per forward step.  Version 2 (two-sided)
    appends n_back u64 and the backward steps.
    """
    version = 1 if path.back_steps is None else 2
    seed = 0 if path.seed is None else int(path.seed)
    fh.write(_MAGIC + struct.pack("<HHQQ", version, path.dim, path.n_steps, seed))
    fh.write(np.asarray(path.steps, dtype=np.uint8).tobytes())
    if version == 2:
        fh.write(struct.pack("<Q", path.n_back))
        fh.write(np.asarray(path.back_steps, dtype=np.uint8).tobytes())


def load_path(fh):
    head = fh.read(4 + 2 + 2 + 8 + 8)
    if head[:4] != _MAGIC:
        raise ValueError("not a path file")
    version, d, n, seed = struct.unpack("<HHQQ", head[4:])
    if version not in (1, 2):
        raise ValueError(f"unsupported path file version {version}")
    steps = np.frombuffer(fh.read(n), dtype=np.uint8).copy()
    back = None
    if version == 2:
        (m,) = struct.unpack("<Q", fh.read(8))
        back = np.frombuffer(fh.read(m), dtype=np.uint8).copy()
    if len(steps) != n or (steps >= 2 * d).any():
        raise ValueError("corrupt path file")
    return WalkPath(d, steps, back, seed)
