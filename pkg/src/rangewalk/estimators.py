"""Estimators for block constants, growth exponents and scaling-limit laws.

The block constants are ratio estimators over the exact cut-points of
two-sided environments.  Error bars are batch means over environments: each
environment contributes one batch, and a ratio ``sum(A) / sum(B)`` gets the
usual linearised variance ``sum((A_g - theta B_g)^2) / (sum B)^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .environment import Environment, TwoSidedEnvironment, environment_seed
from .graph import InsufficientCutTimesError, ball, volume
from .lattice import cut_times, gen_path
from .walk import HorizonError, expected_exit_time, simulate, weighted_return_times

CONSTANTS = ("tau", "delta", "rho", "nu", "eta")
REFERENCE_SEED = 0x5EED_2F1E
REFERENCE_DRAWS = 100_000
DEFAULT_LAMBDA_GRID = (2, 4, 8, 16, 32)


class DegenerateFitError(ValueError):
    """Too few usable points for a regression."""


# ---------------------------------------------------------------------------
# block samples


@dataclass(frozen=True)
class BlockSample:
    """Per-cut-point block statistics, one row per anchor.

    ``weight`` is the degree of the anchor (crossing total in weighted mode)
    and ``weighted_return`` is ``weight * E H_1`` from the anchor.
    """

    duration: np.ndarray
    distance: np.ndarray
    resistance: np.ndarray
    weight: np.ndarray
    weighted_return: np.ndarray
    group: np.ndarray

    def __len__(self):
        return len(self.duration)

    @property
    def return_time(self):
        return self.weighted_return / self.weight

    def to_array(self):
        """``(n, 5)`` matrix in the column order expected by :class:`ErgodicConstants`."""
        return np.column_stack(
            [self.duration, self.distance, self.resistance, self.weight, self.weighted_return]
        ).astype(np.float64)

    @classmethod
    def concatenate(cls, samples):
        samples = list(samples)
        return cls(*(np.concatenate([getattr(s, f) for s in samples]) for f in cls.__dataclass_fields__))


def _require_block_dimension(d):
    if d < 5:
        raise InsufficientCutTimesError(
            f"block constants require d >= 5 (two-sided cut-times are almost surely absent for d={d})"
        )


def environment_blocks(d, seed, horizon, mode="uniform", group=0):
    """Block statistics of one two-sided environment.

    Every exact cut-time except the two outermost serves as an anchor, which
    realises the law conditioned on the origin being a cut-time.
    """
    _require_block_dimension(d)
    try:
        env = TwoSidedEnvironment.generate(d, seed, horizon)
    except HorizonError as exc:
        raise InsufficientCutTimesError(str(exc)) from None
    chain = env.chain(mode)
    bt = env.boundary_times
    R = chain.resistances()
    dist = chain.distances()
    w = chain.net.weight[chain.boundary]
    k = len(bt) - 1
    return BlockSample(
        duration=np.diff(bt)[1:],
        distance=dist[1:],
        resistance=R[1:],
        weight=w[1:k],
        weighted_return=weighted_return_times(chain),
        group=np.full(k - 1, group, dtype=np.int64),
    )


def sample_blocks(d, n_environments, horizon, seed, mode="uniform", map_fn=map):
    """Block samples from ``n_environments`` independent two-sided environments.

    ``map_fn`` may be a parallel map; results are assembled in environment
    order so the output does not depend on scheduling.
    """
    _require_block_dimension(d)
    tasks = [(d, environment_seed(seed, i), horizon, mode, i) for i in range(n_environments)]
    return BlockSample.concatenate(map_fn(_blocks_task, tasks))


def _blocks_task(args):
    return environment_blocks(*args)


# ---------------------------------------------------------------------------
# ergodic constants


@dataclass(frozen=True)
class ConstantEstimates:
    """Point estimates and standard errors of the block constants and kappas."""

    values: dict
    stderr: dict
    n_blocks: int = 0
    n_groups: int = 0

    def __getitem__(self, name):
        return self.values[name]

    def as_dict(self):
        return {k: {"value": float(self.values[k]), "stderr": float(self.stderr[k])} for k in self.values}

    def violations(self, d, nsigma=3.0):
        """Provable orderings that the estimates break by more than ``nsigma`` errors."""
        v, s = self.values, self.stderr
        tol = lambda *names: nsigma * math.sqrt(sum(s[n] ** 2 for n in names))  # noqa: E731
        checks = {
            "1 <= rho": 1 - v["rho"] <= tol("rho"),
            "rho <= delta": v["rho"] - v["delta"] <= tol("rho", "delta"),
            "delta <= tau": v["delta"] - v["tau"] <= tol("delta", "tau"),
            "1 <= nu": 1 - v["nu"] <= tol("nu"),
            "nu <= tau": v["nu"] - v["tau"] <= tol("nu", "tau"),
            "1 <= eta": 1 - v["eta"] <= tol("eta"),
            "eta <= 1 + 4 d tau / nu": v["eta"] - (1 + 4 * d * v["tau"] / v["nu"]) <= tol("eta", "tau", "nu"),
        }
        return [k for k, ok in checks.items() if not ok]


def kappa(estimates):
    """Plug-in ``kappa1 = delta^2 / (nu rho eta)`` and ``kappa2 = tau^2 / (nu rho eta)``.

    Errors propagate to first order treating the five inputs as independent.
    Returns ``((kappa1, se1), (kappa2, se2))``.
    """
    v, s = estimates.values, estimates.stderr
    if any(v[k] <= 0 for k in CONSTANTS):
        raise ValueError("constants must be positive")
    den = v["nu"] * v["rho"] * v["eta"]
    base = sum((s[k] / v[k]) ** 2 for k in ("nu", "rho", "eta"))
    out = []
    for top in ("delta", "tau"):
        val = v[top] ** 2 / den
        out.append((val, val * math.sqrt(4 * (s[top] / v[top]) ** 2 + base)))
    return tuple(out)


def _ratio(a, b):
    """Ratio of sums with its per-group influence values."""
    sa, sb = math.fsum(a), math.fsum(b)
    theta = sa / sb
    return theta, (a - theta * b) / sb


class ErgodicConstants(BaseEstimator):
    """Estimate the block constants from a block sample.

    Parameters
    ----------
    halve_weight : bool, default True
        Report ``nu`` as half the mean anchor weight (the degree convention).

    Attributes
    ----------
    tau_, delta_, rho_, nu_, eta_ : float
        Mean block duration, distance, resistance, half mean degree and
        mean time per cut-point visit.
    kappa1_, kappa2_ : float
        Diffusion constants built from the above.
    stderr_ : dict
        Batch-means standard errors, keyed by constant name.
    """

    def __init__(self, halve_weight=True):
        self.halve_weight = halve_weight

    def fit(self, X, y=None, groups=None):
        """Fit from an ``(n, 5)`` array ``[T, d, R, weight, weight * E H_1]``.

        ``groups`` labels the environment of each row; batches are formed per
        group (each row is its own batch when omitted).
        """
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        if X.shape[1] != 5:
            raise ValueError(f"expected 5 columns, got {X.shape[1]}")
        if np.any(X[:, 3] <= 0):
            raise ValueError("anchor weights must be positive")
        groups = np.arange(len(X)) if groups is None else np.asarray(groups)
        _, g = np.unique(groups, return_inverse=True)
        m = g.max() + 1
        if m < 2:
            raise ValueError("need at least two groups for batch-means errors")
        S = np.zeros((m, 6))
        np.add.at(S, g, np.column_stack([X, np.ones(len(X))]))
        T, D, R, W, WH, N = S.T
        half = 0.5 if self.halve_weight else 1.0

        est, infl = {}, {}
        est["tau"], infl["tau"] = _ratio(T, N)
        est["delta"], infl["delta"] = _ratio(D, N)
        est["rho"], infl["rho"] = _ratio(R, N)
        nu, infl_nu = _ratio(W, N)
        est["nu"], infl["nu"] = half * nu, half * infl_nu
        est["eta"], infl["eta"] = _ratio(WH, W)

        den = est["nu"] * est["rho"] * est["eta"]
        rel = infl["nu"] / est["nu"] + infl["rho"] / est["rho"] + infl["eta"] / est["eta"]
        for name, top in (("kappa1", "delta"), ("kappa2", "tau")):
            est[name] = est[top] ** 2 / den
            infl[name] = est[name] * (2 * infl[top] / est[top] - rel)

        scale = m / (m - 1)
        self.stderr_ = {k: math.sqrt(scale * math.fsum(infl[k] ** 2)) for k in est}
        for k, val in est.items():
            setattr(self, k + "_", val)
        self.n_blocks_ = len(X)
        self.n_groups_ = int(m)
        return self

    @property
    def estimates_(self):
        check_is_fitted(self, "kappa1_")
        names = CONSTANTS + ("kappa1", "kappa2")
        return ConstantEstimates(
            {k: getattr(self, k + "_") for k in names},
            dict(self.stderr_),
            self.n_blocks_,
            self.n_groups_,
        )

    def predict(self, X):
        """Limiting mean squared graph distance ``kappa1 * n`` at walk times ``n``."""
        check_is_fitted(self, "kappa1_")
        n = check_array(np.asarray(X, dtype=np.float64).reshape(-1, 1)).ravel()
        return self.kappa1_ * n


def estimate_constants(samples, halve_weight=True):
    """Shortcut: fit :class:`ErgodicConstants` on a :class:`BlockSample`."""
    est = ErgodicConstants(halve_weight=halve_weight)
    return est.fit(samples.to_array(), groups=samples.group).estimates_


# ---------------------------------------------------------------------------
# power-law fits


@dataclass(frozen=True)
class SeriesFit:
    """Result of a (possibly log-corrected) power-law fit ``a n^p (ln n)^gamma``."""

    model: str
    exponent: float
    exponent_stderr: float
    exponent_ci: tuple
    log_exponent: float
    log_exponent_stderr: float
    log_exponent_ci: tuple
    amplitude: float
    n_points: int


class PowerLawFit(RegressorMixin, BaseEstimator):
    """Least-squares fit of ``y = a n^p`` or ``y = a n^p (ln n)^gamma`` in log space.

    With ``model="plain"`` both ``a`` and ``p`` are fitted.  With
    ``model="log-corrected"`` the exponent ``p`` is held at the supplied
    value and only ``a`` and ``gamma`` are fitted.  ``groups`` in
    :meth:`fit` gives each group its own amplitude, which pools several
    series into a single slope.

    Confidence intervals come from the regression residuals (Student t).
    """

    def __init__(self, model="plain", p=None, confidence=0.95, min_points=5):
        self.model = model
        self.p = p
        self.confidence = confidence
        self.min_points = min_points

    def _regressor(self, n):
        return np.log(n) if self.model == "plain" else np.log(np.log(n))

    def fit(self, X, y, groups=None):
        if self.model not in ("plain", "log-corrected"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.model == "log-corrected" and self.p is None:
            raise ValueError("the log-corrected model needs a fixed exponent p")
        n = check_array(np.asarray(X, dtype=np.float64).reshape(len(y), -1)).ravel()
        y = np.asarray(y, dtype=np.float64).ravel()
        if self.model == "log-corrected" and np.any(n <= 1):
            raise ValueError("log-corrected fits need n > 1")
        if np.any(n <= 0) or np.any(y <= 0):
            raise ValueError("series must be positive")
        groups = np.zeros(len(n), dtype=np.int64) if groups is None else np.asarray(groups)
        _, g = np.unique(groups, return_inverse=True)
        k = g.max() + 1
        if len(np.unique(n)) < self.min_points:
            raise DegenerateFitError(f"need at least {self.min_points} distinct n values, got {len(np.unique(n))}")

        x = self._regressor(n)
        target = np.log(y)
        if self.model == "log-corrected":
            target = target - self.p * np.log(n)
        A = np.zeros((len(n), k + 1))
        A[np.arange(len(n)), g] = 1.0
        A[:, k] = x
        coef, _, rank, _ = np.linalg.lstsq(A, target, rcond=None)
        dof = len(n) - (k + 1)
        if rank < k + 1 or dof < 1:
            raise DegenerateFitError("regression is rank deficient")
        resid = target - A @ coef
        s2 = resid @ resid / dof
        cov = s2 * np.linalg.pinv(A.T @ A)
        slope, se = float(coef[k]), float(math.sqrt(cov[k, k]))
        q = stats.t.ppf(0.5 + self.confidence / 2, dof)

        self.intercepts_ = coef[:k]
        self.slope_, self.slope_stderr_ = slope, se
        self.slope_ci_ = (slope - q * se, slope + q * se)
        self.n_points_ = len(n)
        if self.model == "plain":
            self.exponent_, self.gamma_ = slope, 0.0
        else:
            self.exponent_, self.gamma_ = float(self.p), slope
        return self

    def predict(self, X):
        check_is_fitted(self, "slope_")
        n = np.asarray(X, dtype=np.float64).ravel()
        a = math.exp(float(np.mean(self.intercepts_)))
        return a * n**self.exponent_ * np.log(n) ** self.gamma_

    def score(self, X, y):
        """``R^2`` in log space."""
        y = np.log(np.asarray(y, dtype=np.float64).ravel())
        pred = np.log(self.predict(X))
        return 1.0 - np.sum((y - pred) ** 2) / np.sum((y - y.mean()) ** 2)

    @property
    def result_(self):
        check_is_fitted(self, "slope_")
        zero = (0.0, 0.0)
        if self.model == "plain":
            return SeriesFit("plain", self.slope_, self.slope_stderr_, self.slope_ci_, 0.0, 0.0, zero,
                             math.exp(float(np.mean(self.intercepts_))), self.n_points_)
        return SeriesFit("log-corrected", float(self.p), 0.0, (float(self.p),) * 2, self.slope_,
                         self.slope_stderr_, self.slope_ci_, math.exp(float(np.mean(self.intercepts_))),
                         self.n_points_)


def dimension_fit(n, values, model="plain", p=None, groups=None, confidence=0.95):
    """Fit a series on a dyadic grid; see :class:`PowerLawFit`."""
    n = np.asarray(n, dtype=np.float64)
    return PowerLawFit(model, p, confidence).fit(n, values, groups=groups).result_


def spectral_dimension(fit):
    """``d_S`` from a fit of ``P(X_2n = 0) ~ n^(-d_S / 2)``."""
    return -2.0 * fit.exponent, 2.0 * fit.exponent_stderr


def walk_dimension(fit):
    """``d_W`` from a fit of ``E|X_n|^2 ~ n^(2 / d_W)``."""
    return 2.0 / fit.exponent, 2.0 * fit.exponent_stderr / fit.exponent**2


# ---------------------------------------------------------------------------
# scaling-limit tests


@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float
    n_samples: int
    n_reference: int
    reference_seed: int


def ks_two_sample(a, b):
    res = stats.ks_2samp(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return float(res.statistic), float(res.pvalue)


def half_normal_reference(kappa1, n_draws=REFERENCE_DRAWS, seed=REFERENCE_SEED):
    """Draws of ``|B_kappa1|``."""
    rng = np.random.default_rng(seed)
    return np.abs(rng.normal(0.0, math.sqrt(kappa1), n_draws))


def mixture_reference(kappa2, d, n_draws=REFERENCE_DRAWS, seed=REFERENCE_SEED):
    """Draws of one coordinate of ``W_{|B_kappa2|}``.

    ``W`` is the Brownian limit of the lattice walk itself, so each
    coordinate has variance ``t / d`` at time ``t``.
    """
    rng = np.random.default_rng(seed)
    t = np.abs(rng.normal(0.0, math.sqrt(kappa2), n_draws))
    return rng.normal(0.0, 1.0, n_draws) * np.sqrt(t / d)


def _min_samples(x):
    x = np.asarray(x, dtype=np.float64).ravel()
    if len(x) < 1000:
        raise ValueError(f"need at least 1000 samples, got {len(x)}")
    return x


def _dequantize(x, spacing, seed):
    # lattice-valued samples carry atoms of size O(spacing) that a KS test
    # against a continuous law reads as a mismatch; spreading each sample
    # uniformly over its lattice cell removes them
    if spacing is None:
        return x
    rng = np.random.default_rng([seed, 1])
    return x + spacing * (rng.random(len(x)) - 0.5)


def scaling_limit_test(samples, kappa1, n_reference=REFERENCE_DRAWS, seed=REFERENCE_SEED, lattice_spacing=None):
    """KS test of rescaled graph distances ``n^(-1/2) d_G(0, X_n)`` against ``|B_kappa1|``.

    Parameters
    ----------
    samples : array_like
        One rescaled distance per environment (at least 1000).
    kappa1 : float
        Variance of the limiting Brownian motion.
    n_reference, seed : int
        Size and seed of the simulated reference sample.
    lattice_spacing : float, optional
        Spacing of the grid the samples live on (``2 / sqrt(n)`` for graph
        distances, which share the parity of ``n``).  When given, samples
        are spread uniformly over their grid cell before testing, and the
        cell at zero is folded onto the half-line.
    """
    x = np.abs(_dequantize(_min_samples(samples), lattice_spacing, seed))
    ref = half_normal_reference(kappa1, n_reference, seed)
    stat, p = ks_two_sample(x, ref)
    return KSResult(stat, p, len(x), n_reference, seed)


def annealed_limit_test(coords, kappa2, d, n_reference=REFERENCE_DRAWS, seed=REFERENCE_SEED, lattice_spacing=None):
    """KS test of one rescaled coordinate ``n^(-1/4) X_n^(1)`` per environment against the mixture law.

    ``lattice_spacing`` (``n^(-1/4)`` for a lattice coordinate) works as in
    :func:`scaling_limit_test`.  Without it the atom at zero alone, of mass
    about ``n^(-1/4)`` times the limiting density there, dominates the
    statistic at moderate ``n``.
    """
    x = _dequantize(_min_samples(coords), lattice_spacing, seed)
    ref = mixture_reference(kappa2, d, n_reference, seed)
    stat, p = ks_two_sample(x, ref)
    return KSResult(stat, p, len(x), n_reference, seed)


def walk_endpoint(d, seed, n, mode="uniform"):
    """Run ``n`` steps of X on a fresh one-sided environment.

    Returns ``(graph distance, position)`` of ``X_n``.  The guard sits
    farther than ``n`` from the root, so the run is never censored.
    """
    env = Environment.generate(d, seed, min_guard_distance=n + 1)
    rng = np.random.default_rng(environment_seed(seed, 1, n))
    traj = simulate(env.network(mode), env.root, n, rng, guard=env.guard_vertex)
    end = int(traj.vertices[-1])
    return int(env.distances[end]), env.graph.points[end].copy()


# ---------------------------------------------------------------------------
# cut-time growth


@dataclass(frozen=True)
class GrowthReport:
    """Median over paths of ``T_n / n`` and ``T_n / (n sqrt(ln n))`` on dyadic levels."""

    levels: np.ndarray
    linear: np.ndarray
    log_corrected: np.ndarray
    linear_iqr: np.ndarray
    log_corrected_iqr: np.ndarray
    linear_drift: float
    log_corrected_drift: float
    n_paths: int

    def spread(self, top=3, which="log_corrected"):
        """``max / min`` of a ratio over the ``top`` highest levels."""
        r = getattr(self, which)[-top:]
        return float(r.max() / r.min())


def cut_time_sequence(d, seed, n_max, horizon=None):
    """The first ``n_max`` one-sided cut-times ``T_1 < T_2 < ...`` of a fresh path.

    The path is lengthened (keeping its prefix) until enough exact
    cut-times are available.
    """
    L = horizon or 4 * n_max
    while True:
        c = cut_times(gen_path(d, L, seed), "one").exact_times
        c = c[c > 0]
        if len(c) >= n_max:
            return c[:n_max]
        L *= 2


def _growth_task(args):
    d, seed, levels = args
    return cut_time_sequence(d, seed, int(levels[-1]))[np.asarray(levels) - 1]


def cut_time_growth(T, levels):
    """Summarise cut-time growth from an ``(n_paths, n_levels)`` array of ``T_n``.

    Medians over paths are used because cut-time gaps are heavy tailed in
    low dimension.  Drift is the relative change of the median ratio between
    the two highest levels.
    """
    T = np.atleast_2d(np.asarray(T, dtype=np.float64))
    n = np.asarray(levels, dtype=np.float64)
    lin = T / n
    logc = lin / np.sqrt(np.log(n))
    med_lin = np.median(lin, axis=0)
    med_log = np.median(logc, axis=0)

    def iqr(a):
        q = np.percentile(a, [25, 75], axis=0)
        return q[1] - q[0]

    return GrowthReport(
        levels=n.astype(np.int64),
        linear=med_lin,
        log_corrected=med_log,
        linear_iqr=iqr(lin),
        log_corrected_iqr=iqr(logc),
        linear_drift=float(med_lin[-1] / med_lin[-2] - 1),
        log_corrected_drift=float(med_log[-1] / med_log[-2] - 1),
        n_paths=len(T),
    )


def sample_cut_time_growth(d, n_paths, levels, seed, map_fn=map):
    tasks = [(d, environment_seed(seed, i), tuple(int(v) for v in levels)) for i in range(n_paths)]
    return cut_time_growth(np.array(list(map_fn(_growth_task, tasks))), levels)


# ---------------------------------------------------------------------------
# d = 4 windows

WINDOWS = {
    # name: (lower(n), upper(n)) up to the lambda factor
    "volume": (lambda n: n * math.log(n) ** (1 / 3), lambda n: n * math.log(n) ** 0.5),
    "exit_time": (lambda n: n**2, lambda n: n**2 * math.log(n) ** 0.5),
    "max_displacement": (lambda n: n**0.25 * math.log(n) ** (1 / 24), lambda n: n**0.25 * math.log(n) ** (7 / 12)),
    "return_probability": (lambda n: n**-0.5 * math.log(n) ** -1.5, lambda n: n**-0.5 * math.log(n) ** (-1 / 6)),
}


@dataclass(frozen=True)
class WindowRow:
    quantity: str
    n: int
    lam: float
    coverage: float


def window_coverage(values, quantity, n, lambda_grid=DEFAULT_LAMBDA_GRID, target=0.95):
    """Smallest grid ``lambda`` whose window holds at least ``target`` of ``values``.

    Returns a :class:`WindowRow`; when no grid value reaches the target the
    row reports the largest ``lambda`` and its (insufficient) coverage.
    """
    lo, hi = WINDOWS[quantity]
    v = np.asarray(values, dtype=np.float64)
    cov = 0.0
    for lam in sorted(lambda_grid):
        cov = float(np.mean((v >= lo(n) / lam) & (v <= lam * hi(n))))
        if cov >= target:
            return WindowRow(quantity, int(n), float(lam), cov)
    return WindowRow(quantity, int(n), float(max(lambda_grid)), cov)


def d4_environment_statistics(d, seed, n, mode="uniform", walk_steps=None):
    """Window statistics of one environment at scale ``n``.

    Returns the ball volume ``mu(B(0, n))``, the exact mean exit time from
    ``B(0, n)`` and the maximal Euclidean displacement of X over
    ``walk_steps`` (default ``n``) steps.
    """
    walk_steps = n if walk_steps is None else walk_steps
    env = Environment.generate(d, seed, min_guard_distance=max(n, walk_steps) + 1)
    net = env.network(mode)
    vol = volume(env.graph, ball(env.graph, env.root, n), weighted=(net.mode == "crossing"))
    exit_mean = expected_exit_time(net, env.root, n, guard_distance=env.guard_distance)
    rng = np.random.default_rng(environment_seed(seed, 2, walk_steps))
    traj = simulate(net, env.root, walk_steps, rng, guard=env.guard_vertex)
    pts = env.graph.points[traj.vertices]
    maxdisp = float(np.sqrt((pts.astype(np.float64) ** 2).sum(axis=1)).max())
    return {"volume": float(vol), "exit_time": exit_mean, "max_displacement": maxdisp}


def d4_window_checks(stats_rows, n, lambda_grid=DEFAULT_LAMBDA_GRID, target=0.95):
    """Coverage rows for every quantity present in ``stats_rows`` (a list of dicts)."""
    rows = []
    for q in WINDOWS:
        if stats_rows and q in stats_rows[0]:
            rows.append(window_coverage([r[q] for r in stats_rows], q, n, lambda_grid, target))
    return rows
