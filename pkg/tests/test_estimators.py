import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from rangewalk.environment import TwoSidedEnvironment
from rangewalk.estimators import (
    ConstantEstimates,
    DegenerateFitError,
    ErgodicConstants,
    PowerLawFit,
    annealed_limit_test,
    cut_time_growth,
    d4_environment_statistics,
    d4_window_checks,
    dimension_fit,
    estimate_constants,
    half_normal_reference,
    kappa,
    ks_two_sample,
    mixture_reference,
    sample_blocks,
    sample_cut_time_growth,
    scaling_limit_test,
    spectral_dimension,
    walk_dimension,
    walk_endpoint,
    window_coverage,
)
from rangewalk.graph import InsufficientCutTimesError, build_graph
from rangewalk.lattice import straight_path
from rangewalk.rng import derive_seed
from rangewalk.walk import cut_chain, simulate, simulate_batch

NAMES = ("tau", "delta", "rho", "nu", "eta")


def estimates(*vals):
    return ConstantEstimates(dict(zip(NAMES, vals)), dict.fromkeys(NAMES, 0.0))


@pytest.fixture(scope="module")
def blocks_d5():
    return sample_blocks(5, 60, 20_000, seed=7)


def test_kappa_examples():
    (k1, _), (k2, _) = kappa(estimates(1, 1, 1, 1, 1))
    assert k1 == 1 and k2 == 1
    (k1, _), (k2, _) = kappa(estimates(2, 1, 1, 1, 1))
    assert k1 == 1 and k2 == 4
    with pytest.raises(ValueError):
        kappa(estimates(1, 1, 0, 1, 1))


def test_kappa_error_propagation():
    e = ConstantEstimates(dict(zip(NAMES, (2.0, 1.0, 1.0, 1.0, 1.0))), dict(zip(NAMES, (0.0, 0.1, 0, 0, 0))))
    (k1, s1), _ = kappa(e)
    assert s1 == pytest.approx(2 * 0.1 * k1)


def test_straight_line_constants_are_one():
    X = np.tile([1.0, 1.0, 1.0, 2.0, 2.0], (10, 1))
    est = ErgodicConstants().fit(X, groups=np.arange(10) % 2)
    for name in NAMES + ("kappa1", "kappa2"):
        assert getattr(est, name + "_") == pytest.approx(1.0)
    assert est.predict([10, 20]).tolist() == pytest.approx([10.0, 20.0])


def test_ergodic_constants_sklearn_contract(blocks_d5):
    est = ErgodicConstants()
    assert est.get_params() == {"halve_weight": True}
    assert clone(est).set_params(halve_weight=False).halve_weight is False
    with pytest.raises(NotFittedError):
        est.predict([1.0])
    with pytest.raises(ValueError):
        est.fit(np.ones((4, 3)))
    bad = blocks_d5.to_array()[:10].copy()
    bad[0, 3] = 0
    with pytest.raises(ValueError):
        est.fit(bad)
    est.fit(blocks_d5.to_array(), groups=blocks_d5.group)
    assert est.n_groups_ == 60 and est.n_blocks_ == len(blocks_d5)
    assert est.kappa2_ / est.kappa1_ == pytest.approx((est.tau_ / est.delta_) ** 2, rel=1e-12)
    full = ErgodicConstants(halve_weight=False).fit(blocks_d5.to_array(), groups=blocks_d5.group)
    assert full.nu_ == pytest.approx(2 * est.nu_)


def test_block_invariants_d5(blocks_d5):
    b = blocks_d5
    assert len(b) > 1000
    assert np.all(1 - 1e-9 <= b.resistance)
    assert np.all(b.resistance <= b.distance + 1e-9)
    assert np.all(b.distance <= b.duration)
    assert np.all((b.weight >= 2) & (b.weight <= 10))
    assert np.all(b.return_time >= 1 - 1e-12)


def test_constant_orderings_and_determinism(blocks_d5):
    est = estimate_constants(blocks_d5)
    assert est.violations(5) == []
    assert 1 <= est["nu"] <= est["tau"]
    again = estimate_constants(sample_blocks(5, 60, 20_000, seed=7))
    assert again.as_dict() == est.as_dict()
    (k1, s1), (k2, s2) = kappa(est)
    assert k1 == pytest.approx(est["kappa1"], rel=1e-12)
    assert k2 == pytest.approx(est["kappa2"], rel=1e-12)


def test_violations_detect_broken_orderings():
    e = ConstantEstimates(dict(zip(NAMES, (1.0, 2.0, 0.5, 1.0, 1.0))), dict.fromkeys(NAMES, 0.01))
    v = e.violations(5)
    assert "delta <= tau" in v and "1 <= rho" in v


def test_block_constants_refuse_d4():
    with pytest.raises(InsufficientCutTimesError, match="block constants require d >= 5"):
        sample_blocks(4, 2, 1000, seed=1)


def test_jump_chain_martingale_variance(blocks_d5):
    # M = signed resistance along the chain; E (dM)^2 per chain step -> rho / nu
    est = estimate_constants(blocks_d5)
    q = []
    for s in range(20):
        env = TwoSidedEnvironment.generate(5, derive_seed(61, s), horizon=40_000)
        chain = env.chain()
        M = np.concatenate([[0.0], np.cumsum(chain.resistances())])
        mid = len(env.boundary_times) // 2
        start = env.graph.vertex_at(int(env.boundary_times[mid]))
        traj = simulate(env.graph, start, 40_000, np.random.default_rng(s))
        J = cut_chain(traj, env.cut_label).J
        q.append(np.mean(np.diff(M[J]) ** 2))
    q = np.array(q)
    target = est["rho"] / est["nu"]
    assert abs(q.mean() - target) <= 3 * q.std(ddof=1) / math.sqrt(len(q)) + 3 * est.stderr["rho"]


def test_kappa1_matches_direct_variance_slope(blocks_d5):
    est = estimate_constants(blocks_d5)
    n = 2000
    D2 = np.array([walk_endpoint(5, derive_seed(71, s), n)[0] ** 2 / n for s in range(300)])
    se = math.hypot(D2.std(ddof=1) / math.sqrt(len(D2)), est.stderr["kappa1"])
    assert abs(D2.mean() - est["kappa1"]) <= 3 * se


def test_synthetic_spectral_dimension():
    n = 2.0 ** np.arange(6, 17)
    fit = dimension_fit(n, n**-0.5)
    ds, se = spectral_dimension(fit)
    assert ds == pytest.approx(1.0, abs=1e-3)
    assert se < 1e-3


def test_synthetic_log_correction():
    n = 2.0 ** np.arange(6, 17)
    y = 3.0 * n**0.5 * np.log(n) ** -0.3
    fit = dimension_fit(n, y, model="log-corrected", p=0.5)
    assert fit.log_exponent == pytest.approx(-0.3, abs=0.05)
    rng = np.random.default_rng(0)
    noisy = y * np.exp(rng.normal(0, 0.02, len(n)))
    fit = dimension_fit(n, noisy, model="log-corrected", p=0.5)
    assert abs(fit.log_exponent + 0.3) < 0.05
    assert fit.log_exponent_ci[0] < fit.log_exponent < fit.log_exponent_ci[1]


def test_srw_on_line_walk_dimension():
    g = build_graph(straight_path(1, 5000, n_back=5000))
    times = 2 ** np.arange(4, 12)
    pos = simulate_batch(g, np.full(20_000, g.root), int(times[-1]), np.random.default_rng(1), times=times)
    msd = (g.points[pos, 0].astype(float) ** 2).mean(axis=1)
    dw, _ = walk_dimension(dimension_fit(times, msd))
    assert dw == pytest.approx(2.0, abs=0.02)
    exact, _ = walk_dimension(dimension_fit(times, times.astype(float)))
    assert exact == pytest.approx(2.0, abs=1e-12)


def test_pooled_fit_uses_group_intercepts():
    n = np.tile(2.0 ** np.arange(6, 13), 3)
    groups = np.repeat([0, 1, 2], 7)
    amp = np.array([1.0, 5.0, 0.2])[groups]
    y = amp * n**-0.5 * np.log(n) ** -0.2
    fit = dimension_fit(n, y, model="log-corrected", p=-0.5, groups=groups)
    assert fit.log_exponent == pytest.approx(-0.2, abs=1e-10)


def test_power_law_estimator_api():
    n = 2.0 ** np.arange(4, 12)
    y = 2.0 * n**0.7
    est = PowerLawFit().fit(n, y)
    assert est.slope_ == pytest.approx(0.7)
    assert est.predict([1024.0])[0] == pytest.approx(2.0 * 1024**0.7)
    assert est.score(n, y) == pytest.approx(1.0)
    assert set(est.get_params()) == {"model", "p", "confidence", "min_points"}
    with pytest.raises(DegenerateFitError):
        PowerLawFit().fit(n[:4], y[:4])
    with pytest.raises(ValueError):
        PowerLawFit(model="log-corrected").fit(n, y)
    with pytest.raises(ValueError):
        PowerLawFit(model="cubic").fit(n, y)
    with pytest.raises(ValueError):
        PowerLawFit().fit(n, -y)


def test_ks_edge_cases():
    a = np.linspace(0, 1, 2000)
    assert ks_two_sample(a, a)[0] == 0.0
    assert ks_two_sample(a, a + 5)[0] == 1.0
    with pytest.raises(ValueError):
        scaling_limit_test(a[:999], 1.0)


def test_limit_tests_accept_their_own_law():
    x = half_normal_reference(0.7, 5000, seed=123)
    assert scaling_limit_test(x, 0.7).pvalue > 1e-3
    assert scaling_limit_test(x, 3.0).pvalue < 1e-6
    c = mixture_reference(1.7, 5, 5000, seed=321)
    assert annealed_limit_test(c, 1.7, 5).pvalue > 1e-3


def test_mixture_reference_moments():
    c = mixture_reference(2.0, 5)
    # E[coord^2] = E|B_kappa2| / d
    assert np.mean(c**2) == pytest.approx(math.sqrt(2 * 2.0 / math.pi) / 5, rel=0.02)
    assert np.array_equal(c, mixture_reference(2.0, 5))


def test_cut_time_growth_report():
    levels = 2 ** np.arange(4, 10)
    straight = cut_time_growth(np.tile(levels, (3, 1)), levels)
    assert np.allclose(straight.linear, 1.0)
    assert straight.linear_drift == 0.0
    assert np.all(np.diff(straight.log_corrected) < 0)
    rep = sample_cut_time_growth(5, 12, 2 ** np.arange(8, 14), seed=3)
    assert abs(rep.linear_drift) < 0.05
    assert rep.n_paths == 12
    assert rep.spread(3, "linear") < 1.1


def test_window_coverage_picks_smallest_lambda():
    n = 1000
    inside = np.full(50, n * math.log(n) ** 0.4)
    row = window_coverage(inside, "volume", n)
    assert row.lam == 2 and row.coverage == 1.0
    far = np.full(50, 1e9)
    row = window_coverage(far, "volume", n)
    assert row.lam == 32 and row.coverage == 0.0
    mixed = np.concatenate([inside[:47], far[:3]])
    assert window_coverage(mixed, "volume", n).coverage == pytest.approx(0.94)


def test_d4_environment_statistics_and_checks():
    rows = [d4_environment_statistics(4, derive_seed(81, s), 50) for s in range(5)]
    assert set(rows[0]) == {"volume", "exit_time", "max_displacement"}
    for r in rows:
        assert r["volume"] >= 50
        assert r["exit_time"] >= 50**2 / 4
        assert 1 <= r["max_displacement"] <= 50
    out = d4_window_checks(rows, 50)
    assert [r.quantity for r in out] == ["volume", "exit_time", "max_displacement"]


def test_lattice_spacing_removes_atoms():
    # a fine lattice rounding of the reference law fails without the
    # correction and passes with it
    h = 0.1
    c = np.round(mixture_reference(1.7, 5, 3000, seed=9) / h) * h
    assert annealed_limit_test(c, 1.7, 5).pvalue < 1e-6
    assert annealed_limit_test(c, 1.7, 5, lattice_spacing=h).pvalue > 1e-3
    x = 2 * np.round(half_normal_reference(0.7, 3000, seed=9) / 0.2) * 0.1
    assert scaling_limit_test(x, 0.7, lattice_spacing=0.2).pvalue > 1e-3
