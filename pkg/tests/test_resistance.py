import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rangewalk.environment import Environment, TwoSidedEnvironment
from rangewalk.graph import build_graph, graph_distance
from rangewalk.lattice import cut_times, gen_path, path_from_points, straight_path
from rangewalk.resistance import (
    BallCoversGraphError,
    ConductanceNetwork,
    CutChain,
    SingularNetworkError,
    _solve,
    cutpoint_resistance_profile,
    effective_resistance,
    pcg,
    resistance_to_ball_complement,
)
from rangewalk.rng import derive_seed

from oracles import commute_resistance, pinv_resistance

SQUARE = [(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)]


def small_graph(seed, n=300, d=4):
    return build_graph(gen_path(d, n, seed))


def test_series_and_parallel_laws():
    g = build_graph(path_from_points([(0,), (1,), (2,)]))
    assert effective_resistance(ConductanceNetwork(g), 0, 2) == pytest.approx(2.0, abs=1e-12)
    sq = build_graph(path_from_points(SQUARE))
    net = ConductanceNetwork(sq)
    assert effective_resistance(net, sq.root, sq.vertex_of((1, 1))) == pytest.approx(1.0, abs=1e-12)
    # adjacent corners: one edge in parallel with a three-edge arm
    assert effective_resistance(net, sq.root, sq.vertex_of((1, 0))) == pytest.approx(0.75, abs=1e-12)


def test_ladder_network():
    # 2xk ladder traced by a walk; compare with the pseudo-inverse
    pts = [(0, 0)]
    for k in range(1, 6):
        pts += [(k, 0)]
    pts += [(5, 1)] + [(k, 1) for k in range(4, -1, -1)] + [(0, 0)]
    pts2 = pts + [(1, 0), (1, 1), (1, 0), (2, 0), (2, 1), (2, 0), (3, 0), (3, 1), (3, 0), (4, 0), (4, 1)]
    g = build_graph(path_from_points(pts2))
    net = ConductanceNetwork(g)
    a, b = g.root, g.vertex_of((5, 1))
    assert effective_resistance(net, a, b) == pytest.approx(pinv_resistance(g, a, b), abs=1e-12)


def test_conductance_modes():
    p = gen_path(4, 2000, seed=1)
    g = build_graph(p)
    assert np.all(ConductanceNetwork(g, "unit").conductance == 1)
    assert np.array_equal(ConductanceNetwork(g, "crossing").conductance, g.edge_mult)
    assert np.array_equal(ConductanceNetwork(g, "weighted").conductance, g.edge_mult)
    with pytest.raises(ValueError):
        ConductanceNetwork(g, "bogus")


@pytest.mark.parametrize("method", ["dense", "cg", "direct", "auto"])
def test_solver_methods_agree_with_pinv(method):
    for s in range(5):
        g = small_graph(derive_seed(2, s))
        net = ConductanceNetwork(g)
        far = int(np.argmax(graph_distance(g, g.root)))
        r = effective_resistance(net, g.root, far, method=method)
        assert r == pytest.approx(pinv_resistance(g, g.root, far), abs=1e-8)


@given(st.integers(0, 2**32))
@settings(max_examples=40, deadline=None)
def test_commute_time_identity(seed):
    g = small_graph(seed, n=150)
    rng = np.random.default_rng(seed)
    a, b = rng.choice(g.n_vertices, size=2, replace=False)
    for mode in ("unit", "crossing"):
        net = ConductanceNetwork(g, mode)
        c = net.conductance
        r = effective_resistance(net, int(a), int(b))
        assert r == pytest.approx(commute_resistance(g, a, b, c), abs=1e-8)


def test_pcg_reports_iterations_and_converges():
    g = small_graph(5, n=400)
    net = ConductanceNetwork(g)
    keep = np.arange(1, g.n_vertices)
    A = net.laplacian[keep][:, keep].tocsr()
    b = np.zeros(len(keep))
    b[-1] = 1.0
    x, it, ok = pcg(A, b, maxiter=10 * len(keep))
    assert ok and it > 0
    assert np.linalg.norm(A @ x - b) <= 1e-9
    x2 = _solve(A, b, "dense")
    assert np.allclose(x, x2, atol=1e-8)


def test_rayleigh_monotonicity():
    rng = np.random.default_rng(3)
    for s in range(10):
        g = small_graph(derive_seed(4, s), n=120)
        a, b = (int(v) for v in rng.choice(g.n_vertices, size=2, replace=False))
        # crossing counts are >= 1 edgewise, so they can only lower resistances
        unit = effective_resistance(ConductanceNetwork(g, "unit"), a, b)
        cross = effective_resistance(ConductanceNetwork(g, "crossing"), a, b)
        assert cross <= unit * (1 + 1e-9)
        c = rng.uniform(0.5, 2.0, g.n_edges)
        c2 = c.copy()
        c2[rng.integers(g.n_edges)] *= 3.0
        assert pinv_resistance(g, a, b, c2) <= pinv_resistance(g, a, b, c) * (1 + 1e-9)


def test_resistance_triangle_inequality():
    g = small_graph(9, n=400)
    net = ConductanceNetwork(g)
    rng = np.random.default_rng(1)
    for a, b, c in rng.choice(g.n_vertices, size=(20, 3)):
        if len({a, b, c}) < 3:
            continue
        ab = effective_resistance(net, int(a), int(b))
        bc = effective_resistance(net, int(b), int(c))
        ac = effective_resistance(net, int(a), int(c))
        assert ac <= (ab + bc) * (1 + 1e-9)


def test_crossing_mode_neighbour_bound():
    for s in range(5):
        g = small_graph(derive_seed(8, s), n=500)
        net = ConductanceNetwork(g, "crossing")
        for x in g.neighbors(g.root):
            k = np.flatnonzero(
                ((g.edge_u == g.root) & (g.edge_v == x)) | ((g.edge_v == g.root) & (g.edge_u == x))
            )[0]
            assert effective_resistance(net, g.root, int(x)) <= 1.0 / g.edge_mult[k] + 1e-12


def test_resistance_errors():
    g = build_graph(straight_path(2, 5))
    net = ConductanceNetwork(g)
    with pytest.raises(ValueError):
        effective_resistance(net, 0, [0, 1])
    with pytest.raises(IndexError):
        effective_resistance(net, 0, 99)
    with pytest.raises(BallCoversGraphError):
        resistance_to_ball_complement(net, 0, 5)
    assert issubclass(SingularNetworkError, ValueError)


def test_ball_complement_half_line_and_upper_bound():
    g = build_graph(straight_path(2, 60))
    net = ConductanceNetwork(g)
    for n in (1, 7, 30):
        assert resistance_to_ball_complement(net, 0, n) == pytest.approx(n + 1, abs=1e-9)
    for s in range(5):
        env = Environment.generate(4, derive_seed(12, s), horizon=5000)
        net = ConductanceNetwork(env.graph)
        for n in (2, 10, 40):
            assert resistance_to_ball_complement(net, env.root, n) <= n + 1 + 1e-9


def test_ball_complement_lower_bound_d5():
    # with the d=5 distance constant near 1, B(0, 2 delta n) has resistance >= n-1
    delta = 1.03
    n = 100
    for s in range(5):
        env = Environment.generate(5, derive_seed(14, s), horizon=20_000)
        net = ConductanceNetwork(env.graph)
        r = resistance_to_ball_complement(net, env.root, int(np.ceil(2 * delta * n)))
        assert r >= n - 1


def test_profile_straight_line_and_direct():
    s = straight_path(3, 40)
    g = build_graph(s)
    prof = cutpoint_resistance_profile(ConductanceNetwork(g), cut_times(s, guard=0.0))
    assert np.allclose(prof, np.arange(1, len(prof) + 1))
    env = Environment.generate(5, 77, horizon=3000)
    net = env.network("uniform")
    fast = cutpoint_resistance_profile(net, env.cuts)
    slow = cutpoint_resistance_profile(net, env.cuts, method="direct")
    assert np.allclose(fast, slow, atol=1e-9)


def test_first_cut_resistance_bounds():
    for d in (4, 5):
        for s in range(10):
            env = Environment.generate(d, derive_seed(15, d, s), horizon=4000)
            net = env.network("uniform")
            prof = cutpoint_resistance_profile(net, env.cuts)
            t1 = env.cuts.exact_times[env.cuts.exact_times > 0][0]
            c1 = env.graph.vertex_at(int(t1))
            dist = env.distances[c1]
            if c1 == env.root:
                assert prof[0] == 0.0
                continue
            assert 1 - 1e-12 <= prof[0] <= dist + 1e-12


def test_profile_ratio_stabilises_d5():
    ratios = {100: [], 200: [], 400: []}
    for s in range(40):
        env = Environment.generate(5, derive_seed(16, s), horizon=3000)
        prof = cutpoint_resistance_profile(env.network("uniform"), env.cuts)
        for n in ratios:
            ratios[n].append(prof[n - 1] / n)
    m = {n: np.mean(v) for n, v in ratios.items()}
    assert abs(m[400] / m[200] - 1) < 0.05
    assert abs(m[200] / m[100] - 1) < 0.05


def test_cut_chain_matches_direct_resistances():
    env = TwoSidedEnvironment.generate(5, 21, horizon=3000)
    chain = env.chain("uniform")
    R = chain.resistances()
    net = chain.net
    for j in range(0, chain.n_segments, max(1, chain.n_segments // 10)):
        a, b = int(chain.boundary[j]), int(chain.boundary[j + 1])
        assert R[j] == pytest.approx(effective_resistance(net, a, b), abs=1e-9)
    assert np.all(chain.distances() >= 1)
    assert np.all(R <= chain.distances() + 1e-12)


def test_cut_chain_potential_is_harmonic():
    env = TwoSidedEnvironment.generate(5, 23, horizon=2000)
    chain = env.chain("crossing")
    v = chain.potential(np.arange(chain.n_segments + 1, dtype=float))
    L = chain.net.laplacian
    flux = L @ v
    assert np.allclose(flux[chain.interior], 0, atol=1e-9)
    assert isinstance(chain, CutChain)
