import numpy as np
import pytest

from byzres.attacks import CoordinateUniform, LazyConstant
from byzres.decentralized import (
    DecentralizedConfig, run_average_consensus, run_bridge, run_bridge_variant, run_byrdie,
    run_decentralized, run_dgd, run_lazy_attack_consensus, run_trimmed_consensus, summarize,
    trimmed_consensus_step,
)
from byzres.exceptions import InvariantViolation, TopologyError, WellPosednessError
from byzres.network import NetworkGraph, metropolis_weights, random_graph
from byzres.numeric import SeededRng
from byzres.tasks import TaskSpec

PATH3 = NetworkGraph.undirected(3, [(0, 1), (1, 2)])
QUAD5 = TaskSpec("quadratic", 5, noise_sigma=1.0, w_star=tuple(np.linspace(-1, 1, 5)))


# ---------------------------------------------------------------- consensus


def test_path_consensus_matches_matrix_power():
    W = metropolis_weights(PATH3)
    states, dis = run_average_consensus(W, [[0.0], [3.0], [6.0]], 200)
    assert np.max(np.abs(states[-1] - 3.0)) <= 1e-8
    oracle = np.linalg.matrix_power(W.matrix, 37) @ np.array([[0.0], [3.0], [6.0]])
    assert np.allclose(states[37], oracle, atol=1e-12)
    assert dis[0] == 3.0


def test_complete_graph_exact_in_one_step():
    W = np.full((4, 4), 0.25)
    states, _ = run_average_consensus(W, [[1.0], [2.0], [3.0], [6.0]], 1)
    assert np.allclose(states[1], 3.0, atol=1e-15)
    same, dis = run_average_consensus(W, np.full((4, 2), 7.0), 5)
    assert np.all(same == 7.0) and np.all(dis == 0)


def test_consensus_rejects_bad_weights():
    with pytest.raises(TopologyError):
        run_average_consensus(np.array([[1.0, 0.5], [0.0, 0.5]]), [[0.0], [1.0]], 3)


def test_lazy_node_drags_everyone():
    g = random_graph(8, 0.5, SeededRng(0), min_in_degree=2)
    W = metropolis_weights(g)
    init = SeededRng(1).normal(size=(8, 3))
    _, dist = run_lazy_attack_consensus(W, init, {5: [9.0, -9.0, 0.0]}, 2000)
    assert dist[-1] <= 1e-6


def test_lazy_at_the_average_is_harmless():
    W = metropolis_weights(PATH3)
    init = np.array([[0.0], [3.0], [6.0]])
    states, dist = run_lazy_attack_consensus(W, init, {1: [3.0]}, 300)
    assert dist[-1] <= 1e-8


def test_two_lazy_nodes_block_consensus():
    g = NetworkGraph.undirected(5, [(i, i + 1) for i in range(4)])
    W = metropolis_weights(g)
    states, _ = run_lazy_attack_consensus(W, np.zeros((5, 1)), {0: [0.0], 4: [10.0]}, 3000)
    honest = states[-1][1:4, 0]
    assert honest.max() - honest.min() > 1.0


def test_trimmed_step_examples():
    assert trimmed_consensus_step([0, 5, 10, 100], 1) == 7.5
    assert trimmed_consensus_step([1, 2, 6], 0) == 3.0
    rng = SeededRng(2)
    for _ in range(200):
        v = rng.normal(size=int(rng.integers(1, 12)))
        b = int(rng.integers(0, (v.size - 1) // 2 + 1))
        assert np.isclose(trimmed_consensus_step(v, b), np.mean(np.sort(v)[b:v.size - b]),
                          rtol=0, atol=1e-14)
    with pytest.raises(WellPosednessError):
        trimmed_consensus_step([1, 2], 1)


def test_trimmed_consensus_random_runs_stay_in_hull():
    rng = SeededRng(3)
    for run in range(100):
        M = int(rng.integers(6, 12))
        b = 1
        g = random_graph(M, 0.8, rng.child(run), min_in_degree=4 * b + 1)
        byz = int(rng.integers(0, M))
        init = rng.normal(size=(M, 2)) * 5
        attack = CoordinateUniform(-50.0, 50.0)
        out = run_trimmed_consensus(g, init, b, {byz: attack}, T=200, seed=run)
        honest0 = init[out.honest]
        assert np.all(out.final >= honest0.min(axis=0) - 1e-8)
        assert np.all(out.final <= honest0.max(axis=0) + 1e-8)
        assert np.all(np.diff(out.ranges, axis=0) <= 1e-12)


def test_trimmed_consensus_overwhelmed_node():
    # node 0 hears two liars but trims only one value from each end
    g = NetworkGraph.undirected(5, [(0, i) for i in range(1, 5)] + [(1, 2), (3, 4)])
    attacks = {1: LazyConstant([1e3]), 2: LazyConstant([1e3])}
    run = run_trimmed_consensus(g, np.arange(5.0).reshape(-1, 1), 1, attacks, T=5)
    assert run.states.shape == (6, 5, 1)
    assert run.final.max() > 4.0  # escapes the honest hull, as expected without protection
    with pytest.raises(WellPosednessError, match="node 0"):
        run_trimmed_consensus(NetworkGraph(3, [(0, 1)]), np.zeros((3, 1)), 1, {}, T=1)


def test_trimmed_consensus_flags_a_leaking_screen(monkeypatch):
    import byzres.decentralized as dec

    def leaky(V, b):  # keeps everything
        return V.mean(axis=0), V.min(axis=0), V.max(axis=0)

    monkeypatch.setattr(dec, "_trimmed_rows", leaky)
    g = NetworkGraph.complete(5)
    with pytest.raises(InvariantViolation, match="round 1"):
        run_trimmed_consensus(g, np.zeros((5, 1)), 1, {4: LazyConstant([9.0])}, T=3)


# ---------------------------------------------------------------- learning


def _cfg(graph, **kw):
    base = dict(task=QUAD5, N=20, rho0=0.2, tau=None, iterations=150, holdout_size=50)
    base.update(kw)
    return DecentralizedConfig(graph, **base)


def test_dgd_zero_gradient_is_consensus():
    zero = TaskSpec("quadratic", 1, noise_sigma=0.0, w_star=(0.0,))
    init = np.array([[0.0], [3.0], [6.0]])
    W = metropolis_weights(PATH3).matrix
    cfg = _cfg(PATH3, task=zero, algorithm="dgd", rho0=0.0, iterations=40)
    tr = run_dgd(cfg, w0=init)
    expected = np.linalg.matrix_power(W, 40) @ init
    assert np.max(np.abs(tr.meta["final_models"] - expected)) <= 1e-12


def test_dgd_single_node_is_gradient_descent():
    cfg = _cfg(NetworkGraph(1), task=TaskSpec("quadratic", 2, noise_sigma=0.0, w_star=(1, 2)),
               algorithm="dgd", rho0=0.5, iterations=60)
    assert np.allclose(run_dgd(cfg).meta["final_models"][0], [1, 2], atol=1e-12)


def test_dgd_reaches_centralized_erm():
    g = random_graph(6, 0.7, SeededRng(4), min_in_degree=2)
    cfg = _cfg(g, algorithm="dgd", rho0=0.5, tau=5.0, iterations=10000, reference="erm",
               eval_every=10000)
    tr = run_dgd(cfg)
    assert tr.final["dist"] <= 1e-3


def test_bridge_b0_equals_uniform_neighbourhood_dgd():
    g = random_graph(6, 0.6, SeededRng(5), min_in_degree=1)
    hood = g.adjacency | np.eye(6, dtype=bool)
    U = hood / hood.sum(axis=1, keepdims=True)
    a = run_bridge(_cfg(g, algorithm="bridge", b=0))
    b = run_dgd(_cfg(g, algorithm="dgd", weights=U))
    assert np.allclose(a.meta["final_models"], b.meta["final_models"], atol=1e-12)


def test_bridge_survives_attack_dgd_does_not():
    g = random_graph(12, 0.8, SeededRng(6), min_in_degree=5)
    kw = dict(b=1, byz_ids=(3,), attack=CoordinateUniform(-1.0, 0.0), iterations=200, tau=None)
    bridge = run_bridge(_cfg(g, algorithm="bridge", **kw)).final["dist"]
    dgd = run_dgd(_cfg(g, algorithm="dgd", **kw)).final["dist"]
    assert bridge < 0.5 and dgd > 2 * bridge


def test_byrdie_d1_identical_to_bridge():
    task = TaskSpec("quadratic", 1, noise_sigma=1.0, w_star=(2.0,))
    g = random_graph(7, 0.7, SeededRng(7), min_in_degree=3)
    kw = dict(task=task, b=1, byz_ids=(2,), attack=CoordinateUniform(-5.0, 5.0), iterations=80)
    a = run_bridge(_cfg(g, algorithm="bridge", **kw))
    b = run_byrdie(_cfg(g, algorithm="byrdie", **kw))
    assert a.to_csv() == b.to_csv()


def test_byrdie_faultless_quadratic():
    # unweighted neighbourhood averaging is doubly stochastic only on regular graphs;
    # elsewhere the limit is a degree-weighted minimizer
    cycle = NetworkGraph.undirected(6, [(i, (i + 1) % 6) for i in range(6)])
    cfg = _cfg(cycle, algorithm="byrdie", rho0=0.3, tau=20.0, iterations=1000, reference="erm",
               eval_every=1000)
    tr = run_byrdie(cfg)
    assert tr.final["dist"] <= 1e-2
    assert tr.final["scalars_broadcast"] == 1000 * 5


def test_well_posedness_names_node():
    g = NetworkGraph.undirected(4, [(0, 1), (1, 2), (2, 3)])
    with pytest.raises(WellPosednessError, match="node 0"):
        run_bridge(_cfg(g, b=1))
    with pytest.raises(WellPosednessError, match="bridge_bulyan at node"):
        run_bridge_variant(_cfg(NetworkGraph.complete(4), b=1), "bulyan")


def test_variants_and_dispatch():
    g = NetworkGraph.complete(9)
    kw = dict(b=1, byz_ids=(0,), attack=CoordinateUniform(-1.0, 0.0), iterations=40)
    for screening in ("median", "krum", "bulyan"):
        a = run_bridge_variant(_cfg(g, **kw), screening)
        b = run_decentralized(_cfg(g, algorithm=f"bridge_{screening}", **kw))
        assert a.to_csv() == b.to_csv()
    with pytest.raises(ValueError):
        run_bridge_variant(_cfg(g), "zeno")
    with pytest.raises(ValueError, match="consensus"):
        run_decentralized(_cfg(g, algorithm="consensus_only"))


def test_summary_and_eval_every():
    g = NetworkGraph.complete(5)
    tr = run_bridge(_cfg(g, iterations=10, eval_every=4))
    assert sorted(set(tr.column("t").tolist())) == [0, 4, 8, 10]
    s = summarize(tr)
    assert s.columns[:2] == ("t", "scalars_broadcast") and len(s) == 4
    assert s.final["scalars_broadcast"] == 50
