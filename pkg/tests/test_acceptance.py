"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` (the lines appear in the terminal
summary) or directly as ``python tests/test_acceptance.py``.
"""

import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from byzres.aggregation import (
    agg_coordinate_median, agg_coordinate_trimmed_mean, agg_geometric_median, agg_mean, bulyan,
    krum_select, multi_krum, sign_majority, zeno_screen,
)
from byzres.attacks import CoordinateUniform
from byzres.cli import run_scenario
from byzres.config import parse_config
from byzres.decentralized import (
    DecentralizedConfig, run_average_consensus, run_bridge, run_byrdie,
    run_lazy_attack_consensus, run_trimmed_consensus,
)
from byzres.distributed import DistributedConfig, random_byzantine_ids, run_distributed_sgd
from byzres.inference import DetectionConfig, EstimationConfig, simulate_detection, \
    simulate_estimation_breakdown
from byzres.network import check_partition_condition, check_source_component, \
    metropolis_weights, random_graph
from byzres.numeric import SeededRng, finite_difference_check
from byzres.tasks import Task, TaskSpec, generate_data
from graph_corpus import CORPUS

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
CHANCE = 0.1
REPORT = []  # (criterion, ok, detail); printed by conftest
_BUNDLES = {}


def report(n, ok, detail):
    REPORT.append((n, bool(ok), detail))
    assert ok, f"criterion {n}: {detail}"


def _summary_rows(bundle):
    s = bundle.summary
    return [dict(zip(s.columns, r)) for r in s.rows]


def _bundle(name):
    if name not in _BUNDLES:
        t = time.perf_counter()
        _BUNDLES[name] = (run_scenario(parse_config(str(CONFIGS / f"{name}.ini"))),
                          time.perf_counter() - t)
    return _BUNDLES[name]


# ---------------------------------------------------------------- 1


def test_criterion_01_hijack():
    target = -np.ones(10)
    cfg = DistributedConfig(
        task=TaskSpec("quadratic", 10, noise_sigma=0.0, w_star=tuple(np.ones(10))),
        M=10, b=1, byz_ids=(0,), rule="mean", attack="gradient_control",
        attack_params={"target_model": target}, iterations=1000, seed=0)
    t = time.perf_counter()
    w = run_distributed_sgd(cfg).meta["final_model"]
    elapsed = time.perf_counter() - t
    gap = float(np.linalg.norm(w - target))
    report(1, gap <= 1e-6 and elapsed < 5,
           f"|w_T - w'| = {gap:.1e} (<= 1e-6), runtime {elapsed:.2f}s (< 5s)")


# ---------------------------------------------------------------- 2, 3


def test_criterion_02_screening_ordering():
    bundle, elapsed = _bundle("fig4")
    acc = {(r["rule"], r["mode"]): r["final_acc_mean"] for r in _summary_rows(bundle)}
    mean_att = acc["mean", "attacked"]
    ratios = {rule: acc[rule, "attacked"] / acc[rule, "faultless"]
              for rule in ("median", "trimmed_mean", "krum", "bulyan", "zeno")}
    worst = min(ratios, key=ratios.get)
    ok = mean_att <= CHANCE + 0.10 and all(v >= 0.60 for v in ratios.values()) and elapsed < 120
    report(2, ok, f"mean attacked acc {mean_att:.3f} (<= 0.20), worst screened ratio "
                  f"{ratios[worst]:.3f} ({worst}, >= 0.60), runtime {elapsed:.0f}s (< 120s)")


def test_criterion_03_faultless_cost():
    bundle, _ = _bundle("fig4")
    acc = {r["rule"]: r["final_acc_mean"] for r in _summary_rows(bundle)
           if r["mode"] == "faultless"}
    gaps = {rule: abs(a - acc["mean"]) for rule, a in acc.items() if rule != "mean"}
    worst = max(gaps, key=gaps.get)
    report(3, gaps[worst] <= 0.15,
           f"largest faultless gap to vanilla {gaps[worst]:.3f} ({worst}, <= 0.15)")


# ---------------------------------------------------------------- 4


def _trimmed_final_dist(N, seed):
    cfg = DistributedConfig(
        task=TaskSpec("quadratic", 10, noise_sigma=1.0, w_star=tuple(np.linspace(-1, 1, 10))),
        M=20, b=4, byz_ids=random_byzantine_ids(20, 4, seed), rule="trimmed_mean",
        attack="alternating_uniform", N=N, rho0=0.5, iterations=100, seed=seed)
    return run_distributed_sgd(cfg)


def test_criterion_04_rate_slope():
    Ns = np.array([100, 400, 1600])
    dists = [np.mean([_trimmed_final_dist(N, s).final["dist"] for s in range(10)]) for N in Ns]
    slope = float(np.polyfit(np.log(Ns), np.log(dists), 1)[0])
    report(4, -0.75 <= slope <= -0.25,
           f"log-log slope {slope:.3f} in [-0.75, -0.25] (mean dists "
           + ", ".join(f"{d:.4f}" for d in dists) + ")")


# ---------------------------------------------------------------- 5


def _oracle_mismatches(X, rng):
    M, d = X.shape
    bad = []

    def check(name, ok):
        if not ok:
            bad.append(name)

    check("mean", agg_mean(X).aggregate.tolist() == oracles.mean(X))
    check("median", agg_coordinate_median(X).aggregate.tolist() == oracles.median(X))
    check("sign_majority", sign_majority(X).aggregate.tolist() == oracles.sign_majority(X))
    for b in range((M - 1) // 2 + 1):
        check("trimmed_mean",
              agg_coordinate_trimmed_mean(X, b).aggregate.tolist() == oracles.trimmed_mean(X, b))
    for b in range(max((M - 3) // 2 + 1, 0)):
        out = krum_select(X, b)
        vec, idx = oracles.krum(X, b)
        check("krum", out.aggregate.tolist() == vec and out.selected_index == idx)
        for m in range(1, M - 2 * b - 1):
            agg, win = oracles.multi_krum(X, b, m)
            out = multi_krum(X, b, m)
            check("multi_krum", out.aggregate.tolist() == agg and out.survivors == win)
    for b in range(max((M - 3) // 4 + 1, 0)):
        agg, surv = oracles.bulyan(X, b)
        out = bulyan(X, b)
        check("bulyan", out.aggregate.tolist() == agg and out.survivors == surv)
    oracle = rng.normal(size=d)
    for b in range(M):
        agg, keep = oracles.zeno(X, oracle, b)
        out = zeno_screen(X, oracle, b)
        check("zeno", out.aggregate.tolist() == agg and out.survivors == keep)
    # the geometric median is irrational in general: accept it by optimality
    gamma = 1e-6
    y = agg_geometric_median(X, gamma=gamma).aggregate
    f = oracles.geomed_objective(X, y)
    if d == 2:
        f_ref, _ = oracles.geomed_grid_min(X, n=60)
    else:
        f_ref = min(oracles.geomed_objective(X, x) for x in X)
        f_ref = min(f_ref, oracles.geomed_objective(X, X.mean(axis=0)))
    check("geometric_median", f <= (1 + gamma) * f_ref + 1e-12)
    return bad


def test_criterion_05_aggregation_oracles():
    rng = SeededRng(2024)
    mismatches = []
    n = 1000
    for case in range(n):
        M, d = int(rng.integers(1, 8)), int(rng.integers(1, 4))
        if case % 2:
            X = rng.normal(size=(M, d))
        else:  # integer grids force ties
            X = rng.integers(-3, 4, size=(M, d)).astype(float)
        mismatches += [(case, r) for r in _oracle_mismatches(X, rng)]
    report(5, not mismatches,
           f"{len(mismatches)} mismatches over {n} instances (M <= 7, d <= 3, all rules)")


# ---------------------------------------------------------------- 6


def test_criterion_06_consensus_suite():
    rng = SeededRng(6)
    worst_a = 0.0
    for k in range(20):
        g = random_graph(int(rng.integers(5, 16)), 0.3, rng.child(k), min_in_degree=1)
        if not g.is_connected():
            continue
        _, dis = run_average_consensus(metropolis_weights(g), rng.normal(size=(g.M, 3)), 500)
        worst_a = max(worst_a, dis[-1])

    worst_b = 0.0
    for k in range(5):
        g = random_graph(15, 0.4, rng.child(100 + k), min_in_degree=2)
        target = rng.normal(size=3) * 5
        _, dist = run_lazy_attack_consensus(metropolis_weights(g), rng.normal(size=(15, 3)),
                                            {k: target}, 2000)
        worst_b = max(worst_b, dist[-1])

    escapes = 0
    runs = 100
    for k in range(runs):
        M, b = int(rng.integers(6, 12)), 1
        g = random_graph(M, 0.8, rng.child(200 + k), min_in_degree=4 * b + 1)
        init = rng.normal(size=(M, 2)) * 5
        byz = int(rng.integers(0, M))
        # check=True asserts safety and range contraction every round
        out = run_trimmed_consensus(g, init, b, {byz: CoordinateUniform(-50.0, 50.0)},
                                    T=200, seed=k)
        lo, hi = init[out.honest].min(axis=0), init[out.honest].max(axis=0)
        escapes += int(np.any(out.final < lo - 1e-8) or np.any(out.final > hi + 1e-8))
    ok = worst_a <= 1e-8 and worst_b <= 1e-6 and escapes == 0
    report(6, ok, f"(a) disagreement {worst_a:.1e} (<= 1e-8); (b) lazy gap {worst_b:.1e} "
                  f"(<= 1e-6); (c) {runs} trimmed runs, invariants held, {escapes} hull escapes")


# ---------------------------------------------------------------- 7


def test_criterion_07_detection_blinding():
    t = time.perf_counter()
    base = DetectionConfig(M=25, separation=2.0, trials=10_000)
    alphas = [0.0, 0.1, 0.2, 0.3, 0.4, 0.48, 0.5]
    res = [simulate_detection(DetectionConfig(**{**base.__dict__, "alpha": a}), seed=k)
           for k, a in enumerate(alphas)]
    err = {a: r for a, r in zip(alphas, res)}
    monotone = all(b.error >= a.error - 3 * np.hypot(a.stderr, b.stderr)
                   for a, b in zip(res, res[1:]))
    q4 = simulate_detection(DetectionConfig(Q=4, M=25, alpha=0.75, trials=10_000), seed=99)
    elapsed = time.perf_counter() - t
    ok = (err[0.0].error <= 0.01 and abs(err[0.5].error - 0.5) <= 0.03 and monotone
          and abs(q4.error - 0.75) <= 0.10 and elapsed < 30)
    report(7, ok, f"alpha=0 error {err[0.0].error:.4f} (<= 0.01); alpha=0.5 error "
                  f"{err[0.5].error:.4f} (0.5 +- 0.03; alpha=0.48 gives {err[0.48].error:.4f}, "
                  f"informational); monotone within 3 s.e. {monotone}; Q=4 alpha=0.75 error "
                  f"{q4.error:.4f} (0.75 +- 0.10); runtime {elapsed:.1f}s (< 30s)")


# ---------------------------------------------------------------- 8


def test_criterion_08_estimation_breakdown():
    cfg = EstimationConfig(M=8, byz_count=2, outlier_magnitude=50.0, noise_sigma=1.0)
    ratios = [r.attacked_mse / r.clean_mse
              for r in (simulate_estimation_breakdown(cfg, s) for s in range(100))]
    hits = sum(x >= 10 for x in ratios)
    report(8, hits == 100, f"{hits}/100 seeds with attacked MSE >= 10x clean "
                           f"(smallest ratio {min(ratios):.1f})")


# ---------------------------------------------------------------- 9


def _byrdie_vs_bridge():
    cfg = parse_config(str(CONFIGS / "fig5.ini"))
    d = cfg["decentralized"]
    g = random_graph(d["M"], d["p"], SeededRng(cfg.seed).child(9), min_in_degree=d["min_in_degree"])
    byz = random_byzantine_ids(d["M"], d["byz_count"], cfg.seed)
    task = TaskSpec("quadratic", 5, noise_sigma=1.0, w_star=tuple(np.linspace(-1, 1, 5)))
    kw = dict(task=task, b=d["b"], byz_ids=byz, attack=CoordinateUniform(-1.0, 0.0), N=50,
              rho0=0.2, tau=None, iterations=200, eval_every=50, holdout_size=50)
    a = run_bridge(DecentralizedConfig(g, algorithm="bridge", **kw))
    b = run_byrdie(DecentralizedConfig(g, algorithm="byrdie", **kw))
    # rows are recorded at equal rounds, so equal scalars-broadcast budgets
    sa, sb = a.column("scalars_broadcast"), b.column("scalars_broadcast")
    assert np.array_equal(sa, sb)
    return float(np.max(np.abs(a.column("dist") - b.column("dist"))))


def test_criterion_09_decentralized_suite():
    bundle, elapsed = _bundle("fig5")
    t = time.perf_counter()
    gap = _byrdie_vs_bridge()
    elapsed += time.perf_counter() - t
    acc = {(r["algorithm"], r["mode"]): r["final_acc_mean"] for r in _summary_rows(bundle)}
    dgd = acc["dgd", "attacked"]
    ratios = {a: acc[a, "attacked"] / acc[a, "faultless"]
              for a in ("bridge", "bridge_median", "bridge_bulyan")}
    worst = min(ratios, key=ratios.get)
    ok = dgd <= CHANCE + 0.10 and all(v >= 0.85 for v in ratios.values()) and gap <= 0.05 \
        and elapsed < 300
    report(9, ok, f"DGD attacked acc {dgd:.3f} (<= 0.20); worst BRIDGE-family ratio "
                  f"{ratios[worst]:.3f} ({worst}, >= 0.85); ByRDiE vs BRIDGE distance gap "
                  f"{gap:.1e} (<= 0.05); runtime {elapsed:.0f}s (< 300s)")


# ---------------------------------------------------------------- 10


def test_criterion_10_topology_corpus():
    agree = 0
    for name, (g, b, src, part) in CORPUS.items():
        edges = list(g.edges)
        o_src = "certified" if oracles.source_component_holds(g.M, edges, b) else "falsified"
        o_part = "pass" if oracles.partition_condition_holds(g.M, edges, b) else "fail"
        s = check_source_component(g, b).status
        p = check_partition_condition(g, b).status
        agree += int(s == o_src == src and p == o_part == part)
    report(10, agree == len(CORPUS) == 12, f"{agree}/{len(CORPUS)} graphs agree with oracles")


# ---------------------------------------------------------------- 11


def test_criterion_11_gradient_checks():
    specs = [
        TaskSpec("quadratic", 6, w_star=tuple(np.linspace(-1, 1, 6))),
        TaskSpec("linear_regression", 5, w_star=(1.0, -2.0, 0.5, 0.0, 3.0)),
        TaskSpec("estimation_fig3", 2, w_star=(1.0, 0.5)),
        TaskSpec("softmax_classification", 6, class_count=4),
    ]
    worst = {}
    for k, spec in enumerate(specs):
        task = Task(spec, generate_data(spec, 4, 25, SeededRng(k)))
        rng = SeededRng(100 + k)
        worst[spec.kind] = max(finite_difference_check(task.loss, task.grad,
                                                       rng.normal(size=spec.model_dim))
                               for _ in range(20))
    top = max(worst, key=worst.get)
    report(11, worst[top] <= 1e-5, f"max discrepancy {worst[top]:.1e} ({top}) over "
                                   f"{len(specs)} kinds x 20 points (<= 1e-5)")


# ---------------------------------------------------------------- 12


def test_criterion_12_determinism():
    cheap = ["hijack", "fig3", "table1", "consensus_lazy", "fig5"]
    differing = []
    for name in cheap:
        first = _bundle(name)[0].files
        again = run_scenario(parse_config(str(CONFIGS / f"{name}.ini"))).files
        differing += [f"{name}/{f}" for f in first if f.endswith(".csv") and first[f] != again[f]]
    small = {"experiment.repeat_count": "2", "distributed.iterations": "20",
             "distributed.holdout_size": "200"}
    runs = [run_scenario(parse_config(str(CONFIGS / "fig4.ini"), overrides=small)).files
            for _ in range(2)]
    differing += [f"fig4/{f}" for f in runs[0] if runs[0][f] != runs[1][f]]
    direct = [_trimmed_final_dist(100, 3).to_csv() for _ in range(2)]
    if direct[0] != direct[1]:
        differing.append("criterion 4 trace")
    report(12, not differing, f"{len(cheap) + 2} reruns compared byte for byte, "
                              f"{len(differing)} differing CSVs")


if __name__ == "__main__":
    import sys
    raise SystemExit(pytest.main([__file__, *sys.argv[1:]]))
