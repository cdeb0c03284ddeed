"""Command-line harness: run scenarios from config files and write CSV results.

Subcommands::

    byzres run CONFIG [--seed S] [--output DIR]
    byzres check-topology GRAPH --b B [--exhaustive | --samples N] [--seed S]
    byzres sweep CONFIG --param section.key --values v1,v2,...
    byzres verify

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 topology
falsified. ``BYZRES_SEED`` sets the seed of configs that do not give one.
"""

import argparse
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .attacks import make_attack
from .config import SEED_ENV, ExperimentConfig, parse_config, serialize_config
from .exceptions import ByzresError, ConfigError
from .numeric import SeededRng, derive_seed
from .trace import MetricsTrace

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_FALSIFIED = 0, 1, 2, 3


@dataclass
class ResultBundle:
    """In-memory results of one scenario run plus the CSV texts written for it.

    ``trials`` holds one long-format :class:`MetricsTrace` per trial and
    ``files`` maps output file names to their exact contents.
    """

    scenario: str
    config: ExperimentConfig
    trials: list = field(default_factory=list)
    summary: MetricsTrace = None
    files: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def provenance(self, seed=None):
        return (
            f"byzres {__version__}",
            f"scenario {self.scenario}",
            f"config_sha256 {self.config.config_hash}",
            f"seed {self.config.seed if seed is None else seed}",
        )

    def write(self, directory=None):
        directory = directory or self.config.output_path
        os.makedirs(directory, exist_ok=True)
        for name, text in self.files.items():
            with open(os.path.join(directory, name), "w", newline="") as fh:
                fh.write(text)
        return directory


def trial_seed(seed, trial):
    return derive_seed(seed, trial)


def _attack(cfg, dim=None):
    a = cfg["attack"]
    name = a["name"]
    if name == "none":
        return None
    if name == "gradient_control":
        return make_attack(name, target_model=a["target_model"] or np.zeros(dim), gain=a["gain"])
    if name == "alternating_uniform":
        return make_attack(name, lo_range=a["lo_range"], hi_range=a["hi_range"])
    if name == "lazy_constant":
        return make_attack(name, value=a["value"] or np.ones(dim))
    if name == "coordinate_uniform":
        return make_attack(name, lo=a["lo"], hi=a["hi"])
    return make_attack(name)


def _task_spec(cfg):
    from .tasks import TaskSpec
    t = dict(cfg["task"])
    t["w_star"] = t["w_star"] or None
    return TaskSpec(**t)


def _summarize_finals(rows, key_cols, value_cols):
    """Mean and (population) std over trials of final values per key group."""
    cols = list(key_cols) + ["trials"]
    for c in value_cols:
        cols += [f"{c}_mean", f"{c}_std"]
    out = MetricsTrace(cols)
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[:len(key_cols)]), []).append(r[len(key_cols):])
    for key, vals in groups.items():
        arr = np.array(vals, dtype=float)
        stats = []
        for k in range(len(value_cols)):
            stats += [float(np.mean(arr[:, k])), float(np.std(arr[:, k]))]
        out.append(*key, len(vals), *stats)
    return out


def _run_distributed(cfg, seed):
    from .distributed import DistributedConfig, random_byzantine_ids, run_distributed_sgd, run_signsgd
    d = cfg["distributed"]
    spec = _task_spec(cfg)
    attack = _attack(cfg, spec.model_dim)
    byz = random_byzantine_ids(d["M"], d["byz_count"], seed) if d["byz_count"] else ()
    cols = ("rule", "mode", "t", "risk", "dist", "acc", "agg_norm", "survivors")
    trace = MetricsTrace(cols)
    finals = []
    for rule in d["rules"]:
        for mode in d["modes"]:
            ids = byz if mode == "attacked" else ()
            c = DistributedConfig(
                task=spec, M=d["M"], b=d["b"], byz_ids=ids,
                rule="sign_majority" if d["engine"] == "signsgd" else rule,
                rule_params={"gamma": d["gamma"], "m": d["m"]},
                attack=attack if ids else None, N=d["N"], batch_size=d["batch_size"],
                rho0=d["rho0"], tau=d["tau"], iterations=d["iterations"], seed=seed,
                holdout_size=d["holdout_size"], zeno_batch=d["zeno_batch"],
            )
            tr = (run_signsgd if d["engine"] == "signsgd" else run_distributed_sgd)(c)
            for row in tr.rows:
                trace.append(rule, mode, *row)
            f = tr.final
            finals.append((rule, mode, f["acc"], f["dist"], f["risk"]))
    return trace, finals, ("rule", "mode"), ("final_acc", "final_dist", "final_risk")


def _graph(sec, seed):
    from .network import random_graph, read_graph
    if sec["graph_path"]:
        return read_graph(sec["graph_path"])
    return random_graph(sec["M"], sec["p"], SeededRng(seed).child(9),
                        min_in_degree=sec["min_in_degree"])


def _run_decentralized(cfg, seed):
    from .decentralized import DecentralizedConfig, run_decentralized
    d = cfg["decentralized"]
    spec = _task_spec(cfg)
    g = _graph(d, seed)
    attack = _attack(cfg, spec.model_dim)
    rng = SeededRng(seed).child(6)
    byz = tuple(sorted(int(i) for i in rng.choice(g.M, size=d["byz_count"], replace=False)))
    cols = ("algorithm", "mode", "t", "node", "acc", "dist", "scalars_broadcast")
    trace = MetricsTrace(cols)
    finals = []
    for alg in d["algorithms"]:
        for mode in d["modes"]:
            ids = byz if mode == "attacked" else ()
            c = DecentralizedConfig(
                graph=g, task=spec, algorithm=alg, b=d["b"], byz_ids=ids,
                attack=attack if ids else None, N=d["N"], rho0=d["rho0"], tau=d["tau"],
                iterations=d["iterations"], inner_iters=d["inner_iters"], seed=seed,
                holdout_size=d["holdout_size"], eval_every=d["eval_every"],
            )
            tr = run_decentralized(c)
            for row in tr.rows:
                trace.append(alg, mode, *row)
            last = tr.where(t=tr.rows[-1][0])
            finals.append((alg, mode, float(np.mean(last.column("acc"))),
                           float(np.mean(last.column("dist")))))
    return trace, finals, ("algorithm", "mode"), ("final_acc", "final_dist")


def _run_consensus(cfg, seed):
    from .decentralized import run_average_consensus, run_lazy_attack_consensus, run_trimmed_consensus
    from .network import metropolis_weights
    d = cfg["consensus"]
    g = _graph(d, seed)
    rng = SeededRng(seed)
    init = rng.child(1).normal(size=(g.M, d["d"]))
    byz = tuple(sorted(int(i) for i in rng.child(6).choice(g.M, size=d["byz_count"], replace=False)))
    T = d["iterations"]
    if d["mode"] == "average":
        _, curve = run_average_consensus(metropolis_weights(g), init, T)
        name = "disagreement"
    elif d["mode"] == "lazy":
        value = cfg["attack"]["value"] or np.ones(d["d"])
        _, curve = run_lazy_attack_consensus(metropolis_weights(g), init,
                                             {j: value for j in byz}, T)
        name = "dist_to_target"
    else:
        attacks = {j: _attack(cfg, d["d"]) for j in byz}
        run = run_trimmed_consensus(g, init, d["b"], attacks, T, seed=seed)
        curve = run.ranges.max(axis=1)
        name = "honest_range"
    trace = MetricsTrace(("mode", "t", name))
    for t, v in enumerate(curve):
        trace.append(d["mode"], t, float(v))
    return trace, [(d["mode"], float(curve[-1]))], ("mode",), (f"final_{name}",)


def _run_detection(cfg, seed):
    from .inference import DetectionConfig, sweep_alpha
    d = dict(cfg["detection"])
    alphas = d.pop("alphas")
    table = sweep_alpha(DetectionConfig(**d), alphas, seed)
    finals = [(r[0], r[1]) for r in table.rows]
    return table, finals, ("alpha",), ("error",)


def _run_estimation(cfg, seed):
    from .inference import EstimationConfig, simulate_estimation_breakdown
    d = dict(cfg["estimation"])
    ec = EstimationConfig(**d)
    r = simulate_estimation_breakdown(ec, SeededRng(seed))
    x = np.linspace(-1.0, 1.0, ec.M)
    H = np.column_stack([x, np.ones(ec.M)])
    model_y = H @ np.array(ec.w_star)
    trace = MetricsTrace(("x", "byzantine", "model", "fit_clean", "fit_attacked"),
                         meta={"clean_mse": r.clean_mse, "attacked_mse": r.attacked_mse})
    for j in range(ec.M):
        trace.append(float(x[j]), int(j in r.byz_ids), float(model_y[j]),
                     float(H[j] @ r.w_hat_clean), float(H[j] @ r.w_hat_attacked))
    return trace, [("ls", r.clean_mse, r.attacked_mse)], ("estimator",), ("clean_mse", "attacked_mse")


_RUNNERS = {
    "distributed": _run_distributed,
    "decentralized": _run_decentralized,
    "consensus": _run_consensus,
    "detection": _run_detection,
    "estimation": _run_estimation,
}


def check_topology(graph_path, b, mode="exhaustive", samples=1000, seed=0):
    """Verdict lines for both topology conditions and the overall status."""
    from .network import check_partition_condition, check_source_component, read_graph
    g = read_graph(graph_path)
    rng = SeededRng(seed) if mode == "monte_carlo" else None
    src = check_source_component(g, b, mode=mode, samples=samples, rng=rng)
    lines = [f"source_component b={b} {mode}: {src.status}"]
    if src.witness:
        lines.append(f"  witness: {src.witness}")
    if g.M <= 24:
        part = check_partition_condition(g, b)
        lines.append(f"partition_condition b={b}: {part.status}")
        if part.witness:
            lines.append(f"  witness: {part.witness}")
    return src, lines


def run_scenario(cfg, write=False):
    """Run ``cfg.repeat_count`` trials with seeds derived from ``cfg.seed``."""
    if cfg.scenario == "topology":
        t = cfg["topology"]
        src, lines = check_topology(t["graph_path"], t["b"], t["mode"], t["samples"], cfg.seed)
        bundle = ResultBundle("topology", cfg, extra={"verdict": src, "lines": lines})
        trace = MetricsTrace(("condition", "status"))
        for ln in lines:
            if not ln.startswith(" "):
                head, status = ln.rsplit(": ", 1)
                trace.append(head.split()[0], status)
        bundle.summary = trace
        bundle.files["summary.csv"] = trace.to_csv(comments=bundle.provenance())
        if write:
            bundle.write()
        return bundle
    runner = _RUNNERS[cfg.scenario]
    bundle = ResultBundle(cfg.scenario, cfg)
    finals = []
    key_cols = value_cols = None
    for k in range(cfg.repeat_count):
        s = trial_seed(cfg.seed, k)
        trace, fin, key_cols, value_cols = runner(cfg, s)
        bundle.trials.append(trace)
        finals.extend(fin)
        bundle.files[f"trial_{k:03d}.csv"] = trace.to_csv(
            comments=bundle.provenance(s) + (f"trial {k}",))
    bundle.summary = _summarize_finals(finals, key_cols, value_cols)
    bundle.files["summary.csv"] = bundle.summary.to_csv(comments=bundle.provenance())
    bundle.files["config.ini"] = serialize_config(cfg)
    if write:
        bundle.write()
    return bundle


def emit_figure_csv(bundle, style, path=None):
    """Reshape a bundle onto a figure's axes and return (and optionally write) the CSV."""
    if style == "fig4":
        if bundle.scenario != "distributed":
            raise ValueError("fig4 needs a distributed bundle")
        out = MetricsTrace(("t", "acc_mean", "acc_std", "rule", "mode"))
        groups = {}
        for tr in bundle.trials:
            for rule, mode, t, _, _, acc, *_ in tr.rows:
                groups.setdefault((rule, mode), {}).setdefault(t, []).append(acc)
        for (rule, mode), by_t in groups.items():
            for t in sorted(by_t):
                a = np.array(by_t[t], dtype=float)
                out.append(t, float(np.mean(a)), float(np.std(a)), rule, mode)
    elif style == "fig5":
        if bundle.scenario != "decentralized":
            raise ValueError("fig5 needs a decentralized bundle")
        out = MetricsTrace(("scalars", "acc_mean", "acc_std", "algorithm"))
        groups = {}
        modes = {r[1] for tr in bundle.trials for r in tr.rows}
        for tr in bundle.trials:
            for alg, mode, _, _, acc, _, sc in tr.rows:
                label = alg if len(modes) == 1 or mode == "attacked" else f"{alg}/{mode}"
                groups.setdefault(label, {}).setdefault(sc, []).append(acc)
        for label, by_s in groups.items():
            for sc in sorted(by_s):
                a = np.array(by_s[sc], dtype=float)
                out.append(sc, float(np.mean(a)), float(np.std(a)), label)
    elif style == "table1":
        if bundle.scenario != "detection":
            raise ValueError("table1 needs a detection bundle")
        out = MetricsTrace(("alpha", "error", "stderr", "trials"))
        alphas = bundle.trials[0].column("alpha")
        errs = np.array([tr.column("error") for tr in bundle.trials])
        n = int(bundle.trials[0].rows[0][3]) * len(bundle.trials) if alphas.size else 0
        for k, a in enumerate(alphas):
            e = float(np.mean(errs[:, k]))
            out.append(float(a), e, float(np.sqrt(e * (1 - e) / n)), n)
    elif style == "fig3":
        if bundle.scenario != "estimation":
            raise ValueError("fig3 needs an estimation bundle")
        out = bundle.trials[0]
    else:
        raise ValueError(f"unknown style {style!r}; choose fig3, fig4, fig5 or table1")
    text = out.to_csv(path, comments=bundle.provenance() + (f"style {style}",))
    return text


def run_sweep(source, param, values, seed=None):
    """One run per value of ``param``; returns (bundles, combined summary)."""
    bundles = []
    combined = None
    for v in values:
        cfg = parse_config(source, overrides={param: v})
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        cfg = replace(cfg, output_path=os.path.join(cfg.output_path, f"{param}={v}"))
        b = run_scenario(cfg)
        bundles.append(b)
        if combined is None:
            combined = MetricsTrace((param,) + b.summary.columns)
        for r in b.summary.rows:
            combined.append(v, *r)
    return bundles, combined


def run_verify(seed=0):
    """Quick invariant suite; returns a list of ``(name, ok, detail)``."""
    from .aggregation import RULES, make_rule
    from .decentralized import run_average_consensus, run_trimmed_consensus
    from .network import metropolis_weights, random_graph, NetworkGraph, check_source_component
    from .numeric import finite_difference_check
    from .tasks import TaskSpec, Task, generate_data
    from .attacks import CoordinateUniform

    rng = SeededRng(seed)
    results = []

    worst = 0.0
    specs = [TaskSpec("quadratic", 4, w_star=(1, 2, 3, 4)),
             TaskSpec("linear_regression", 4, w_star=(1, -1, 0.5, 0)),
             TaskSpec("estimation_fig3", 2, w_star=(1, 0.5)),
             TaskSpec("softmax_classification", 5, class_count=4)]
    for k, spec in enumerate(specs):
        task = Task(spec, generate_data(spec, 3, 5, rng.child(1, k)))
        for _ in range(5):
            w = rng.normal(size=spec.model_dim)
            worst = max(worst, finite_difference_check(task.loss, task.grad, w))
    results.append(("gradient finite differences", worst <= 1e-5, f"max rel err {worst:.2e}"))

    bad = []
    r = rng.child(2)
    for name in sorted(set(RULES) - {"none", "zeno"}):
        for _ in range(20):
            rule = make_rule(name, b=1)
            M = max(rule.min_inputs(), 3)
            X = r.normal(size=(M, 3))
            a = rule.aggregate(X).aggregate
            b_ = rule.aggregate(X[r.permutation(M)]).aggregate
            if not np.array_equal(a, b_):
                bad.append(name)
                break
    results.append(("aggregation permutation invariance", not bad, ", ".join(bad) or "all rules"))

    g = random_graph(12, 0.5, rng.child(3), min_in_degree=5)
    W = metropolis_weights(g)
    try:
        W.validate(g)
        ok = True
    except ByzresError:
        ok = False
    results.append(("metropolis weights doubly stochastic", ok, ""))
    _, dis = run_average_consensus(W, rng.child(4).normal(size=(12, 2)), 500)
    results.append(("average consensus", dis[-1] <= 1e-8, f"disagreement {dis[-1]:.1e}"))

    try:
        run = run_trimmed_consensus(g, rng.child(5).normal(size=(12, 2)), 1,
                                    {0: CoordinateUniform(-5.0, 5.0)}, 100, seed=seed)
        ok, detail = True, f"final range {run.ranges[-1].max():.1e}"
    except ByzresError as exc:
        ok, detail = False, str(exc)
    results.append(("trimmed consensus safety and contraction", ok, detail))

    v = check_source_component(NetworkGraph.complete(4), 1)
    results.append(("complete graph certified", v.status == "certified", v.status))
    return results


def _build_parser():
    p = argparse.ArgumentParser(prog="byzres", description="Byzantine-resilient learning simulators")
    p.add_argument("--version", action="version", version=f"byzres {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the scenario in a config file")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--output", default=None, help="output directory (overrides output_path)")
    r.add_argument("--figure", choices=("fig3", "fig4", "fig5", "table1"), default=None,
                   help="also write figure-style CSV as figure.csv")

    t = sub.add_parser("check-topology", help="certify the topology conditions for b faults")
    t.add_argument("graph")
    t.add_argument("--b", type=int, required=True)
    grp = t.add_mutually_exclusive_group()
    grp.add_argument("--exhaustive", action="store_true")
    grp.add_argument("--samples", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)

    s = sub.add_parser("sweep", help="run a config once per value of one key")
    s.add_argument("config")
    s.add_argument("--param", required=True, help="section.key")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--seed", type=int, default=None)

    sub.add_parser("verify", help="run the quick invariant suite")
    return p


def _seed_arg(value):
    if value is not None:
        return value
    raw = os.environ.get(SEED_ENV)
    return int(raw) if raw is not None else 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    out = sys.stdout
    try:
        if args.command == "run":
            cfg = parse_config(args.config)
            if args.seed is not None:
                cfg = replace(cfg, seed=args.seed)
            if args.output:
                cfg = replace(cfg, output_path=args.output)
            bundle = run_scenario(cfg)
            if args.figure:
                bundle.files["figure.csv"] = emit_figure_csv(bundle, args.figure)
            directory = bundle.write()
            if cfg.scenario == "topology":
                print("\n".join(bundle.extra["lines"]), file=out)
                if bundle.extra["verdict"].status == "falsified":
                    return EXIT_FALSIFIED
            print(f"wrote {len(bundle.files)} files to {directory}", file=out)
            return EXIT_OK
        if args.command == "check-topology":
            mode = "monte_carlo" if args.samples is not None else "exhaustive"
            src, lines = check_topology(args.graph, args.b, mode, args.samples or 1000,
                                        _seed_arg(args.seed))
            print("\n".join(lines), file=out)
            return EXIT_FALSIFIED if src.status == "falsified" else EXIT_OK
        if args.command == "sweep":
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            if not values:
                raise ConfigError(["--values: empty list"])
            bundles, combined = run_sweep(args.config, args.param, values, args.seed)
            for b in bundles:
                b.write()
            root = parse_config(args.config).output_path
            os.makedirs(root, exist_ok=True)
            combined.to_csv(os.path.join(root, "sweep_summary.csv"),
                            comments=(f"byzres {__version__}", f"sweep {args.param}"))
            print(f"wrote {len(bundles)} runs under {root}", file=out)
            return EXIT_OK
        if args.command == "verify":
            results = run_verify(_seed_arg(None))
            for name, ok, detail in results:
                print(f"{'PASS' if ok else 'FAIL'} {name}" + (f" ({detail})" if detail else ""),
                      file=out)
            return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_RUNTIME
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ByzresError, ValueError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
