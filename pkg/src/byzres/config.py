"""Experiment configuration files: INI sections validated against a fixed schema.

Every known key has a type and a default. ``parse_config`` collects all
violations (unknown sections or keys, bad values, well-posedness) before
raising, and names each by its ``section.key`` path. ``serialize_config``
writes every key of the active sections in schema order, so the output is a
canonical form and ``serialize(parse(serialize(parse(x))))`` equals
``serialize(parse(x))``.
"""

import configparser
import hashlib
import os
from dataclasses import dataclass, field, replace

from .aggregation import RULES, make_rule
from .attacks import ATTACKS
from .exceptions import ConfigError, WellPosednessError
from .tasks import KINDS

SCENARIOS = ("distributed", "decentralized", "consensus", "detection", "estimation", "topology")
SEED_ENV = "BYZRES_SEED"


def _floatlist(s):
    return tuple(float(v) for v in s.split(",") if v.strip())


def _intlist(s):
    return tuple(int(v) for v in s.split(",") if v.strip())


def _strlist(s):
    return tuple(v.strip() for v in s.split(",") if v.strip())


def _optfloat(s):
    return None if s.strip().lower() in ("", "none") else float(s)


def _optint(s):
    return None if s.strip().lower() in ("", "none") else int(s)


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_TYPES = {
    "int": int, "float": float, "str": str.strip, "bool": _bool,
    "floats": _floatlist, "ints": _intlist, "strs": _strlist,
    "optfloat": _optfloat, "optint": _optint,
}

# section -> key -> (type, default)
SCHEMA = {
    "experiment": {
        "scenario": ("str", None),
        "seed": ("optint", None),
        "repeat_count": ("int", 1),
        "output_path": ("str", "results"),
    },
    "task": {
        "kind": ("str", "quadratic"),
        "d": ("int", 10),
        "noise_sigma": ("float", 1.0),
        "lam": ("float", 0.01),
        "w_star": ("floats", ()),
        "class_count": ("int", 10),
        "separation": ("float", 2.0),
        "scale": ("float", 1.0),
        "offset": ("float", 0.0),
        "means_seed": ("int", 0),
    },
    "attack": {
        "name": ("str", "none"),
        "target_model": ("floats", ()),
        "gain": ("float", 1.0),
        "value": ("floats", ()),
        "lo": ("float", -1.0),
        "hi": ("float", 0.0),
        "lo_range": ("floats", (0.0, 1e-5)),
        "hi_range": ("floats", (0.0, 20.0)),
    },
    "distributed": {
        "M": ("int", 20),
        "b": ("int", 0),
        "byz_count": ("int", 0),
        "rules": ("strs", ("mean",)),
        "modes": ("strs", ("attacked",)),
        "engine": ("str", "sgd"),
        "gamma": ("float", 1e-6),
        "m": ("int", 1),
        "N": ("int", 100),
        "batch_size": ("optint", None),
        "rho0": ("float", 0.1),
        "tau": ("optfloat", None),
        "iterations": ("int", 100),
        "holdout_size": ("int", 1000),
        "zeno_batch": ("int", 32),
    },
    "decentralized": {
        "M": ("int", 20),
        "p": ("float", 0.5),
        "min_in_degree": ("int", 0),
        "graph_path": ("str", ""),
        "b": ("int", 0),
        "byz_count": ("int", 0),
        "algorithms": ("strs", ("bridge",)),
        "modes": ("strs", ("attacked",)),
        "N": ("int", 100),
        "rho0": ("float", 0.1),
        "tau": ("optfloat", 100.0),
        "iterations": ("int", 100),
        "inner_iters": ("int", 1),
        "eval_every": ("int", 1),
        "holdout_size": ("int", 1000),
    },
    "consensus": {
        "mode": ("str", "average"),
        "M": ("int", 20),
        "p": ("float", 0.5),
        "min_in_degree": ("int", 0),
        "graph_path": ("str", ""),
        "d": ("int", 1),
        "b": ("int", 0),
        "byz_count": ("int", 0),
        "iterations": ("int", 500),
    },
    "detection": {
        "Q": ("int", 2),
        "M": ("int", 25),
        "alphas": ("floats", (0.0, 0.5)),
        "samples_per_node": ("int", 1),
        "separation": ("float", 2.0),
        "trials": ("int", 10_000),
        "framework": ("str", "bayesian_majority"),
        "rounding": ("str", "randomized"),
        "pfa": ("float", 0.1),
    },
    "estimation": {
        "M": ("int", 8),
        "byz_count": ("int", 2),
        "outlier_magnitude": ("float", 50.0),
        "noise_sigma": ("float", 1.0),
        "w_star": ("floats", (1.0, 0.5)),
    },
    "topology": {
        "graph_path": ("str", ""),
        "b": ("int", 1),
        "mode": ("str", "exhaustive"),
        "samples": ("int", 1000),
    },
}

# sections each scenario reads besides [experiment]
SCENARIO_SECTIONS = {
    "distributed": ("task", "attack", "distributed"),
    "decentralized": ("task", "attack", "decentralized"),
    "consensus": ("attack", "consensus"),
    "detection": ("detection",),
    "estimation": ("estimation",),
    "topology": ("topology",),
}


@dataclass
class ExperimentConfig:
    scenario: str
    seed: int
    repeat_count: int
    output_path: str
    sections: dict = field(default_factory=dict)
    seed_explicit: bool = True

    def __getitem__(self, name):
        return self.sections[name]

    def to_text(self):
        return serialize_config(self)

    @property
    def config_hash(self):
        """SHA-256 of the canonical text, ignoring where results are written."""
        text = serialize_config(replace(self, output_path=""))
        return hashlib.sha256(text.encode()).hexdigest()


def default_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError([f"environment {SEED_ENV}: not an integer: {raw!r}"]) from None


def _fmt(kind, v):
    if v is None:
        return "none"
    if kind in ("floats", "ints", "strs"):
        return ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if kind == "bool":
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(cfg):
    lines = ["[experiment]"]
    exp = {"scenario": cfg.scenario, "seed": cfg.seed, "repeat_count": cfg.repeat_count,
           "output_path": cfg.output_path}
    for k, (kind, _) in SCHEMA["experiment"].items():
        lines.append(f"{k} = {_fmt(kind, exp[k])}")
    for sec in SCENARIO_SECTIONS[cfg.scenario]:
        lines.append("")
        lines.append(f"[{sec}]")
        for k, (kind, _) in SCHEMA[sec].items():
            lines.append(f"{k} = {_fmt(kind, cfg.sections[sec][k])}")
    return "\n".join(lines) + "\n"


def _read(source):
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str  # keep key case (M, N, Q)
    try:
        if "\n" in source or "[" in source:
            cp.read_string(source)
        else:
            with open(source) as fh:
                cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    return cp


def parse_config(source, overrides=None):
    """Parse and validate a config file path or INI text.

    ``overrides`` maps ``"section.key"`` to raw string values applied on top
    of the file (used by ``sweep``).
    """
    cp = _read(source)
    violations = []
    raw = {s: dict(cp[s]) for s in cp.sections()}
    for path, value in (overrides or {}).items():
        if "." not in path:
            violations.append(f"{path}: override keys must look like section.key")
            continue
        s, k = path.split(".", 1)
        raw.setdefault(s, {})[k] = str(value)
    for s in raw:
        if s not in SCHEMA:
            violations.append(f"{s}: unknown section")
            continue
        for k in raw[s]:
            if k not in SCHEMA[s]:
                violations.append(f"{s}.{k}: unknown key")
    typed = {}
    for s, keys in SCHEMA.items():
        typed[s] = {}
        for k, (kind, default) in keys.items():
            if k in raw.get(s, {}):
                try:
                    typed[s][k] = _TYPES[kind](raw[s][k])
                except ValueError as exc:
                    violations.append(f"{s}.{k}: {exc}")
                    typed[s][k] = default
            else:
                typed[s][k] = default
    exp = typed["experiment"]
    scenario = exp["scenario"]
    if scenario is None:
        violations.append("experiment.scenario: missing")
    elif scenario not in SCENARIOS:
        violations.append(f"experiment.scenario: must be one of {', '.join(SCENARIOS)}")
    else:
        needed = set(SCENARIO_SECTIONS[scenario]) | {"experiment"}
        for s in raw:
            if s in SCHEMA and s not in needed:
                violations.append(f"{s}: section not used by scenario {scenario}")
        violations.extend(_semantic_checks(scenario, typed))
    if exp["repeat_count"] < 1:
        violations.append("experiment.repeat_count: must be at least 1")
    if violations:
        raise ConfigError(violations)
    seed_explicit = exp["seed"] is not None
    return ExperimentConfig(
        scenario=scenario,
        seed=exp["seed"] if seed_explicit else default_seed(),
        repeat_count=exp["repeat_count"],
        output_path=exp["output_path"],
        sections={s: typed[s] for s in SCENARIO_SECTIONS[scenario]},
        seed_explicit=seed_explicit,
    )


def _semantic_checks(scenario, c):
    v = []
    if "task" in SCENARIO_SECTIONS[scenario]:
        t = c["task"]
        if t["kind"] not in KINDS or t["kind"] == "detection":
            v.append(f"task.kind: {t['kind']!r} is not a learning task")
        if t["d"] < 1:
            v.append("task.d: must be positive")
        if t["w_star"] and len(t["w_star"]) != t["d"]:
            v.append(f"task.w_star: has {len(t['w_star'])} entries, task.d is {t['d']}")
        if not t["w_star"] and t["kind"] in ("quadratic", "linear_regression", "estimation_fig3"):
            v.append(f"task.w_star: required for kind {t['kind']}")
    a = c["attack"]
    if a["name"] != "none" and a["name"] not in ATTACKS:
        v.append(f"attack.name: unknown attack {a['name']!r}")
    if scenario == "distributed":
        d = c["distributed"]
        v.extend(_count_checks("distributed", d))
        if d["engine"] not in ("sgd", "signsgd"):
            v.append("distributed.engine: must be sgd or signsgd")
        for r in d["rules"]:
            if r not in RULES:
                v.append(f"distributed.rules: unknown rule {r!r}")
                continue
            try:
                make_rule(r, b=d["b"], m=d["m"]).check_condition(d["M"])
            except WellPosednessError as exc:
                v.append(f"distributed.rules: {exc}")
        if d["engine"] == "signsgd" and d["M"] < 2 * d["b"] + 1:
            v.append(f"distributed.engine: signSGD requires M >= 2b+1; got M={d['M']}, b={d['b']}")
        v.extend(_mode_checks("distributed", d, a))
    elif scenario == "decentralized":
        d = c["decentralized"]
        v.extend(_count_checks("decentralized", d))
        from .decentralized import ALGORITHMS
        for alg in d["algorithms"]:
            if alg not in ALGORITHMS or alg in ("consensus_only", "trimmed_consensus"):
                v.append(f"decentralized.algorithms: unknown learning algorithm {alg!r}")
        if not 0.0 < d["p"] <= 1.0:
            v.append("decentralized.p: must lie in (0, 1]")
        if d["eval_every"] < 1:
            v.append("decentralized.eval_every: must be positive")
        v.extend(_mode_checks("decentralized", d, a))
    elif scenario == "consensus":
        d = c["consensus"]
        if d["mode"] not in ("average", "lazy", "trimmed"):
            v.append("consensus.mode: must be average, lazy or trimmed")
        if d["mode"] == "lazy" and d["byz_count"] < 1:
            v.append("consensus.byz_count: lazy mode needs at least one Byzantine node")
        if d["mode"] == "lazy" and a["value"] and len(a["value"]) != d["d"]:
            v.append(f"attack.value: has {len(a['value'])} entries, consensus.d is {d['d']}")
        if d["mode"] == "average" and d["byz_count"]:
            v.append("consensus.byz_count: average mode is faultless")
        if d["mode"] == "trimmed" and d["byz_count"] and a["name"] == "none":
            v.append("attack.name: Byzantine nodes need an attack")
        if not 0.0 < d["p"] <= 1.0:
            v.append("consensus.p: must lie in (0, 1]")
        if not 0 <= d["byz_count"] < d["M"]:
            v.append("consensus.byz_count: must lie in [0, M)")
    elif scenario == "detection":
        d = c["detection"]
        al = d["alphas"]
        if any(x < 0 or x > 1 for x in al):
            v.append("detection.alphas: must lie in [0, 1]")
        if list(al) != sorted(al):
            v.append("detection.alphas: must be sorted")
        if d["Q"] < 2:
            v.append("detection.Q: must be at least 2")
        if d["separation"] <= 0:
            v.append("detection.separation: must be positive")
        if d["trials"] < 1:
            v.append("detection.trials: must be positive")
        if d["framework"] not in ("bayesian_majority", "neyman_pearson_majority"):
            v.append("detection.framework: unknown framework")
        if d["rounding"] not in ("floor", "randomized"):
            v.append("detection.rounding: must be floor or randomized")
    elif scenario == "estimation":
        d = c["estimation"]
        if not 0 <= d["byz_count"] < d["M"]:
            v.append("estimation.byz_count: must lie in [0, M)")
        if len(d["w_star"]) != 2:
            v.append("estimation.w_star: needs two entries (slope, intercept)")
    elif scenario == "topology":
        d = c["topology"]
        if not d["graph_path"]:
            v.append("topology.graph_path: missing")
        if d["mode"] not in ("exhaustive", "monte_carlo"):
            v.append("topology.mode: must be exhaustive or monte_carlo")
        if d["b"] < 0:
            v.append("topology.b: must be non-negative")
    return v


def _count_checks(sec, d):
    v = []
    if d["M"] < 1:
        v.append(f"{sec}.M: must be positive")
    if d["b"] < 0:
        v.append(f"{sec}.b: must be non-negative")
    if not 0 <= d["byz_count"] < max(d["M"], 1):
        v.append(f"{sec}.byz_count: must lie in [0, M)")
    if d["iterations"] < 1:
        v.append(f"{sec}.iterations: must be positive")
    return v


def _mode_checks(sec, d, a):
    v = []
    for m in d["modes"]:
        if m not in ("faultless", "attacked"):
            v.append(f"{sec}.modes: unknown mode {m!r}")
    if "attacked" in d["modes"] and d["byz_count"] and a["name"] == "none":
        v.append("attack.name: attacked mode with Byzantine nodes needs an attack")
    return v
