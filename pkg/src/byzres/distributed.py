"""Synchronous master-worker SGD with pluggable screening (and its signSGD mode).

Each round: the server broadcasts ``w``; honest nodes return minibatch
gradients of their local data; Byzantine nodes return whatever their attack
produces from the round's honest messages; the server screens/aggregates and
steps ``w <- w - rho(t) * aggregate``. With ``rule="mean"`` this is vanilla
distributed SGD.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .aggregation import Aggregator, make_rule
from .attacks import Attack, AttackContext, make_attack
from .exceptions import DivergenceError, InvariantViolation, WellPosednessError
from .numeric import SeededRng
from .tasks import Task, TaskSpec, evaluate, generate_data
from .trace import MetricsTrace

TRACE_COLUMNS = ("t", "risk", "dist", "acc", "agg_norm", "survivors")

# child-stream keys of the master seed
_DATA, _HOLDOUT, _BATCH, _ATTACK, _SERVER, _BYZ = 1, 2, 3, 4, 5, 6


def step_size(rho0, tau, t):
    """Constant ``rho0`` when ``tau`` is None, else ``rho0 / (1 + t / tau)``."""
    return rho0 if tau is None else rho0 / (1.0 + t / tau)


@dataclass(frozen=True)
class DistributedConfig:
    task: TaskSpec
    M: int = 20
    b: int = 0
    byz_ids: tuple = ()
    rule: object = "mean"
    rule_params: dict = field(default_factory=dict)
    attack: object = None
    attack_params: dict = field(default_factory=dict)
    N: int = 100
    batch_size: int = None
    rho0: float = 0.1
    tau: float = None
    iterations: int = 100
    seed: int = 0
    holdout_size: int = 1000
    zeno_batch: int = 32
    check_invariants: bool = True

    def __post_init__(self):
        object.__setattr__(self, "byz_ids", tuple(sorted(int(i) for i in self.byz_ids)))
        if not all(0 <= i < self.M for i in self.byz_ids):
            raise ValueError(f"byz_ids must lie in 0..{self.M - 1}")
        if len(set(self.byz_ids)) != len(self.byz_ids):
            raise ValueError("byz_ids contains duplicates")
        if self.byz_ids and self.attack is None:
            raise ValueError("Byzantine nodes need an attack")
        if self.iterations < 1 or self.M < 1 or self.N < 1:
            raise ValueError("M, N and iterations must be positive")

    def build_rule(self):
        if isinstance(self.rule, Aggregator):
            return self.rule
        return make_rule(self.rule, b=self.b, **self.rule_params)

    def build_attack(self):
        if self.attack is None or isinstance(self.attack, Attack):
            return self.attack
        return make_attack(self.attack, **self.attack_params)

    @property
    def honest_ids(self):
        byz = set(self.byz_ids)
        return tuple(j for j in range(self.M) if j not in byz)


def random_byzantine_ids(M, count, seed):
    """``count`` Byzantine node ids drawn uniformly from the master seed's stream."""
    rng = SeededRng(seed).child(_BYZ)
    return tuple(sorted(int(i) for i in rng.choice(M, size=count, replace=False)))


class _Setup:
    """Data, holdout, streams and bound strategies shared by the SGD engines."""

    def __init__(self, cfg, data=None, holdout=None):
        self.cfg = cfg
        root = SeededRng(cfg.seed)
        if data is None:
            data = generate_data(cfg.task, cfg.M, cfg.N, root.child(_DATA))
        if data.n_nodes != cfg.M:
            raise ValueError(f"data is split over {data.n_nodes} nodes, config has M={cfg.M}")
        self.task = Task(cfg.task, data)
        if holdout is None:
            holdout = generate_data(cfg.task, 1, cfg.holdout_size, root.child(_HOLDOUT))
        self.holdout = holdout
        self.batch_rngs = {j: root.child(_BATCH, j) for j in cfg.honest_ids}
        self.attack_rngs = {j: root.child(_ATTACK, j) for j in cfg.byz_ids}
        self.server_rng = root.child(_SERVER)
        self.attack = cfg.build_attack()
        if self.attack is not None:
            self.attack.bind(self.task.model_dim)
        if len(cfg.byz_ids) > cfg.b:
            warnings.warn(
                f"{len(cfg.byz_ids)} Byzantine nodes exceed the assumed bound b={cfg.b}",
                RuntimeWarning, stacklevel=3,
            )
        self._server_data = None

    def honest_gradient(self, j, w):
        idx = self.task.data.node_indices(j)
        bs = self.cfg.batch_size
        if bs is not None:
            idx = idx[self.batch_rngs[j].integers(0, idx.size, size=bs)]
        return self.task.grad(w, idx)

    def oracle_gradient(self, w):
        if self._server_data is None:
            self._server_data = generate_data(
                self.cfg.task, 1, max(self.cfg.zeno_batch * 8, 64), self.server_rng.child(0)
            )
        idx = self.server_rng.integers(0, len(self._server_data), size=self.cfg.zeno_batch)
        return Task(self.cfg.task, self._server_data).grad(w, idx)

    def byzantine_messages(self, t, honest, w):
        out = {}
        for j in self.cfg.byz_ids:
            ctx = AttackContext(t, honest, w, self.cfg.M, self.attack_rngs[j], j)
            out[j] = np.asarray(self.attack(ctx), dtype=np.float64)
        return out

    def record(self, trace, t, w, agg, survivors):
        m = evaluate(self.task, w, self.holdout)
        trace.append(t, m.risk, m.distance, m.accuracy, float(np.linalg.norm(agg)), survivors)


def _check_containment(rule, honest, agg, t):
    lo = honest.min(axis=0)
    hi = honest.max(axis=0)
    slack = 1e-9 * np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
    if np.any(agg < lo - slack) or np.any(agg > hi + slack):
        raise InvariantViolation(
            f"round {t}: {rule.name} aggregate left the honest per-coordinate range"
        )


def run_distributed_sgd(cfg, data=None, holdout=None, callback=None, w0=None):
    """Run the screened distributed SGD loop for ``cfg.iterations`` rounds.

    ``callback(t, messages, outcome, w_before)`` is invoked after each
    aggregation, mainly for tests that need to look inside a round.
    """
    rule = cfg.build_rule()
    rule.check_condition(cfg.M)
    s = _Setup(cfg, data, holdout)
    honest_ids = list(cfg.honest_ids)
    w = s.task.init_model() if w0 is None else np.array(w0, dtype=np.float64)
    contain = (cfg.check_invariants and rule.name in ("median", "trimmed_mean")
               and len(cfg.byz_ids) <= cfg.b)
    needs_oracle = getattr(rule, "needs_oracle", False)
    trace = MetricsTrace(TRACE_COLUMNS, meta={"rule": rule.name})
    for t in range(1, cfg.iterations + 1):
        honest = np.array([s.honest_gradient(j, w) for j in honest_ids])
        msgs = np.empty((cfg.M, w.size))
        msgs[honest_ids] = honest
        for j, v in s.byzantine_messages(t, honest, w).items():
            msgs[j] = v
        extra = {"oracle_gradient": s.oracle_gradient(w)} if needs_oracle else {}
        outcome = rule.aggregate(msgs, **extra)
        if contain:
            _check_containment(rule, honest, outcome.aggregate, t)
        if callback is not None:
            callback(t, msgs, outcome, w)
        with np.errstate(over="ignore", invalid="ignore"):
            w_next = w - step_size(cfg.rho0, cfg.tau, t) * outcome.aggregate
        if not np.all(np.isfinite(w_next)):
            raise DivergenceError(f"model became non-finite at round {t}", trace)
        w = w_next
        with np.errstate(over="ignore"):
            s.record(trace, t, w, outcome.aggregate, len(outcome.survivors))
    trace.meta["final_model"] = w
    return trace


def run_signsgd(cfg, data=None, holdout=None, callback=None, w0=None):
    """signSGD with coordinate-wise majority vote of the reported signs."""
    if cfg.M < 2 * cfg.b + 1:
        raise WellPosednessError("signSGD", "M >= 2b+1", cfg.M, cfg.b)
    rule = make_rule("sign_majority", b=cfg.b)
    s = _Setup(cfg, data, holdout)
    honest_ids = list(cfg.honest_ids)
    w = s.task.init_model() if w0 is None else np.array(w0, dtype=np.float64)
    trace = MetricsTrace(TRACE_COLUMNS, meta={"rule": "sign_majority"})
    for t in range(1, cfg.iterations + 1):
        honest = np.sign(np.array([s.honest_gradient(j, w) for j in honest_ids]))
        msgs = np.empty((cfg.M, w.size))
        msgs[honest_ids] = honest
        for j, v in s.byzantine_messages(t, honest, w).items():
            msgs[j] = v
        outcome = rule.aggregate(msgs)
        if callback is not None:
            callback(t, msgs, outcome, w)
        w = w - step_size(cfg.rho0, cfg.tau, t) * outcome.aggregate
        s.record(trace, t, w, outcome.aggregate, cfg.M)
    trace.meta["final_model"] = w
    return trace


@dataclass
class RuleComparison:
    rows: list
    traces: dict

    columns = ("rule", "mode", "final_acc", "final_dist", "final_risk")


def compare_rules(cfg_base, rules):
    """Each rule on the same data and seed, once faultless and once under attack."""
    if not rules:
        raise ValueError("rules must be non-empty")
    rows, traces = [], {}
    for name in rules:
        for mode in ("faultless", "attacked"):
            cfg = replace(cfg_base, rule=name)
            if mode == "faultless":
                cfg = replace(cfg, byz_ids=())
            tr = run_distributed_sgd(cfg)
            traces[(name, mode)] = tr
            fin = tr.final
            rows.append((name, mode, fin["acc"], fin["dist"], fin["risk"]))
    return RuleComparison(rows, traces)
