"""Consensus and decentralized learning over a graph with Byzantine nodes.

All engines are synchronous: in round ``t`` every node reads the iterates its
in-neighbours broadcast at the end of round ``t-1``. A Byzantine node
broadcasts one attack vector per round, identical to all of its neighbours.

Screening-based engines (trimmed consensus, BRIDGE, ByRDiE, BRIDGE variants)
include the node's own value in the screened set.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .aggregation import _bulyan, agg_coordinate_median, krum_select
from .attacks import Attack, AttackContext, make_attack
from .exceptions import DivergenceError, InvariantViolation, WellPosednessError
from .network import NetworkGraph, WeightMatrix, metropolis_weights
from .numeric import SeededRng, as_stack
from .tasks import Task, TaskSpec, evaluate, generate_data, solve_erm
from .trace import MetricsTrace

NODE_COLUMNS = ("t", "node", "acc", "dist", "scalars_broadcast")
SUMMARY_COLUMNS = ("t", "scalars_broadcast", "acc_mean", "acc_std", "dist_mean")

_DATA, _HOLDOUT, _ATTACK = 1, 2, 4

ALGORITHMS = ("dgd", "consensus_only", "trimmed_consensus", "bridge", "byrdie",
              "bridge_median", "bridge_krum", "bridge_bulyan")


def _weights_matrix(weights):
    return weights.matrix if hasattr(weights, "matrix") else np.asarray(weights, dtype=float)


def _disagreement(X):
    return float(np.max(np.linalg.norm(X - X.mean(axis=0), axis=1)))


def run_average_consensus(weights, initial, T):
    """Plain averaging ``w_j <- sum_i a_ji w_i``; returns ``(states, disagreement)``.

    ``states[t]`` is the ``(M, d)`` array after ``t`` rounds (``states[0]`` is
    the initial one); disagreement is ``max_j |w_j - mean|`` per round.
    """
    W = _weights_matrix(weights)
    WeightMatrix(W).validate()
    X = as_stack(initial)
    if X.shape[0] != W.shape[0]:
        raise ValueError(f"{X.shape[0]} initial values for {W.shape[0]} nodes")
    states = [X]
    dis = [_disagreement(X)]
    for _ in range(T):
        X = W @ X
        states.append(X)
        dis.append(_disagreement(X))
    return np.array(states), np.array(dis)


def run_lazy_attack_consensus(weights, initial, lazy, T):
    """Averaging where each node in ``lazy`` keeps broadcasting its fixed value.

    ``lazy`` maps node id to the constant vector it sends. Returns the state
    history and, per round, ``max`` over honest nodes of the distance to the
    first lazy value.
    """
    W = _weights_matrix(weights)
    X = as_stack(initial).copy()
    M, d = X.shape
    if not lazy:
        raise ValueError("at least one lazy Byzantine node is needed")
    consts = {}
    for j, v in lazy.items():
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.size != d:
            raise ValueError(f"lazy value of node {j} has dimension {v.size}, expected {d}")
        consts[int(j)] = v
    honest = np.array([j for j in range(M) if j not in consts])
    target = next(iter(consts.values()))
    for j, v in consts.items():
        X[j] = v
    states = [X.copy()]
    dist = [float(np.max(np.linalg.norm(X[honest] - target, axis=1)))]
    for _ in range(T):
        X = W @ X
        for j, v in consts.items():
            X[j] = v
        states.append(X.copy())
        dist.append(float(np.max(np.linalg.norm(X[honest] - target, axis=1))))
    return np.array(states), np.array(dist)


def trimmed_consensus_step(values, b):
    """Average of ``values`` after dropping the ``b`` largest and ``b`` smallest."""
    v = np.sort(np.asarray(values, dtype=float).reshape(-1))
    if v.size < 2 * b + 1:
        raise WellPosednessError("trimmed consensus", "at least 2b+1 values", v.size, b)
    kept = v[b:v.size - b]
    acc = kept[0]
    for x in kept[1:]:
        acc += x
    return float(acc / kept.size)


def _closed_neighborhoods(graph):
    return [np.array(sorted(set(graph.in_neighbors(j)) | {j})) for j in range(graph.M)]


def _trimmed_rows(V, b):
    """Coordinate-wise trimmed mean of the rows of ``V`` plus retained min/max."""
    S = np.sort(V, axis=0)[b:V.shape[0] - b]
    acc = S[0].copy()
    for r in S[1:]:
        acc += r
    return acc / S.shape[0], S[0], S[-1]


@dataclass
class ConsensusRun:
    states: np.ndarray
    honest: np.ndarray
    ranges: np.ndarray  # (T+1, d) honest max - min per coordinate

    @property
    def final(self):
        return self.states[-1][self.honest]


def run_trimmed_consensus(graph, initial, b, attacks=None, T=100, seed=0, check=True):
    """Scalar-wise trimmed-mean consensus with Byzantine broadcasters.

    ``attacks`` maps Byzantine node ids to :class:`~byzres.attacks.Attack`
    instances. With ``check`` set, every round asserts that each honest node
    with at most ``b`` Byzantine in-neighbours retains only values inside the
    honest range, and (when every honest node is so protected) that the honest
    range per coordinate does not grow.
    """
    attacks = dict(attacks or {})
    X = as_stack(initial).copy()
    M, d = X.shape
    if M != graph.M:
        raise ValueError(f"{M} initial values for a {graph.M}-node graph")
    hoods = _closed_neighborhoods(graph)
    byz = set(attacks)
    honest = np.array([j for j in range(M) if j not in byz])
    for j in honest:
        if hoods[j].size < 2 * b + 1:
            raise WellPosednessError(f"trimmed consensus at node {j}", "|N_j| + 1 >= 2b+1",
                                     hoods[j].size, b)
    guarded = {j for j in honest if len(byz.intersection(hoods[j].tolist())) <= b}
    # the honest range only contracts when no honest node is overwhelmed
    all_guarded = len(guarded) == honest.size
    root = SeededRng(seed)
    rngs = {j: root.child(_ATTACK, j) for j in byz}
    for a in attacks.values():
        a.bind(d)
    ranges = [X[honest].max(axis=0) - X[honest].min(axis=0)]
    states = [X.copy()]
    for t in range(1, T + 1):
        H = X[honest]
        lo, hi = H.min(axis=0), H.max(axis=0)
        sent = X.copy()
        for j, a in attacks.items():
            sent[j] = a(AttackContext(t, H, X[j], M, rngs[j], j))
        new = X.copy()
        for j in honest:
            agg, kept_lo, kept_hi = _trimmed_rows(sent[hoods[j]], b)
            if check and j in guarded and (np.any(kept_lo < lo) or np.any(kept_hi > hi)):
                raise InvariantViolation(f"round {t}: node {j} retained a value outside the honest range")
            new[j] = agg
        for j in byz:
            new[j] = sent[j]
        X = new
        r = X[honest].max(axis=0) - X[honest].min(axis=0)
        if (check and all_guarded
                and np.any(r > ranges[-1] + 1e-12 * np.maximum(1.0, np.abs(ranges[-1])))):
            raise InvariantViolation(f"round {t}: honest range grew")
        ranges.append(r)
        states.append(X.copy())
    return ConsensusRun(np.array(states), honest, np.array(ranges))


@dataclass(frozen=True)
class DecentralizedConfig:
    graph: NetworkGraph
    task: TaskSpec
    algorithm: str = "bridge"
    b: int = 0
    byz_ids: tuple = ()
    attack: object = None
    attack_params: dict = field(default_factory=dict)
    weights: object = None
    N: int = 100
    rho0: float = 0.1
    tau: float = 100.0
    iterations: int = 100
    inner_iters: int = 1
    seed: int = 0
    holdout_size: int = 1000
    eval_every: int = 1
    reference: str = "w_star"
    check_invariants: bool = True

    def __post_init__(self):
        object.__setattr__(self, "byz_ids", tuple(sorted(int(i) for i in self.byz_ids)))
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if not all(0 <= i < self.graph.M for i in self.byz_ids):
            raise ValueError("byz_ids outside the graph")
        if self.byz_ids and self.attack is None:
            raise ValueError("Byzantine nodes need an attack")

    @property
    def M(self):
        return self.graph.M

    @property
    def honest_ids(self):
        byz = set(self.byz_ids)
        return tuple(j for j in range(self.M) if j not in byz)

    def build_attack(self):
        if self.attack is None or isinstance(self.attack, Attack):
            return self.attack
        return make_attack(self.attack, **self.attack_params)


def _rho(cfg, t):
    return cfg.rho0 if cfg.tau is None else cfg.rho0 / (1.0 + t / cfg.tau)


_SCREEN_NEED = {
    "bridge": ("2b+1", lambda b: 2 * b + 1),
    "byrdie": ("2b+1", lambda b: 2 * b + 1),
    "bridge_median": ("2b+1", lambda b: 2 * b + 1),
    "bridge_krum": ("2b+3", lambda b: 2 * b + 3),
    "bridge_bulyan": ("4b+1", lambda b: 4 * b + 1),
}


class _Engine:
    """Shared setup and bookkeeping for the decentralized learning loops."""

    def __init__(self, cfg, data=None, holdout=None):
        self.cfg = cfg
        root = SeededRng(cfg.seed)
        if data is None:
            data = generate_data(cfg.task, cfg.M, cfg.N, root.child(_DATA))
        if data.n_nodes != cfg.M:
            raise ValueError(f"data is split over {data.n_nodes} nodes, graph has {cfg.M}")
        self.task = Task(cfg.task, data)
        self.holdout = holdout if holdout is not None else generate_data(
            cfg.task, 1, cfg.holdout_size, root.child(_HOLDOUT))
        self.attack = cfg.build_attack()
        if self.attack is not None:
            self.attack.bind(self.task.model_dim)
        self.attack_rngs = {j: root.child(_ATTACK, j) for j in cfg.byz_ids}
        self.hoods = _closed_neighborhoods(cfg.graph)
        self.honest = list(cfg.honest_ids)
        byz = set(cfg.byz_ids)
        self.guarded = {j for j in self.honest
                        if len(byz.intersection(self.hoods[j].tolist())) <= cfg.b}
        need = _SCREEN_NEED.get(cfg.algorithm)
        if need is not None:
            cond, f = need
            for j in self.honest:
                n = self.hoods[j].size
                if n < f(cfg.b):
                    raise WellPosednessError(
                        f"{cfg.algorithm} at node {j}", f"|N_j| + 1 >= {cond}", n, cfg.b)
        if cfg.reference == "erm":
            idx = np.concatenate([data.node_indices(j) for j in self.honest])
            self.reference = solve_erm(self.task, idx)
        elif self.task.w_star is not None:
            self.reference = self.task.w_star
        else:
            self.reference = None
        self.trace = MetricsTrace(NODE_COLUMNS, meta={"algorithm": cfg.algorithm})

    def local_grad(self, j, w):
        idx = self.task.data.node_indices(j)
        return self.task.grad(w, idx)

    def broadcast(self, t, X):
        sent = X.copy()
        if self.cfg.byz_ids:
            H = X[self.honest]
            for j in self.cfg.byz_ids:
                ctx = AttackContext(t, H, X[j], self.cfg.M, self.attack_rngs[j], j)
                sent[j] = self.attack(ctx)
        return sent

    def record(self, t, X, scalars, force=False):
        if not force and t % self.cfg.eval_every:
            return
        for j in self.honest:
            m = evaluate(self.task, X[j], self.holdout)
            dist = (float(np.linalg.norm(X[j] - self.reference))
                    if self.reference is not None else float("nan"))
            self.trace.append(t, j, m.accuracy, dist, scalars)

    def finish(self, X, T, scalars):
        if T % self.cfg.eval_every:
            self.record(T, X, scalars, force=True)
        self.trace.meta["final_models"] = X[self.honest].copy()
        return self.trace

    def check_finite(self, X, t):
        if not np.all(np.isfinite(X[self.honest])):
            raise DivergenceError(f"honest iterate became non-finite at round {t}", self.trace)


def _init(engine, w0):
    M, d = engine.cfg.M, engine.task.model_dim
    if w0 is None:
        return np.zeros((M, d))
    return np.array(as_stack(w0) if np.ndim(w0) == 2 else np.tile(w0, (M, 1)), dtype=float)


def run_dgd(cfg, data=None, holdout=None, w0=None):
    """Decentralized gradient descent: weighted neighbour average minus a local gradient step."""
    eng = _Engine(cfg, data, holdout)
    W = _weights_matrix(cfg.weights) if cfg.weights is not None else \
        metropolis_weights(cfg.graph).matrix
    X = _init(eng, w0)
    d = X.shape[1]
    eng.record(0, X, 0)
    for t in range(1, cfg.iterations + 1):
        sent = eng.broadcast(t, X)
        mixed = W @ sent
        new = X.copy()
        rho = _rho(cfg, t)
        for j in eng.honest:
            new[j] = mixed[j] - rho * eng.local_grad(j, X[j])
        X = new
        eng.check_finite(X, t)
        eng.record(t, X, t * d)
    return eng.finish(X, cfg.iterations, cfg.iterations * d)


def _screen(cfg, V, b):
    """Screen the closed-neighbourhood values ``V`` at one node."""
    alg = cfg.algorithm
    if alg in ("bridge", "byrdie"):
        return _trimmed_rows(V, b)
    if alg == "bridge_median":
        return agg_coordinate_median(V).aggregate, None, None
    if alg == "bridge_krum":
        return krum_select(V, b).aggregate, None, None
    if alg == "bridge_bulyan":
        return _bulyan(V, b, "Bulyan (local)").aggregate, None, None
    raise ValueError(f"{alg} is not a screening algorithm")


def run_bridge(cfg, data=None, holdout=None, w0=None):
    """BRIDGE: coordinate-wise trimmed mean over the neighbourhood, then a local step.

    Also runs the screening variants (``bridge_median``, ``bridge_krum``,
    ``bridge_bulyan``) selected through ``cfg.algorithm``.
    """
    eng = _Engine(cfg, data, holdout)
    X = _init(eng, w0)
    d = X.shape[1]
    b = cfg.b
    eng.record(0, X, 0)
    for t in range(1, cfg.iterations + 1):
        sent = eng.broadcast(t, X)
        H = sent[eng.honest]
        h_lo, h_hi = H.min(axis=0), H.max(axis=0)
        new = X.copy()
        rho = _rho(cfg, t)
        for j in eng.honest:
            agg, lo, hi = _screen(cfg, sent[eng.hoods[j]], b)
            if (cfg.check_invariants and lo is not None and j in eng.guarded
                    and (np.any(lo < h_lo) or np.any(hi > h_hi))):
                raise InvariantViolation(
                    f"round {t}: node {j} retained a coordinate outside the honest range")
            new[j] = agg - rho * eng.local_grad(j, X[j])
        X = new
        eng.check_finite(X, t)
        eng.record(t, X, t * d)
    return eng.finish(X, cfg.iterations, cfg.iterations * d)


def run_bridge_variant(cfg, screening, data=None, holdout=None, w0=None):
    """BRIDGE with ``median``, ``krum`` or ``bulyan`` screening in place of the trimmed mean."""
    if screening not in ("median", "krum", "bulyan"):
        raise ValueError(f"unknown screening {screening!r}")
    return run_bridge(replace(cfg, algorithm=f"bridge_{screening}"), data, holdout, w0)


def run_byrdie(cfg, data=None, holdout=None, w0=None):
    """ByRDiE: cyclic coordinate descent with trimmed-mean screening per coordinate.

    One outer round ``t`` sweeps ``k = 0..d-1``; each coordinate gets
    ``inner_iters`` screened updates using the gradient at the current full
    iterate. Every coordinate update broadcasts one scalar per node.
    """
    eng = _Engine(cfg, data, holdout)
    X = _init(eng, w0)
    d = X.shape[1]
    b = cfg.b
    scalars = 0
    eng.record(0, X, 0)
    for t in range(1, cfg.iterations + 1):
        rho = _rho(cfg, t)
        for k in range(d):
            for _ in range(cfg.inner_iters):
                sent = eng.broadcast(t, X)
                col = sent[:, k]
                h = col[eng.honest]
                new_k = X[:, k].copy()
                for j in eng.honest:
                    v = np.sort(col[eng.hoods[j]])[b:eng.hoods[j].size - b]
                    if cfg.check_invariants and j in eng.guarded and (
                            v[0] < h.min() or v[-1] > h.max()):
                        raise InvariantViolation(
                            f"round {t}, coordinate {k}: node {j} retained an out-of-range value")
                    acc = v[0]
                    for x in v[1:]:
                        acc += x
                    new_k[j] = acc / v.size - rho * eng.local_grad(j, X[j])[k]
                X[:, k] = np.where(np.isin(np.arange(cfg.M), eng.honest), new_k, X[:, k])
                scalars += 1
        eng.check_finite(X, t)
        eng.record(t, X, scalars)
    return eng.finish(X, cfg.iterations, scalars)


def run_decentralized(cfg, data=None, holdout=None, w0=None):
    """Dispatch on ``cfg.algorithm`` for the learning engines."""
    alg = cfg.algorithm
    if alg == "dgd":
        return run_dgd(cfg, data, holdout, w0)
    if alg == "byrdie":
        return run_byrdie(cfg, data, holdout, w0)
    if alg == "bridge" or alg.startswith("bridge_"):
        return run_bridge(cfg, data, holdout, w0)
    raise ValueError(f"{alg} is a consensus algorithm; use the consensus runners")


def summarize(trace):
    """Honest-average curve: one row per recorded round."""
    out = MetricsTrace(SUMMARY_COLUMNS, meta=dict(trace.meta))
    t_col = trace.column("t")
    acc = trace.column("acc")
    dist = trace.column("dist")
    sc = trace.column("scalars_broadcast")
    for t in np.unique(t_col):
        m = t_col == t
        a = acc[m]
        out.append(int(t), int(sc[m][0]), float(np.mean(a)), float(np.std(a)),
                   float(np.mean(dist[m])))
    return out
