"""Directed graphs, doubly stochastic consensus weights and topology certifiers.

Node ``j`` *receives* from its in-neighbours ``in_neighbors(j)``; an
undirected experiment graph is stored as a symmetric set of directed edges.
Neighbour sets are kept as integer bitmasks so the certifiers can sweep
subsets of nodes with vectorized bit operations.
"""

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

from .exceptions import TopologyError


class NetworkGraph:
    def __init__(self, M, edges=()):
        if M < 1:
            raise TopologyError("a graph needs at least one node")
        self.M = int(M)
        adj = np.zeros((self.M, self.M), dtype=bool)
        for u, v in edges:
            u, v = int(u), int(v)
            if not (0 <= u < self.M and 0 <= v < self.M):
                raise TopologyError(f"edge ({u}, {v}) has an endpoint outside 0..{self.M - 1}")
            if u == v:
                raise TopologyError(f"self-loop at node {u}")
            adj[v, u] = True
        # adj[j, i] is True when j receives from i
        self.adjacency = adj
        self.adjacency.flags.writeable = False
        self.in_masks = tuple(
            int(sum(1 << int(i) for i in np.flatnonzero(adj[j]))) for j in range(self.M)
        )

    @classmethod
    def undirected(cls, M, pairs):
        return cls(M, [e for u, v in pairs for e in ((u, v), (v, u))])

    @classmethod
    def complete(cls, M):
        return cls.undirected(M, itertools.combinations(range(M), 2))

    @classmethod
    def from_adjacency(cls, adj):
        adj = np.asarray(adj, dtype=bool)
        js, is_ = np.nonzero(adj)
        return cls(adj.shape[0], zip(is_.tolist(), js.tolist()))

    @property
    def edges(self):
        js, is_ = np.nonzero(self.adjacency)
        return sorted(zip(is_.tolist(), js.tolist()))

    def in_neighbors(self, j):
        return [int(i) for i in np.flatnonzero(self.adjacency[j])]

    def in_degree(self, j=None):
        deg = self.adjacency.sum(axis=1)
        return deg if j is None else int(deg[j])

    def is_symmetric(self):
        return bool(np.array_equal(self.adjacency, self.adjacency.T))

    def is_connected(self):
        """Weak connectivity."""
        sym = self.adjacency | self.adjacency.T
        seen = {0}
        stack = [0]
        while stack:
            v = stack.pop()
            for u in np.flatnonzero(sym[v]):
                if int(u) not in seen:
                    seen.add(int(u))
                    stack.append(int(u))
        return len(seen) == self.M

    def __eq__(self, other):
        return isinstance(other, NetworkGraph) and np.array_equal(self.adjacency, other.adjacency)

    def __repr__(self):
        return f"NetworkGraph(M={self.M}, edges={int(self.adjacency.sum())})"


def read_graph(path):
    """Parse the line format: first data line ``M``, then ``u v`` per directed edge."""
    M = None
    edges = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if M is None:
                    if len(parts) != 1:
                        raise ValueError
                    M = int(parts[0])
                else:
                    if len(parts) != 2:
                        raise ValueError
                    edges.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise TopologyError(f"{path}:{lineno}: cannot parse {line!r}") from None
    if M is None:
        raise TopologyError(f"{path}: missing node count")
    return NetworkGraph(M, edges)


def write_graph(g, path):
    with open(path, "w") as fh:
        fh.write(f"{g.M}\n")
        for u, v in g.edges:
            fh.write(f"{u} {v}\n")


def random_graph(M, p, rng, min_in_degree=0, max_retries=100_000):
    """Undirected coin-flip graph, redrawn until every degree reaches ``min_in_degree``."""
    if not 0 < p <= 1:
        raise ValueError(f"edge probability must lie in (0, 1], got {p}")
    if min_in_degree > M - 1:
        raise TopologyError(f"min_in_degree {min_in_degree} impossible with {M} nodes")
    iu = np.triu_indices(M, 1)
    for _ in range(max_retries):
        coins = rng.random(len(iu[0])) < p
        adj = np.zeros((M, M), dtype=bool)
        adj[iu[0][coins], iu[1][coins]] = True
        adj |= adj.T
        if adj.sum(axis=1).min(initial=M) >= min_in_degree:
            return NetworkGraph.from_adjacency(adj)
    raise TopologyError(
        f"no graph with min degree {min_in_degree} after {max_retries} draws; try a larger p"
    )


@dataclass(frozen=True)
class WeightMatrix:
    matrix: np.ndarray

    def validate(self, graph=None, floor=0.0, tol=1e-12):
        W = self.matrix
        problems = []
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            problems.append(f"weights must be square, got {W.shape}")
        else:
            if np.any(W < -tol):
                problems.append("negative weight")
            if np.max(np.abs(W.sum(axis=1) - 1)) > tol:
                problems.append("rows do not sum to 1")
            if np.max(np.abs(W.sum(axis=0) - 1)) > tol:
                problems.append("columns do not sum to 1")
            nz = W[W > tol]
            if floor > 0 and nz.size and nz.min() < floor:
                problems.append(f"smallest nonzero weight {nz.min():.3g} below floor {floor}")
            if graph is not None:
                allowed = graph.adjacency | np.eye(graph.M, dtype=bool)
                if np.any((W > tol) & ~allowed):
                    problems.append("weight on a non-edge")
        if problems:
            raise TopologyError("invalid weight matrix: " + "; ".join(problems))
        return self


def metropolis_weights(g):
    """Metropolis-Hastings weights ``1 / (1 + max(deg_j, deg_i))`` on every edge."""
    if not g.is_symmetric():
        raise TopologyError("Metropolis weights need an undirected (symmetric) graph")
    deg = g.in_degree()
    W = np.zeros((g.M, g.M))
    js, is_ = np.nonzero(g.adjacency)
    W[js, is_] = 1.0 / (1.0 + np.maximum(deg[js], deg[is_]))
    W[np.arange(g.M), np.arange(g.M)] = 1.0 - W.sum(axis=1)
    return WeightMatrix(W)


def check_in_degree(g, threshold):
    return bool(np.all(g.in_degree() >= threshold))


@dataclass(frozen=True)
class TopologyVerdict:
    status: str  # "certified" | "falsified" | "unknown" | "pass" | "fail"
    witness: dict = None

    def __bool__(self):
        return self.status in ("certified", "pass")


def reduction_count(g, b):
    """Number of reduced graphs: b-subsets of nodes times b-subsets of in-edges per node."""
    total = 0
    for F in itertools.combinations(range(g.M), b):
        fmask = sum(1 << f for f in F)
        prod = 1
        for v in range(g.M):
            if fmask >> v & 1:
                continue
            deg = bin(g.in_masks[v] & ~fmask).count("1")
            prod *= comb(deg, min(b, deg))
        total += prod
    return total


def _reach_all_count(in_masks, nodes_mask):
    """How many nodes reach every node of ``nodes_mask`` through the given in-edges."""
    out = {}
    members = [v for v in range(len(in_masks)) if nodes_mask >> v & 1]
    for v in members:
        m = in_masks[v] & nodes_mask
        while m:
            u = (m & -m).bit_length() - 1
            out[u] = out.get(u, 0) | (1 << v)
            m &= m - 1
    count = 0
    for s in members:
        seen = 1 << s
        frontier = seen
        while frontier:
            nxt = 0
            m = frontier
            while m:
                u = (m & -m).bit_length() - 1
                nxt |= out.get(u, 0)
                m &= m - 1
            frontier = nxt & ~seen
            seen |= nxt
        if seen == nodes_mask:
            count += 1
    return count


def has_source_component(in_masks, nodes_mask, b):
    """True when some strongly connected set of >= b+1 nodes reaches all of ``nodes_mask``.

    The nodes reaching everything are exactly the unique source component of the
    condensation, so counting them is enough.
    """
    return _reach_all_count(in_masks, nodes_mask) >= b + 1


def _popcount(a):
    return np.bitwise_count(a)


def _closed_sets(in_masks, rest, b):
    """Boolean table over subsets of ``rest``: every member has <= b in-neighbours outside."""
    nodes = [v for v in range(len(in_masks)) if rest >> v & 1]
    r = len(nodes)
    sub = np.arange(1 << r, dtype=np.int64)
    local_in = []
    for v in nodes:
        m = 0
        for p, u in enumerate(nodes):
            if in_masks[v] >> u & 1:
                m |= 1 << p
        local_in.append(m)
    closed = sub != 0
    full = (1 << r) - 1
    for p in range(r):
        has_p = (sub >> p & 1).astype(bool)
        outside = _popcount(np.int64(local_in[p]) & (full ^ sub))
        closed &= ~has_p | (outside <= b)
    return nodes, closed


def _to_global(nodes, local_mask):
    return [nodes[p] for p in range(len(nodes)) if local_mask >> p & 1]


def _isolating_removal(g, rest, groups):
    """Edges to delete so every node of each group has no in-edge from outside its group."""
    removed = []
    for group in groups:
        gm = sum(1 << v for v in group)
        for v in group:
            m = g.in_masks[v] & rest & ~gm
            removed.extend((u, v) for u in range(g.M) if m >> u & 1)
    return sorted(removed)


def _source_failure(g, F, b):
    """Closed-set witness that some reduction after deleting ``F`` has no valid source."""
    full_mask = (1 << g.M) - 1
    rest = full_mask & ~sum(1 << f for f in F)
    nodes, closed = _closed_sets(g.in_masks, rest, b)
    r = len(nodes)
    sub = np.arange(1 << r, dtype=np.int64)
    small = closed & (_popcount(sub) <= b)
    if small.any():
        A = _to_global(nodes, int(np.flatnonzero(small)[0]))
        return {"removed_nodes": list(F), "isolated": [A],
                "removed_edges": _isolating_removal(g, rest, [A])}
    # has_sub[m]: some closed set fits inside m (subset-sum over bits)
    has_sub = closed.copy()
    for p in range(r):
        idx = sub[(sub >> p & 1).astype(bool)]
        has_sub[idx] |= has_sub[idx ^ (1 << p)]
    full = (1 << r) - 1
    pair = closed & has_sub[full ^ sub]
    if pair.any():
        a = int(np.flatnonzero(pair)[0])
        comp = full ^ a
        b_local = next(int(m) for m in np.flatnonzero(closed) if m & comp == m)
        A, B = _to_global(nodes, a), _to_global(nodes, b_local)
        return {"removed_nodes": list(F), "isolated": [A, B],
                "removed_edges": _isolating_removal(g, rest, [A, B])}
    return None


def check_source_component(g, b, mode="exhaustive", samples=1000, rng=None, bound=10**7):
    """Certify or falsify the source-component condition for ``b`` faults.

    ``exhaustive`` decides the condition exactly for every choice of ``b``
    deleted nodes and ``b`` deleted in-edges per remaining node. Reductions
    fail exactly when the remaining nodes contain a set whose members each
    keep at most ``b`` in-edges from outside it ("closed") and either that set
    has at most ``b`` nodes or a second disjoint closed set exists; the search
    runs over those sets. ``monte_carlo`` samples reductions and can only
    falsify.
    """
    if b < 0:
        raise ValueError("b must be non-negative")
    if b >= g.M:
        raise TopologyError(f"cannot remove b={b} nodes from a {g.M}-node graph")
    if mode == "exhaustive":
        n = reduction_count(g, b)
        if n > bound:
            raise TopologyError(
                f"exhaustive check needs {n} reductions (bound {bound}); use monte_carlo mode"
            )
        for F in itertools.combinations(range(g.M), b):
            w = _source_failure(g, F, b)
            if w is not None:
                return TopologyVerdict("falsified", w)
        return TopologyVerdict("certified")
    if mode == "monte_carlo":
        if rng is None:
            raise ValueError("monte_carlo mode needs an rng")
        full_mask = (1 << g.M) - 1
        for _ in range(samples):
            F = sorted(int(f) for f in rng.choice(g.M, size=b, replace=False)) if b else []
            rest = full_mask & ~sum(1 << f for f in F)
            masks = list(g.in_masks)
            removed = []
            for v in range(g.M):
                if not rest >> v & 1:
                    continue
                nbrs = [u for u in range(g.M) if (masks[v] & rest) >> u & 1]
                k = min(b, len(nbrs))
                drop = rng.choice(len(nbrs), size=k, replace=False) if k else []
                for t in drop:
                    u = nbrs[int(t)]
                    masks[v] &= ~(1 << u)
                    removed.append((u, v))
            if not has_source_component(masks, rest, b):
                return TopologyVerdict("falsified", {"removed_nodes": F,
                                                     "removed_edges": sorted(removed)})
        return TopologyVerdict("unknown", {"samples": samples})
    raise ValueError(f"unknown mode {mode!r}")


def check_partition_condition(g, b, max_nodes=24, chunk=1 << 20):
    """Every bipartition must have, on one side, a node with >= 2b+1 in-neighbours across.

    Among failing bipartitions the witness is the one with the fewest crossing
    edges (ties: smallest bitmask of the side without the last node).
    """
    M = g.M
    if M > max_nodes:
        raise TopologyError(f"partition scan enumerates 2^M subsets; M={M} exceeds {max_nodes}")
    if M == 1:
        return TopologyVerdict("pass")
    need = 2 * b + 1
    full = (1 << M) - 1
    in_masks = np.array(g.in_masks, dtype=np.int64)
    sym_edges = [(u, v) for u, v in g.edges]
    best = None
    total = 1 << (M - 1)
    for start in range(1, total, chunk):
        S = np.arange(start, min(start + chunk, total), dtype=np.int64)
        T = full ^ S
        ok = np.zeros(S.shape, dtype=bool)
        for v in range(M):
            in_S = (S >> v & 1).astype(bool)
            across = np.where(in_S, _popcount(in_masks[v] & T), _popcount(in_masks[v] & S))
            ok |= across >= need
        bad = S[~ok]
        if bad.size:
            cross = np.zeros(bad.shape, dtype=np.int64)
            for u, v in sym_edges:
                cross += (bad >> u & 1) != (bad >> v & 1)
            k = int(np.argmin(cross))
            cand = (int(cross[k]), int(bad[k]))
            if best is None or cand < best:
                best = cand
    if best is None:
        return TopologyVerdict("pass")
    S = best[1]
    side_a = [v for v in range(M) if S >> v & 1]
    side_b = [v for v in range(M) if not S >> v & 1]
    return TopologyVerdict("fail", {"partition": [side_a, side_b], "crossing_edges": best[0]})
