"""Screening / aggregation rules for Byzantine-resilient gradient aggregation.

Every rule maps an ``(M, d)`` stack of candidate vectors to one aggregate.
The functional API (``agg_*``, ``krum_select``, ...) returns an
:class:`AggregationOutcome`; the estimator classes at the bottom wrap the same
functions behind the scikit-learn ``get_params``/``fit`` protocol so rules can
be configured, cloned and grid-searched like any other estimator.

Determinism conventions:

* Inputs are first put in canonical order (lexicographic sort of the rows,
  stable in arrival index). Ties are resolved in that order, so every rule is
  exactly invariant to input permutation.
* Means are accumulated row by row over per-coordinate ascending values, so
  results are bit-reproducible and independent of arrival order.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import ConvergenceError, DimensionError, WellPosednessError
from .numeric import as_stack, as_vector


@dataclass(frozen=True)
class AggregationOutcome:
    aggregate: np.ndarray
    survivors: frozenset = frozenset()
    selected_index: int = None
    ops: int = 0
    info: dict = field(default_factory=dict)


def canonical_order(X):
    """Permutation putting the rows of ``X`` in lexicographic order (stable)."""
    return np.lexsort(X.T[::-1])


def _ordered_sum(rows):
    acc = rows[0].copy()
    for r in rows[1:]:
        acc += r
    return acc


def ordered_mean(X):
    """Per-coordinate mean accumulated over ascending values."""
    S = np.sort(X, axis=0)
    return _ordered_sum(S) / S.shape[0]


def _median_sorted(S):
    n = S.shape[0]
    if n % 2:
        return S[n // 2].copy()
    return (S[n // 2 - 1] + S[n // 2]) / 2


def _require(rule, ok, condition, M, b):
    if not ok:
        raise WellPosednessError(rule, condition, M, b)


def agg_mean(inputs):
    X = as_stack(inputs)
    M, d = X.shape
    return AggregationOutcome(ordered_mean(X), frozenset(range(M)), ops=M * d)


def agg_coordinate_median(inputs):
    X = as_stack(inputs)
    M, d = X.shape
    return AggregationOutcome(_median_sorted(np.sort(X, axis=0)), ops=M * d)


def agg_coordinate_trimmed_mean(inputs, b):
    X = as_stack(inputs)
    M, d = X.shape
    _require("coordinate-wise trimmed mean", b >= 0 and M >= 2 * b + 1, "M >= 2b+1", M, b)
    S = np.sort(X, axis=0)[b:M - b]
    # the exact mean lies in [S[0], S[-1]]; clamp away the last-bit rounding
    agg = np.clip(_ordered_sum(S) / S.shape[0], S[0], S[-1])
    return AggregationOutcome(agg, ops=M * d)


def _geomed_objective(X, y):
    return float(np.sqrt(((X - y) ** 2).sum(axis=1)).sum())


def _geomed_lower_bound(X, y, f):
    """Lower bound on the optimal objective from the (min-norm sub)gradient at ``y``.

    Convexity gives ``f* >= f(y) - |grad f(y)| * |y - y*|`` and the optimum lies
    in the convex hull of the points, so ``|y - y*| <= max_i |y - x_i|``.
    """
    diff = y - X
    dist = np.sqrt((diff ** 2).sum(axis=1))
    at_point = dist == 0.0
    grad = (diff[~at_point] / dist[~at_point, None]).sum(axis=0)
    gnorm = max(0.0, float(np.linalg.norm(grad)) - int(at_point.sum()))
    return f - gnorm * float(dist.max())


def agg_geometric_median(inputs, gamma=1e-6, max_iter=10_000):
    """Weiszfeld iteration for a ``(1+gamma)``-approximate geometric median.

    Starts from the coordinate mean and stops as soon as the lower-bound
    certificate proves ``f(y) <= (1+gamma) f*``.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    X = as_stack(inputs)
    M, d = X.shape
    X = X[canonical_order(X)]
    y = ordered_mean(X)
    f = _geomed_objective(X, y)
    nudge = np.full(d, 1e-12 / np.sqrt(d))
    ops = M * d
    for it in range(1, max_iter + 1):
        lb = _geomed_lower_bound(X, y, f)
        ops += M * d
        if f == 0.0 or f <= (1 + gamma) * max(lb, 0.0):
            return AggregationOutcome(
                y, ops=ops, info={"objective": f, "lower_bound": lb, "iterations": it - 1}
            )
        dist = np.sqrt(((X - y) ** 2).sum(axis=1))
        # Weiszfeld crawls when the optimum is an input point; test that point directly
        near = X[int(np.argmin(dist))]
        f_near = _geomed_objective(X, near)
        if f_near <= f and f_near <= (1 + gamma) * max(_geomed_lower_bound(X, near, f_near), 0.0):
            return AggregationOutcome(
                near.copy(), ops=ops + 2 * M * d, info={"objective": f_near, "iterations": it - 1}
            )
        if np.any(dist == 0.0):
            y = y + nudge
            dist = np.sqrt(((X - y) ** 2).sum(axis=1))
        inv = 1.0 / dist
        y_new = (inv[:, None] * X).sum(axis=0) / inv.sum()
        f_new = _geomed_objective(X, y_new)
        ops += 2 * M * d
        if f_new > f:
            # non-monotone only through rounding; keep the better iterate
            f_new, y_new = f, y
        y, f = y_new, f_new
    raise ConvergenceError(
        f"Weiszfeld iteration did not certify a (1+{gamma})-approximation in {max_iter} "
        f"iterations; last objective {f:.6g}",
        last_objective=f,
    )


def _pairwise_sq(X):
    diff = X[:, None, :] - X[None, :, :]
    return (diff ** 2).sum(axis=-1)


def _krum_scores(D, rows, b):
    """Krum scores of ``rows`` (indices into ``D``) against each other."""
    n = len(rows)
    k = max(n - b - 2, 0)
    sub = D[np.ix_(rows, rows)]
    off = sub[~np.eye(n, dtype=bool)].reshape(n, n - 1) if n > 1 else np.zeros((1, 0))
    near = np.sort(off, axis=1)
    scores = np.zeros(n)
    for c in range(k):
        scores += near[:, c]
    return scores


def _krum_sequence(X, b, count):
    """Repeated Krum select-and-remove on canonically ordered ``X``.

    The neighbour count ``n - b - 2`` uses the current survivor count ``n``.
    Returns positions (into ``X``) in selection order.
    """
    D = _pairwise_sq(X)
    remaining = list(range(X.shape[0]))
    chosen = []
    for _ in range(count):
        scores = _krum_scores(D, remaining, b)
        pick = remaining[int(np.argmin(scores))]
        chosen.append(pick)
        remaining.remove(pick)
    return chosen


def krum_select(inputs, b):
    X = as_stack(inputs)
    M, d = X.shape
    _require("Krum", b >= 0 and M >= 2 * b + 3, "M >= 2b+3", M, b)
    order = canonical_order(X)
    pos = _krum_sequence(X[order], b, 1)[0]
    idx = int(order[pos])
    return AggregationOutcome(
        X[idx].copy(), frozenset([idx]), selected_index=idx, ops=M * M * d
    )


def multi_krum(inputs, b, m):
    X = as_stack(inputs)
    M, d = X.shape
    _require("Multi-Krum", b >= 0 and m >= 1 and M >= 2 * b + m + 2, "M >= 2b+m+2", M, b)
    order = canonical_order(X)
    picks = _krum_sequence(X[order], b, m)
    winners = order[picks]
    return AggregationOutcome(
        ordered_mean(X[winners]),
        frozenset(int(i) for i in winners),
        selected_index=int(winners[0]),
        ops=M * M * d,
    )


def bulyan(inputs, b):
    X = as_stack(inputs)
    M, d = X.shape
    _require("Bulyan", b >= 0 and M >= 4 * b + 3, "M >= 4b+3", M, b)
    return _bulyan(X, b, "Bulyan")


def _bulyan(X, b, rule):
    M, d = X.shape
    theta = M - 2 * b
    beta = M - 4 * b
    if beta < 1:
        raise WellPosednessError(rule, "M >= 4b+1", M, b)
    order = canonical_order(X)
    Xc = X[order]
    picks = _krum_sequence(Xc, b, theta)
    S = Xc[picks]
    med = _median_sorted(np.sort(S, axis=0))
    dist = np.abs(S - med)
    pos = np.broadcast_to(np.arange(theta)[:, None], S.shape)
    # per coordinate: closest to the median, then smaller value, then position
    rank = np.lexsort((pos, S, dist), axis=0)
    kept = np.take_along_axis(S, rank[:beta], axis=0)
    agg = _ordered_sum(np.sort(kept, axis=0)) / beta
    return AggregationOutcome(
        agg,
        frozenset(int(i) for i in order[picks]),
        ops=M * M * d + theta * d,
    )


def zeno_screen(inputs, oracle_gradient, b):
    if oracle_gradient is None:
        raise ValueError("Zeno screening needs an oracle gradient")
    X = as_stack(inputs)
    M, d = X.shape
    oracle = as_vector(oracle_gradient, "oracle_gradient")
    if oracle.size != d:
        raise DimensionError(f"oracle has dimension {oracle.size}, inputs have {d}")
    _require("Zeno", b >= 0 and M >= b + 1, "M >= b+1", M, b)
    order = canonical_order(X)
    Xc = X[order]
    scores = -((Xc - oracle) ** 2).sum(axis=1)
    keep = np.argsort(-scores, kind="stable")[:M - b]
    idx = order[np.sort(keep)]
    return AggregationOutcome(
        ordered_mean(X[idx]), frozenset(int(i) for i in idx), ops=M * d,
        info={"scores": scores[np.argsort(order)]},
    )


def sign_majority(inputs):
    X = as_stack(inputs)
    M, d = X.shape
    votes = (X > 0).sum(axis=0) - (X < 0).sum(axis=0)
    return AggregationOutcome(np.sign(votes).astype(np.float64), ops=M * d)


class Aggregator(BaseEstimator):
    """Base class: ``fit(X)`` screens the rows of ``X`` and stores ``aggregate_``."""

    name = None
    condition = "M >= 1"

    def min_inputs(self):
        return 1

    def check_condition(self, M):
        """Raise :class:`WellPosednessError` if ``M`` inputs are too few."""
        if M < self.min_inputs():
            raise WellPosednessError(self.name, self.condition, M, getattr(self, "b", 0))

    def aggregate(self, X, **kwargs):
        raise NotImplementedError

    def __call__(self, X, **kwargs):
        return self.aggregate(X, **kwargs)

    def fit(self, X, y=None, **kwargs):
        out = self.aggregate(X, **kwargs)
        self.outcome_ = out
        self.aggregate_ = out.aggregate
        self.survivors_ = out.survivors
        self.n_features_in_ = out.aggregate.size
        return self


class Mean(Aggregator):
    name = "mean"

    def aggregate(self, X, **kwargs):
        return agg_mean(X)


class CoordinateMedian(Aggregator):
    name = "median"
    condition = "M >= 2b+1"

    def __init__(self, b=0):
        self.b = b

    def min_inputs(self):
        return 2 * self.b + 1

    def aggregate(self, X, **kwargs):
        return agg_coordinate_median(X)


class TrimmedMean(Aggregator):
    name = "trimmed_mean"
    condition = "M >= 2b+1"

    def __init__(self, b=0):
        self.b = b

    def min_inputs(self):
        return 2 * self.b + 1

    def aggregate(self, X, **kwargs):
        return agg_coordinate_trimmed_mean(X, self.b)


class GeometricMedian(Aggregator):
    name = "geomed"
    condition = "M >= 2b+1"

    def __init__(self, b=0, gamma=1e-6, max_iter=10_000):
        self.b = b
        self.gamma = gamma
        self.max_iter = max_iter

    def min_inputs(self):
        return 2 * self.b + 1

    def aggregate(self, X, **kwargs):
        return agg_geometric_median(X, self.gamma, self.max_iter)


class Krum(Aggregator):
    name = "krum"
    condition = "M >= 2b+3"

    def __init__(self, b=0):
        self.b = b

    def min_inputs(self):
        return 2 * self.b + 3

    def aggregate(self, X, **kwargs):
        return krum_select(X, self.b)


class MultiKrum(Aggregator):
    name = "multi_krum"
    condition = "M >= 2b+m+2"

    def __init__(self, b=0, m=1):
        self.b = b
        self.m = m

    def min_inputs(self):
        return 2 * self.b + self.m + 2

    def aggregate(self, X, **kwargs):
        return multi_krum(X, self.b, self.m)


class Bulyan(Aggregator):
    name = "bulyan"
    condition = "M >= 4b+3"

    def __init__(self, b=0):
        self.b = b

    def min_inputs(self):
        return 4 * self.b + 3

    def aggregate(self, X, **kwargs):
        return bulyan(X, self.b)


class Zeno(Aggregator):
    """Oracle-distance screening; pass ``oracle_gradient=`` to ``fit``/``aggregate``."""

    name = "zeno"
    condition = "M >= b+1"
    needs_oracle = True

    def __init__(self, b=0):
        self.b = b

    def min_inputs(self):
        return self.b + 1

    def aggregate(self, X, oracle_gradient=None, **kwargs):
        return zeno_screen(X, oracle_gradient, self.b)


class SignMajority(Aggregator):
    name = "sign_majority"
    condition = "M >= 2b+1"

    def __init__(self, b=0):
        self.b = b

    def min_inputs(self):
        return 2 * self.b + 1

    def aggregate(self, X, **kwargs):
        return sign_majority(X)


RULES = {
    cls.name: cls
    for cls in (Mean, CoordinateMedian, TrimmedMean, GeometricMedian, Krum,
                MultiKrum, Bulyan, Zeno, SignMajority)
}
RULES["none"] = Mean


def make_rule(name, **params):
    """Build a rule by name, ignoring parameters it does not take (e.g. ``b`` for mean)."""
    try:
        cls = RULES[name]
    except KeyError:
        raise ValueError(f"unknown aggregation rule {name!r}; choose from {sorted(RULES)}") from None
    accepted = cls._get_param_names()
    return cls(**{k: v for k, v in params.items() if k in accepted})
