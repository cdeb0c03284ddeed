"""Scikit-learn classifiers backed by the distributed and decentralized engines.

Training rows are shuffled and dealt evenly to ``M`` simulated nodes (the
remainder is dropped); Byzantine nodes are drawn from ``random_state``.
The model is the reference-class softmax used throughout the package.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_is_fitted, validate_data

from .numeric import SeededRng
from .tasks import Dataset, TaskSpec, softmax_logits, uniform_partition


def _split(X, y, M, seed):
    n = X.shape[0] // M
    if n < 1:
        raise ValueError(f"need at least M={M} samples, got {X.shape[0]}")
    order = SeededRng(seed).child(0).permutation(X.shape[0])[: M * n]
    return Dataset(X[order], y[order], uniform_partition(M, n)), n


class _SoftmaxClassifierBase(ClassifierMixin, BaseEstimator):
    def _prepare(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        le = LabelEncoder().fit(y)
        self.classes_ = le.classes_
        if self.classes_.size < 2:
            raise ValueError("need samples of at least two classes")
        seed = 0 if self.random_state is None else int(self.random_state)
        spec = TaskSpec("softmax_classification", d=X.shape[1], lam=self.alpha,
                        class_count=self.classes_.size)
        data, n = _split(X, le.transform(y), self.M, seed)
        return spec, data, n, seed

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return softmax_logits(self.spec_, self.coef_, X)

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


class DistributedSGDClassifier(_SoftmaxClassifierBase):
    """Softmax regression trained by server-side screened SGD.

    ``rule`` names an aggregation rule (``"mean"``, ``"median"``,
    ``"trimmed_mean"``, ``"krum"``, ``"bulyan"``, ...). ``n_byzantine`` nodes
    run ``attack`` instead of computing gradients.
    """

    def __init__(self, rule="trimmed_mean", b=0, M=10, n_byzantine=0,
                 attack="alternating_uniform", alpha=1e-2, learning_rate=0.1,
                 batch_size=None, max_iter=200, random_state=None):
        self.rule = rule
        self.b = b
        self.M = M
        self.n_byzantine = n_byzantine
        self.attack = attack
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y):
        from .distributed import DistributedConfig, random_byzantine_ids, run_distributed_sgd
        spec, data, n, seed = self._prepare(X, y)
        byz = random_byzantine_ids(self.M, self.n_byzantine, seed) if self.n_byzantine else ()
        cfg = DistributedConfig(
            task=spec, M=self.M, b=self.b, byz_ids=byz, rule=self.rule,
            attack=self.attack if byz else None, N=n, batch_size=self.batch_size,
            rho0=self.learning_rate, iterations=self.max_iter, seed=seed,
        )
        holdout = Dataset(data.X, data.y)
        self.trace_ = run_distributed_sgd(cfg, data=data, holdout=holdout)
        self.spec_ = spec
        self.coef_ = self.trace_.meta["final_model"]
        self.byzantine_ids_ = byz
        return self


class DecentralizedClassifier(_SoftmaxClassifierBase):
    """Softmax regression trained without a server over a random graph.

    Each node keeps its own model; ``coef_`` is the average of the honest
    nodes' final models and ``node_coefs_`` holds them individually.
    """

    def __init__(self, algorithm="bridge", b=0, M=10, p=0.6, min_in_degree=0,
                 n_byzantine=0, attack="coordinate_uniform", alpha=1e-2,
                 learning_rate=0.1, tau=100.0, max_iter=200, random_state=None):
        self.algorithm = algorithm
        self.b = b
        self.M = M
        self.p = p
        self.min_in_degree = min_in_degree
        self.n_byzantine = n_byzantine
        self.attack = attack
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.tau = tau
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y):
        from .decentralized import DecentralizedConfig, run_decentralized
        from .network import random_graph
        spec, data, n, seed = self._prepare(X, y)
        rng = SeededRng(seed)
        graph = random_graph(self.M, self.p, rng.child(9), min_in_degree=self.min_in_degree)
        byz = tuple(sorted(int(i) for i in
                           rng.child(6).choice(self.M, size=self.n_byzantine, replace=False)))
        cfg = DecentralizedConfig(
            graph=graph, task=spec, algorithm=self.algorithm, b=self.b, byz_ids=byz,
            attack=self.attack if byz else None, N=n, rho0=self.learning_rate, tau=self.tau,
            iterations=self.max_iter, seed=seed, eval_every=self.max_iter,
        )
        self.trace_ = run_decentralized(cfg, data=data, holdout=Dataset(data.X, data.y))
        self.spec_ = spec
        self.node_coefs_ = self.trace_.meta["final_models"]
        self.coef_ = self.node_coefs_.mean(axis=0)
        self.graph_ = graph
        self.byzantine_ids_ = byz
        return self
