"""Learning tasks: synthetic data, per-sample losses and their exact gradients.

Four loss families are supported:

``quadratic``
    ``f(w, z) = ||w - z||^2 / 2`` with ``z ~ N(w_star, sigma^2 I)``. With
    ``noise_sigma=0`` this is the deterministic ``||w - w_star||^2 / 2``.
``linear_regression`` / ``estimation_fig3``
    squared error ``(h.w - y)^2 / 2`` with ``y = h.w_star + eta``.
``softmax_classification``
    multinomial cross-entropy plus ``lam/2 ||w||^2`` in the identifiable
    (reference-class) form: class 0 has logit 0 and the model is the
    ``(class_count - 1) x d`` weight matrix of the other classes, flattened
    row-major.
"""

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .numeric import SeededRng, as_vector

KINDS = ("quadratic", "linear_regression", "softmax_classification", "detection",
         "estimation_fig3")


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    d: int
    noise_sigma: float = 1.0
    lam: float = 1e-2
    w_star: tuple = None
    class_count: int = 10
    separation: float = 2.0
    scale: float = 1.0
    offset: float = 0.0
    means_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; choose from {KINDS}")
        if self.d < 1:
            raise ValueError("d must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.kind == "softmax_classification":
            if self.lam <= 0:
                raise ValueError("softmax classification needs lam > 0 for strong convexity")
            if self.class_count < 2:
                raise ValueError("class_count must be at least 2")
        if self.kind == "estimation_fig3" and self.d != 2:
            raise ValueError("estimation_fig3 fits a line: d must be 2")
        if self.w_star is not None:
            object.__setattr__(self, "w_star", tuple(float(v) for v in self.w_star))
            if len(self.w_star) != self.d:
                raise ValueError(f"w_star has {len(self.w_star)} entries, expected d={self.d}")

    @property
    def model_dim(self):
        if self.kind == "softmax_classification":
            return (self.class_count - 1) * self.d
        return self.d

    @property
    def is_classification(self):
        return self.kind == "softmax_classification"


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    partition: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.partition:
            object.__setattr__(self, "partition", ((0, len(self.y)),))
        covered = sorted(self.partition)
        pos = 0
        for lo, hi in covered:
            if lo != pos or hi < lo:
                raise ValueError("partition must be disjoint and exhaustive")
            pos = hi
        if pos != len(self.y):
            raise ValueError("partition must cover every sample")

    @property
    def n_nodes(self):
        return len(self.partition)

    def node_indices(self, j):
        lo, hi = self.partition[j]
        return np.arange(lo, hi)

    def __len__(self):
        return len(self.y)


def uniform_partition(M, N):
    return tuple((j * N, (j + 1) * N) for j in range(M))


def _w_star(spec):
    if spec.w_star is None:
        raise ValueError(f"task kind {spec.kind!r} needs w_star")
    return np.array(spec.w_star)


def generate_linear_data(spec, M, N, rng):
    """Linear-model data ``y = h.w_star + eta``; ``N`` samples on each of ``M`` nodes."""
    if spec.kind not in ("linear_regression", "estimation_fig3"):
        raise ValueError(f"generate_linear_data cannot build a {spec.kind!r} task")
    w = _w_star(spec)
    if spec.kind == "estimation_fig3":
        x = np.linspace(-1.0, 1.0, M)
        H = np.column_stack([x, np.ones(M)])
        N = 1
    else:
        H = rng.normal(size=(M * N, spec.d))
    y = H @ w + spec.noise_sigma * rng.normal(size=H.shape[0])
    return Dataset(H, y, uniform_partition(M, N))


def generate_quadratic_data(spec, M, N, rng):
    w = _w_star(spec)
    Z = w + spec.noise_sigma * rng.normal(size=(M * N, spec.d))
    return Dataset(Z, np.zeros(M * N), uniform_partition(M, N))


def class_means(spec):
    """Class centres ``offset * 1 + separation * u_c`` for random unit vectors ``u_c``.

    ``offset`` plays the role of a mean pixel intensity shared by all classes.
    The directions are fixed by ``means_seed``.
    """
    r = SeededRng(spec.means_seed).normal(size=(spec.class_count, spec.d))
    norms = np.linalg.norm(r, axis=1, keepdims=True)
    return spec.offset + spec.separation * r / np.where(norms == 0, 1.0, norms)


def generate_classification_data(spec, M, N, rng):
    """Gaussian class clusters, shuffled uniformly at random across ``M`` nodes."""
    if spec.class_count < 2:
        raise ValueError("class_count must be at least 2")
    mu = class_means(spec)
    if np.allclose(mu, mu[0]):
        warnings.warn("all class means coincide; labels carry no signal", RuntimeWarning)
    n = M * N
    y = rng.integers(0, spec.class_count, size=n)
    X = mu[y] + spec.scale * rng.normal(size=(n, spec.d))
    return Dataset(X, y.astype(np.int64), uniform_partition(M, N), {"class_means": mu})


def generate_data(spec, M, N, rng):
    if spec.kind == "quadratic":
        return generate_quadratic_data(spec, M, N, rng)
    if spec.kind in ("linear_regression", "estimation_fig3"):
        return generate_linear_data(spec, M, N, rng)
    if spec.kind == "softmax_classification":
        return generate_classification_data(spec, M, N, rng)
    raise ValueError(f"no sample generator for task kind {spec.kind!r}")


def softmax_logits(spec, w, X):
    """Logits of all classes; the reference class 0 is pinned at zero."""
    W = np.asarray(w).reshape(spec.class_count - 1, spec.d)
    logits = np.zeros((X.shape[0], spec.class_count))
    logits[:, 1:] = X @ W.T
    return logits


def loss_and_grad(spec, w, X, y):
    """Mean loss over the rows ``(X, y)`` and its exact gradient in ``w``."""
    w = np.asarray(w, dtype=np.float64)
    n = X.shape[0]
    if spec.kind == "quadratic":
        diff = w - X
        with np.errstate(over="ignore"):  # huge iterates give an inf loss, not a warning
            return 0.5 * float((diff ** 2).sum()) / n, diff.mean(axis=0)
    if spec.kind in ("linear_regression", "estimation_fig3"):
        r = X @ w - y
        return 0.5 * float(r @ r) / n, X.T @ r / n
    if spec.kind == "softmax_classification":
        logits = softmax_logits(spec, w, X)
        top = logits.max(axis=1, keepdims=True)
        E = np.exp(logits - top)
        Z = E.sum(axis=1)
        lse = np.log(Z) + top[:, 0]
        loss = float((lse - logits[np.arange(n), y]).mean()) + 0.5 * spec.lam * float(w @ w)
        P = E / Z[:, None]
        P[np.arange(n), y] -= 1.0
        grad = (P[:, 1:].T @ X).ravel() / n + spec.lam * w
        return loss, grad
    if spec.kind == "detection":
        raise ValueError("the detection kind has no loss; simulate it with byzres.inference")
    raise ValueError(f"task kind {spec.kind!r} has no loss")


@dataclass(frozen=True)
class Metrics:
    risk: float
    accuracy: float = float("nan")
    distance: float = float("nan")


class Task:
    """A :class:`TaskSpec` bound to its training data."""

    def __init__(self, spec, data):
        self.spec = spec
        self.data = data

    @property
    def model_dim(self):
        return self.spec.model_dim

    @property
    def w_star(self):
        return None if self.spec.w_star is None else np.array(self.spec.w_star)

    def init_model(self):
        return np.zeros(self.model_dim)

    def loss_and_grad(self, w, sample_indices=None):
        if sample_indices is None:
            return loss_and_grad(self.spec, w, self.data.X, self.data.y)
        idx = np.asarray(sample_indices)
        return loss_and_grad(self.spec, w, self.data.X[idx], self.data.y[idx])

    def loss(self, w, sample_indices=None):
        return self.loss_and_grad(w, sample_indices)[0]

    def grad(self, w, sample_indices=None):
        return self.loss_and_grad(w, sample_indices)[1]

    def predict(self, w, X):
        if not self.spec.is_classification:
            return X @ w
        return np.argmax(softmax_logits(self.spec, w, X), axis=1)

    def evaluate(self, w, holdout):
        return evaluate(self, w, holdout)


def evaluate(task, w, holdout):
    """Risk estimate on ``holdout`` plus accuracy and distance to ``w_star`` where defined."""
    w = as_vector(w, "model")
    spec = task.spec if isinstance(task, Task) else task
    if len(holdout) == 0:
        raise ValueError("holdout is empty")
    risk, _ = loss_and_grad(spec, w, holdout.X, holdout.y)
    acc = float("nan")
    if spec.is_classification:
        pred = np.argmax(softmax_logits(spec, w, holdout.X), axis=1)
        acc = float(np.mean(pred == holdout.y))
    dist = float("nan")
    if spec.w_star is not None:
        dist = float(np.linalg.norm(w - np.array(spec.w_star)))
    return Metrics(float(risk), acc, dist)


def solve_erm(task, sample_indices=None, tol=1e-10, max_iter=20_000):
    """Centralized minimizer of the training loss (reference model for distances)."""
    spec = task.spec
    idx = np.arange(len(task.data)) if sample_indices is None else np.asarray(sample_indices)
    X, y = task.data.X[idx], task.data.y[idx]
    if spec.kind == "quadratic":
        return X.mean(axis=0)
    if spec.kind in ("linear_regression", "estimation_fig3"):
        from .numeric import solve_least_squares
        return solve_least_squares(X, y)
    # softmax: gradient descent with step 1/L for L = ||X||^2/(2n) + lam
    L = 0.5 * np.linalg.norm(X, 2) ** 2 / len(y) + spec.lam
    w = np.zeros(spec.model_dim)
    for _ in range(max_iter):
        _, g = loss_and_grad(spec, w, X, y)
        if np.linalg.norm(g) < tol:
            break
        w = w - g / L
    return w


_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path):
    """Read an IDX file (MNIST container format) into a numpy array."""
    with open(path, "rb") as fh:
        head = fh.read(4)
        if len(head) != 4 or head[0] != 0 or head[1] != 0 or head[2] not in _IDX_TYPES:
            raise ValueError(f"{path}: not an IDX file")
        ndim = head[3]
        dims = struct.unpack(f">{ndim}I", fh.read(4 * ndim))
        dtype = np.dtype(_IDX_TYPES[head[2]])
        count = int(np.prod(dims)) if dims else 1
        raw = fh.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise ValueError(f"{path}: truncated payload")
    return np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def load_idx_dataset(images_path, labels_path, M, rng, n_per_node=None):
    """Images and labels from IDX files, scaled to [0, 1] and spread over ``M`` nodes."""
    images = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64)
    X = images.reshape(images.shape[0], -1).astype(np.float64)
    if images.dtype == np.uint8:
        X /= 255.0
    if X.shape[0] != labels.shape[0]:
        raise ValueError("image and label counts differ")
    N = n_per_node or X.shape[0] // M
    order = rng.permutation(X.shape[0])[: M * N]
    return Dataset(X[order], labels[order], uniform_partition(M, N))
