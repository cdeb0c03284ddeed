"""Numeric kernel: finite float64 vectors, least squares, seeded RNG, gradient checks.

Model vectors are plain 1-D ``numpy.float64`` arrays. The helpers here only add
the validation the rest of the package relies on (matching dimensions, no
NaN/Inf ever leaking out of an arithmetic step).
"""

import numpy as np

from .exceptions import DimensionError, NonFiniteError, RankDeficientError

_MASK64 = (1 << 64) - 1


def as_vector(x, name="vector"):
    """Return ``x`` as a finite 1-D float64 array (copying only when needed)."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {v.shape}")
    if v.size == 0:
        raise DimensionError(f"{name} must have positive dimension")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return v


def as_matrix(a, name="matrix"):
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return m


def as_stack(vectors, name="inputs"):
    """Stack a collection of equal-length vectors into an ``(M, d)`` array."""
    if isinstance(vectors, np.ndarray):
        arr = np.asarray(vectors, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
    else:
        vectors = list(vectors)
        if not vectors:
            raise DimensionError(f"{name} is empty")
        rows = [np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in vectors]
        dims = {r.shape for r in rows}
        if len(dims) != 1:
            raise DimensionError(f"{name} have mismatched dimensions: {sorted(dims)}")
        arr = np.stack(rows)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DimensionError(f"{name} is empty")
    if arr.shape[1] == 0:
        raise DimensionError(f"{name} have zero dimension")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contain non-finite entries")
    return arr


def _quiet():
    return np.errstate(over="ignore", invalid="ignore")


def _checked(v, op):
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"{op} produced a non-finite result")
    return v


def _same_dim(a, b, op):
    a = as_vector(a, "left operand")
    b = as_vector(b, "right operand")
    if a.shape != b.shape:
        raise DimensionError(f"{op}: dimension mismatch {a.size} vs {b.size}")
    return a, b


def vec_add(a, b):
    a, b = _same_dim(a, b, "add")
    with _quiet():
        v = a + b
    return _checked(v, "add")


def vec_sub(a, b):
    a, b = _same_dim(a, b, "subtract")
    with _quiet():
        v = a - b
    return _checked(v, "subtract")


def vec_scale(a, c):
    a = as_vector(a)
    with _quiet():
        v = a * float(c)
    return _checked(v, "scale")


def vec_dot(a, b):
    a, b = _same_dim(a, b, "dot")
    with _quiet():
        v = np.dot(a, b)
    return float(_checked(v, "dot"))


def l2_norm(a):
    a = as_vector(a)
    return float(_checked(np.linalg.norm(a), "l2_norm"))


def solve_least_squares(H, y, rank_tol=1e-10):
    """Least-squares solution of ``H w ≈ y`` through a Householder QR factorization.

    The numerical rank is read off the diagonal of R relative to its largest
    entry; anything below ``rank_tol`` counts as deficient.
    """
    H = as_matrix(H, "H")
    y = as_vector(y, "y")
    rows, cols = H.shape
    if y.size != rows:
        raise DimensionError(f"y has {y.size} entries but H has {rows} rows")
    if rows < cols:
        raise RankDeficientError(rows, cols)
    Q, R = np.linalg.qr(H, mode="reduced")
    diag = np.abs(np.diag(R))
    scale = diag.max()
    rank = int(np.sum(diag > rank_tol * scale)) if scale > 0 else 0
    if rank < cols:
        raise RankDeficientError(rank, cols)
    # back substitution on the upper-triangular factor
    rhs = Q.T @ y
    w = np.zeros(cols)
    for i in range(cols - 1, -1, -1):
        w[i] = (rhs[i] - R[i, i + 1:] @ w[i + 1:]) / R[i, i]
    return _checked(w, "solve_least_squares")


def finite_difference_check(loss, grad, w, eps=1e-5):
    """Max over coordinates of ``|central difference - analytic| / (|analytic| + eps)``."""
    if not 0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    w = as_vector(w, "w")
    g = np.asarray(grad(w), dtype=np.float64)
    worst = 0.0
    for k in range(w.size):
        step = np.zeros_like(w)
        step[k] = eps
        hi = float(loss(w + step))
        lo = float(loss(w - step))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFiniteError(f"loss is non-finite at probe point along coordinate {k}")
        numeric = (hi - lo) / (2 * eps)
        worst = max(worst, abs(numeric - g[k]) / (abs(g[k]) + eps))
    return worst


def splitmix64(x):
    """One SplitMix64 output for the 64-bit input ``x``."""
    z = (int(x) + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed, index):
    """Seed for trial ``index``: ``seed XOR splitmix64(index)``."""
    return (int(seed) & _MASK64) ^ splitmix64(index)


class SeededRng:
    """Reproducible random stream.

    Backed by numpy's PCG64 bit generator, seeded through ``SeedSequence`` with
    the 64-bit ``seed`` as entropy and ``keys`` as spawn key. Both algorithms
    are fixed by numpy's stream-compatibility policy, so equal ``(seed, keys)``
    give bit-identical draws on every platform.
    """

    def __init__(self, seed, keys=()):
        seed = int(seed)
        if not 0 <= seed <= _MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.keys = tuple(int(k) for k in keys)
        ss = np.random.SeedSequence(entropy=seed, spawn_key=self.keys)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys):
        """Independent stream keyed by ``keys`` (e.g. a node id or trial index)."""
        return SeededRng(self.seed, self.keys + tuple(keys))

    @property
    def generator(self):
        return self._gen

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, lo, hi, size=None):
        return self._gen.uniform(lo, hi, size)

    def open_uniform(self, lo, hi, size=None):
        """Uniform draws on the open interval ``(lo, hi)``."""
        u = self._gen.random(size)
        u = np.where(u == 0.0, 0.5, u)
        return lo + (hi - lo) * u

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, a, size=None, replace=True):
        return self._gen.choice(a, size=size, replace=replace)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, keys={self.keys})"
