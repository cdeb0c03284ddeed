"""Distributed detection with a fusion centre, and least-squares estimation breakdown.

Detection model: under hypothesis ``q`` a node observes ``mu_q + noise`` in
``R^Q`` with ``mu_q = (separation / sqrt 2) e_q``, so any two means are
``separation`` apart and the local MAP decision (equal priors) is the argmax
of the averaged observation. Byzantine nodes report a wrong label: the flip
for ``Q = 2``, a uniformly chosen one of the other ``Q - 1`` labels otherwise.
The server takes the plurality with uniform tie-breaking.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import binom, norm

from .numeric import SeededRng, derive_seed, solve_least_squares
from .trace import MetricsTrace

FRAMEWORKS = ("bayesian_majority", "neyman_pearson_majority")
ROUNDINGS = ("floor", "randomized")
DETECTION_COLUMNS = ("alpha", "error", "stderr", "trials", "seed")


@dataclass(frozen=True)
class DetectionConfig:
    """Monte-Carlo detection setup.

    ``rounding="floor"`` uses ``floor(alpha*M)`` Byzantine nodes. With
    ``"randomized"`` each trial adds one more node with probability
    ``frac(alpha*M)``, so the expected count is exactly ``alpha*M``.
    ``pfa`` is the local false-alarm rate of the Neyman-Pearson framework
    (binary only).
    """

    Q: int = 2
    M: int = 25
    alpha: float = 0.0
    samples_per_node: int = 1
    separation: float = 2.0
    trials: int = 10_000
    framework: str = "bayesian_majority"
    rounding: str = "randomized"
    pfa: float = 0.1

    def __post_init__(self):
        if self.Q < 2:
            raise ValueError("Q must be at least 2")
        if self.M < 1 or self.samples_per_node < 1 or self.trials < 1:
            raise ValueError("M, samples_per_node and trials must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.separation <= 0:
            raise ValueError("separation must be positive")
        if self.framework not in FRAMEWORKS:
            raise ValueError(f"framework must be one of {FRAMEWORKS}")
        if self.rounding not in ROUNDINGS:
            raise ValueError(f"rounding must be one of {ROUNDINGS}")
        if self.framework == "neyman_pearson_majority":
            if self.Q != 2:
                raise ValueError("the Neyman-Pearson framework is binary")
            if not 0.0 < self.pfa < 1.0:
                raise ValueError("pfa must lie in (0, 1)")

    @property
    def byzantine_count(self):
        """``(n, p)``: ``n`` Byzantine nodes, plus one more with probability ``p``."""
        x = self.alpha * self.M
        n = int(np.floor(x + 1e-12))
        frac = 0.0 if self.rounding == "floor" else max(0.0, x - n)
        if frac < 1e-12:
            frac = 0.0
        return n, frac


@dataclass(frozen=True)
class DetectionResult:
    alpha: float
    error: float
    stderr: float
    trials: int


def _local_decisions(cfg, h, rng):
    """Local decisions of all ``M`` nodes for true hypothesis ``h``."""
    M, Q = cfg.M, cfg.Q
    noise = rng.normal(size=(M, Q)) / np.sqrt(cfg.samples_per_node)
    if cfg.framework == "neyman_pearson_majority":
        # LLR of H1 vs H0 is monotone in y1 - y0; pick the threshold for pfa
        s = cfg.separation
        stat = noise[:, 1] - noise[:, 0] + (s if h == 1 else -s) / np.sqrt(2.0)
        sd = np.sqrt(2.0 / cfg.samples_per_node)
        thr = -s / np.sqrt(2.0) + sd * norm.isf(cfg.pfa)
        return (stat > thr).astype(np.int64)
    obs = noise
    obs[:, h] += cfg.separation / np.sqrt(2.0)
    return np.argmax(obs, axis=1)


def _fuse(reports, Q, rng):
    counts = np.bincount(reports, minlength=Q)
    best = np.flatnonzero(counts == counts.max())
    return int(best[0]) if best.size == 1 else int(best[rng.integers(0, best.size)])


def detection_trial(cfg, rng):
    """One trial; returns True when the fused decision is wrong."""
    Q = cfg.Q
    h = int(rng.integers(0, Q))
    dec = _local_decisions(cfg, h, rng)
    n, frac = cfg.byzantine_count
    if frac and rng.random() < frac:
        n += 1
    n = min(n, cfg.M)
    if n:
        if Q == 2:
            dec[:n] = 1 - dec[:n]
        else:
            dec[:n] = (dec[:n] + 1 + rng.integers(0, Q - 1, size=n)) % Q
    return _fuse(dec, Q, rng) != h


def simulate_detection(cfg, seed=0):
    """Monte-Carlo fusion error with its standard error.

    Trial ``i`` draws from its own stream keyed by ``(seed, i)``, so results do
    not depend on evaluation order.
    """
    root = SeededRng(seed)
    wrong = sum(detection_trial(cfg, root.child(i)) for i in range(cfg.trials))
    err = wrong / cfg.trials
    se = float(np.sqrt(max(err * (1.0 - err), 0.0) / cfg.trials))
    return DetectionResult(cfg.alpha, float(err), se, cfg.trials)


def exact_binary_error(M, n_byz, separation, samples_per_node=1):
    """Exact fused error for the binary flipping attack with ``n_byz`` attackers."""
    p = norm.cdf(separation * np.sqrt(samples_per_node) / 2.0)
    h = M - n_byz
    dist = np.convolve(binom.pmf(np.arange(h + 1), h, p),
                       binom.pmf(np.arange(n_byz + 1), n_byz, 1.0 - p))
    k = np.arange(M + 1)
    return float(dist[2 * k < M].sum() + 0.5 * dist[2 * k == M].sum())


def sweep_alpha(cfg, alphas, seed=0):
    """One detection run per ``alpha`` with derived seeds, as a CSV-ready trace."""
    alphas = [float(a) for a in alphas]
    if any(b < a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alphas must be sorted")
    if any(not 0.0 <= a <= 1.0 for a in alphas):
        raise ValueError("alphas must lie in [0, 1]")
    out = MetricsTrace(DETECTION_COLUMNS, meta={"Q": cfg.Q, "M": cfg.M})
    for i, a in enumerate(alphas):
        s = derive_seed(seed, i)
        r = simulate_detection(replace(cfg, alpha=a), s)
        out.append(a, r.error, r.stderr, r.trials, s)
    return out


@dataclass(frozen=True)
class EstimationConfig:
    M: int = 8
    byz_count: int = 2
    outlier_magnitude: float = 50.0
    noise_sigma: float = 1.0
    w_star: tuple = (1.0, 0.5)

    def __post_init__(self):
        if not 0 <= self.byz_count < self.M:
            raise ValueError("byz_count must satisfy 0 <= byz_count < M")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if len(self.w_star) != 2:
            raise ValueError("the line-fit model has two parameters")


@dataclass(frozen=True)
class EstimationResult:
    clean_mse: float
    attacked_mse: float
    w_hat_clean: np.ndarray
    w_hat_attacked: np.ndarray
    byz_ids: tuple


def simulate_estimation_breakdown(cfg, rng):
    """Least-squares line fits before and after Byzantine outlier injection.

    Node ``j`` observes ``y_j = h_j . w_star + eta_j`` with ``h_j = [x_j, 1]``
    on an even grid of ``x`` in ``[-1, 1]``. A Byzantine node reports
    ``h_j . w_star + outlier_magnitude`` instead. MSE is ``|w_hat - w_star|^2``.
    """
    if not isinstance(rng, SeededRng):
        rng = SeededRng(rng)
    w = np.asarray(cfg.w_star, dtype=float)
    x = np.linspace(-1.0, 1.0, cfg.M)
    H = np.column_stack([x, np.ones(cfg.M)])
    y = H @ w + cfg.noise_sigma * rng.normal(size=cfg.M)
    byz = tuple(sorted(int(i) for i in rng.choice(cfg.M, size=cfg.byz_count, replace=False)))
    y_att = y.copy()
    for j in byz:
        y_att[j] = H[j] @ w + cfg.outlier_magnitude
    w_clean = solve_least_squares(H, y)
    w_att = solve_least_squares(H, y_att)
    return EstimationResult(
        float(np.sum((w_clean - w) ** 2)), float(np.sum((w_att - w) ** 2)),
        w_clean, w_att, byz,
    )
