"""Fixed-concentration von Mises-Fisher mixtures with EM fitting.

The concentration kappa is shared by all components and the Bessel
normalization constant is omitted throughout: with a shared kappa it
cancels in both the E-step responsibilities and in every KL difference
the pipeline computes, so all densities here are unnormalized
log-densities log(pi_k) + kappa * mu_k . x.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .exceptions import (
    DimMismatchError,
    EmptyDataError,
    LengthMismatchError,
    NotAProbabilityRowError,
    OutOfRangeError,
)
from .sphere import EmbeddingSet

REINIT_THRESHOLD_DEFAULT = 1e-6


@dataclass(frozen=True)
class VmfMixture:
    """K mean directions with weights, sharing one fixed kappa."""

    mus: np.ndarray  # (K, D), unit rows
    weights: np.ndarray  # (K,), sums to 1
    kappa: float

    def __post_init__(self):
        mus = np.asarray(self.mus, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if mus.ndim != 2 or mus.shape[0] < 1:
            raise DimMismatchError(f"mus must be (K, D), got {mus.shape}")
        if w.shape != (mus.shape[0],):
            raise DimMismatchError("weights length must match component count")
        if np.any(w <= 0):
            raise OutOfRangeError("mixture weights must be positive")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise OutOfRangeError(f"mixture weights sum to {w.sum()!r}, expected 1")
        if self.kappa <= 0:
            raise OutOfRangeError("kappa must be positive")
        norms = np.linalg.norm(mus, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise OutOfRangeError("component means must be unit vectors")
        mus = mus.copy()
        w = w.copy()
        mus.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "mus", mus)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "kappa", float(self.kappa))

    @property
    def k(self) -> int:
        return self.mus.shape[0]

    @property
    def dim(self) -> int:
        return self.mus.shape[1]


@dataclass(frozen=True)
class EmConfig:
    k: int
    kappa: float = 20.0
    iterations: int = 20
    reinit_threshold: float = REINIT_THRESHOLD_DEFAULT
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.iterations < 1:
            raise OutOfRangeError("k and iterations must be >= 1")
        if self.kappa <= 0:
            raise OutOfRangeError("kappa must be positive")
        if self.reinit_threshold < 0:
            raise OutOfRangeError("reinit_threshold must be >= 0")


@dataclass
class EmTrace:
    """Per-iteration diagnostics emitted by em_fit."""

    log_likelihood: list[float] = field(default_factory=list)
    reinit_events: list[tuple[int, int]] = field(default_factory=list)
    responsibilities: np.ndarray | None = None  # final (N, K) row-stochastic


def _log_component_scores(mix: VmfMixture, x: np.ndarray) -> np.ndarray:
    """log(pi_k) + kappa * mu_k . x_i for every (sample, component) pair.

    x is (N, D); returns (N, K).
    """
    if x.shape[-1] != mix.dim:
        raise DimMismatchError(f"dim mismatch: data D={x.shape[-1]}, mixture D={mix.dim}")
    return np.log(mix.weights)[None, :] + mix.kappa * (x @ mix.mus.T)


def unnorm_log_density(mix: VmfMixture, x: np.ndarray) -> float:
    """Unnormalized mixture log-density at one unit vector."""
    x = np.asarray(x, dtype=np.float64)
    scores = _log_component_scores(mix, x[None, :])[0]
    m = float(np.max(scores))
    return m + float(np.log(np.sum(np.exp(scores - m))))


def unnorm_log_density_many(mix: VmfMixture, data: EmbeddingSet) -> np.ndarray:
    """Vectorized unnorm_log_density over an embedding set, (N,)."""
    scores = _log_component_scores(mix, data.vectors)
    m = scores.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(scores - m).sum(axis=1, keepdims=True)))[:, 0]


def responsibilities(mix: VmfMixture, data: EmbeddingSet) -> np.ndarray:
    """E-step: row-stochastic (N, K) posterior over components, in log-space."""
    scores = _log_component_scores(mix, data.vectors)
    scores -= scores.max(axis=1, keepdims=True)
    g = np.exp(scores)
    g /= g.sum(axis=1, keepdims=True)
    return g


def responsibility_entropy(gamma_row) -> float:
    """Shannon entropy (nats) of one responsibility row; 0*log(0) := 0."""
    row = np.asarray(gamma_row, dtype=np.float64)
    if np.any(row < -1e-12) or abs(float(row.sum()) - 1.0) > 1e-9:
        raise NotAProbabilityRowError(f"row sums to {row.sum()!r} or has negatives")
    nz = row[row > 0]
    return float(-(nz * np.log(nz)).sum())


def kappa_hat(r_bar: float, d: int) -> float:
    """Banerjee approximation mapping mean resultant length to concentration."""
    if not 0.0 < r_bar < 1.0:
        raise OutOfRangeError(f"r_bar must lie in (0, 1), got {r_bar!r}")
    return (r_bar * d - r_bar**3) / (1.0 - r_bar**2)


def init_mixture(data: EmbeddingSet, cfg: EmConfig) -> VmfMixture:
    """Draw K data points as initial means with uniform weights.

    Distinct indices when N >= K, with replacement otherwise.
    """
    rng = np.random.default_rng(cfg.seed)
    n = data.n
    replace = n < cfg.k
    idx = rng.choice(n, size=cfg.k, replace=replace)
    mus = data.vectors[idx].copy()
    weights = np.full(cfg.k, 1.0 / cfg.k)
    return VmfMixture(mus=mus, weights=weights, kappa=cfg.kappa)


def _renorm_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    out = mat.copy()
    # rows already unit within 1e-12 pass through bit-unchanged
    scale = np.where(np.abs(norms - 1.0) <= 1e-12, 1.0, norms)
    return out / scale


def em_fit(data: EmbeddingSet, cfg: EmConfig) -> tuple[VmfMixture, EmTrace]:
    """Fit a fixed-kappa vMF mixture with a fixed iteration budget.

    Initialization samples K data points via cfg.seed with uniform
    weights. Each iteration runs one E-step and one M-step; any
    component whose effective count drops below cfg.reinit_threshold is
    reinitialized to a uniformly drawn data point with weight 1/K,
    followed by a global weight renormalization. Exactly
    cfg.iterations iterations run regardless of convergence.
    """
    if data is None or data.n < 1:
        raise EmptyDataError("em_fit requires a nonempty embedding set")
    rng = np.random.default_rng(cfg.seed)
    n, k = data.n, cfg.k
    idx = rng.choice(n, size=k, replace=n < k)
    mus = data.vectors[idx].copy()
    weights = np.full(k, 1.0 / k)
    x = data.vectors

    trace = EmTrace()
    for t in range(cfg.iterations):
        mix = VmfMixture(mus=mus, weights=weights, kappa=cfg.kappa)
        gamma = responsibilities(mix, data)
        nk = gamma.sum(axis=0)

        # M-step
        weights = nk / n
        resultants = gamma.T @ x
        mus = _renorm_rows(resultants)

        # reinitialize starved components
        starved = np.flatnonzero(nk < cfg.reinit_threshold)
        if starved.size:
            for j in starved:
                mus[j] = x[rng.integers(n)]
                weights[j] = 1.0 / k
                trace.reinit_events.append((t, int(j)))
            weights = weights / weights.sum()

        mix = VmfMixture(mus=mus, weights=weights, kappa=cfg.kappa)
        trace.log_likelihood.append(float(unnorm_log_density_many(mix, data).sum()))

    final = VmfMixture(mus=mus, weights=weights, kappa=cfg.kappa)
    trace.responsibilities = responsibilities(final, data)
    return final, trace


def hard_labels(gamma: np.ndarray) -> np.ndarray:
    """Argmax assignment per row; ties broken toward the lowest index."""
    return np.argmax(gamma, axis=1)


def clustering_ari(labels_a, labels_b) -> float:
    """Adjusted Rand Index between two partitions (contingency formula)."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatchError(f"label arrays differ: {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n < 2:
        raise LengthMismatchError("ARI needs at least two samples")
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ua.size, ub.size), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    sum_cells = sum(comb(int(v), 2) for v in table.ravel())
    sum_rows = sum(comb(int(v), 2) for v in table.sum(axis=1))
    sum_cols = sum(comb(int(v), 2) for v in table.sum(axis=0))
    total = comb(n, 2)
    expected = sum_rows * sum_cols / total
    max_index = (sum_rows + sum_cols) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))
