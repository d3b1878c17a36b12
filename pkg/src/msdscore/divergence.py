"""Monte-Carlo KL between vMF mixtures, length-adaptive weighting, and
per-element attribution.

KL(P||Q) is estimated on the observed embeddings themselves: the
samples conceptually come from P, and each contribution is the
difference of unnormalized log-densities. With a shared kappa the
normalization constants cancel exactly, so the unnormalized difference
equals the true log-density difference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    AllMaskedError,
    DimMismatchError,
    GridMismatchError,
    KappaMismatchError,
)
from .sphere import EmbeddingSet
from .vmf import EmConfig, VmfMixture, em_fit, unnorm_log_density_many


@dataclass(frozen=True)
class BetaConfig:
    """Sigmoid schedule for the coverage/support trade-off."""

    l0: float = 20.0
    tau_l: float = 3.0

    def __post_init__(self):
        if self.tau_l <= 0:
            raise ValueError("tau_l must be positive")


@dataclass(frozen=True)
class DivergenceReport:
    kl_img_txt: float  # coverage: KL(P_img || P_txt)
    kl_txt_img: float  # support:  KL(P_txt || P_img)
    beta: float
    weighted: float
    caption_length: int
    patch_contrib: np.ndarray  # (N_img,)
    token_contrib: np.ndarray  # (N_txt,)


def beta_of_length(length: int, cfg: BetaConfig = BetaConfig()) -> float:
    """Length-dependent weight on the coverage direction, in (0, 1).

    Decreasing in length; equals 0.5 at the reference length l0.
    """
    return 1.0 / (1.0 + math.exp((length - cfg.l0) / cfg.tau_l))


def mc_kl(
    p: VmfMixture, q: VmfMixture, samples: EmbeddingSet
) -> tuple[float, np.ndarray]:
    """Monte-Carlo KL(P||Q) on observed samples, with per-sample contributions."""
    if p.kappa != q.kappa:
        raise KappaMismatchError(
            f"mixtures must share kappa: {p.kappa} vs {q.kappa}"
        )
    if p.dim != q.dim or p.dim != samples.dim:
        raise DimMismatchError("mixtures and samples must share dimension")
    contrib = unnorm_log_density_many(p, samples) - unnorm_log_density_many(q, samples)
    return float(contrib.mean()), contrib


def bi_kl(
    p_img: VmfMixture,
    p_txt: VmfMixture,
    img: EmbeddingSet,
    txt: EmbeddingSet,
    length: int | None = None,
    cfg: BetaConfig = BetaConfig(),
) -> DivergenceReport:
    """Length-weighted bi-directional KL with full decomposition.

    length defaults to the token count of the text set.
    """
    if length is None:
        length = txt.n
    coverage, patch_contrib = mc_kl(p_img, p_txt, img)
    support, token_contrib = mc_kl(p_txt, p_img, txt)
    beta = beta_of_length(length, cfg)
    weighted = beta * coverage + (1.0 - beta) * support
    return DivergenceReport(
        kl_img_txt=coverage,
        kl_txt_img=support,
        beta=beta,
        weighted=weighted,
        caption_length=int(length),
        patch_contrib=patch_contrib,
        token_contrib=token_contrib,
    )


@dataclass(frozen=True)
class AttributionBundle:
    """Spatial decomposition of a divergence report.

    coverage_map: patch contributions on the (rows, cols) grid.
    token_scores: raw per-token support/penalty contributions.
    projection_map: token contributions projected to the patch grid via
    per-token softmax over kappa-scaled patch-token cosines.
    """

    coverage_map: np.ndarray  # (rows, cols)
    token_scores: np.ndarray  # (N_txt,)
    projection_map: np.ndarray  # (rows, cols)


def attribution_maps(
    report: DivergenceReport,
    grid: tuple[int, int],
    img: EmbeddingSet,
    txt: EmbeddingSet,
    kappa: float,
) -> AttributionBundle:
    """Reshape patch contributions onto the grid and project token
    contributions back to image space.

    For token j the projection weight on patch p is
    softmax_p(kappa * x_p . y_j); the map sums weight * contribution
    over tokens.
    """
    rows, cols = grid
    n_img = report.patch_contrib.shape[0]
    if rows * cols != n_img:
        raise GridMismatchError(f"grid {rows}x{cols} != N_img {n_img}")
    if img.n != n_img or txt.n != report.token_contrib.shape[0]:
        raise GridMismatchError("embedding sets do not match the report")

    coverage_map = report.patch_contrib.reshape(rows, cols)

    scores = kappa * (img.vectors @ txt.vectors.T)  # (N_img, N_txt)
    scores -= scores.max(axis=0, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=0, keepdims=True)
    projection = (w * report.token_contrib[None, :]).sum(axis=1)

    return AttributionBundle(
        coverage_map=coverage_map,
        token_scores=report.token_contrib.copy(),
        projection_map=projection.reshape(rows, cols),
    )


def select_masked_patches(
    rank_map: np.ndarray,
    fraction: float,
    mode: str,
    n_img: int,
    seed: int = 0,
) -> np.ndarray:
    """Indices of the ceil(fraction * N) patches removed by a masking mode.

    Ties in top/bottom selection break toward the lowest patch index.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    n_mask = math.ceil(fraction * n_img)
    if n_mask >= n_img:
        raise AllMaskedError(f"masking {n_mask} of {n_img} patches leaves nothing")
    idx = np.arange(n_img)
    if mode == "top":
        order = np.lexsort((idx, -rank_map))
    elif mode == "bottom":
        order = np.lexsort((idx, rank_map))
    elif mode == "random":
        order = np.random.default_rng(seed).permutation(n_img)
    else:
        raise ValueError(f"unknown masking mode {mode!r}")
    return np.sort(order[:n_mask])


def mask_and_rescore(
    img: EmbeddingSet,
    txt: EmbeddingSet,
    rank_map: np.ndarray,
    fraction: float,
    mode: str,
    em_img: EmConfig,
    em_txt: EmConfig,
    beta_cfg: BetaConfig = BetaConfig(),
    seed: int = 0,
) -> tuple[float, float]:
    """Bi-KL before and after removing the selected patches.

    Only the image mixture is refit on the surviving patches; the text
    mixture (and hence the caption) is unchanged between the two runs.
    """
    rank_map = np.asarray(rank_map, dtype=np.float64)
    if rank_map.shape[0] != img.n:
        raise DimMismatchError("rank_map length must equal N_img")
    p_img, _ = em_fit(img, em_img)
    p_txt, _ = em_fit(txt, em_txt)
    original = bi_kl(p_img, p_txt, img, txt, cfg=beta_cfg).weighted

    removed = select_masked_patches(rank_map, fraction, mode, img.n, seed=seed)
    keep = np.setdiff1d(np.arange(img.n), removed)
    masked_img = img.subset(keep)
    p_masked, _ = em_fit(masked_img, em_img)
    masked = bi_kl(p_masked, p_txt, masked_img, txt, cfg=beta_cfg).weighted
    return original, masked
