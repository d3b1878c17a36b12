"""Global similarity, MSD fusion, and uncertainty-gated Soft-MSD."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .divergence import BetaConfig, DivergenceReport, bi_kl
from .exceptions import EmptyCandidatesError
from .sphere import EmbeddingSet, cosine, derived_seed, mean_pool
from .vmf import EmConfig, em_fit

log = logging.getLogger(__name__)


class DivergenceMode(Enum):
    BI_KL = "bikl"
    IMG_TO_TXT = "img2txt"
    TXT_TO_IMG = "txt2img"


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.1
    xi: float = 0.2
    beta_cfg: BetaConfig = field(default_factory=BetaConfig)
    divergence_mode: DivergenceMode = DivergenceMode.BI_KL

    def __post_init__(self):
        if self.xi <= 0:
            raise ValueError("xi must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")


@dataclass
class ScoreRecord:
    candidate_id: str
    g: float
    d: float
    msd: float
    soft_msd: float
    u: float
    p: float
    kl_img_txt: float = float("nan")
    kl_txt_img: float = float("nan")
    bikl: float = float("nan")
    beta: float = float("nan")
    caption_length: int = 0


def global_similarity(img: EmbeddingSet, txt: EmbeddingSet) -> float:
    """Cosine of the mean-pooled, renormalized embeddings."""
    return cosine(mean_pool(img), mean_pool(txt))


def _divergence_value(mode: DivergenceMode, report: DivergenceReport) -> float:
    if mode is DivergenceMode.BI_KL:
        return report.weighted
    if mode is DivergenceMode.IMG_TO_TXT:
        return report.kl_img_txt
    return report.kl_txt_img


def _score_one(
    img: EmbeddingSet,
    txt: EmbeddingSet,
    cand_id: str,
    cfg: FusionConfig,
    em_img: EmConfig,
    em_txt: EmConfig,
) -> tuple[ScoreRecord, DivergenceReport]:
    p_img, _ = em_fit(img, em_img)
    p_txt, _ = em_fit(txt, em_txt)
    report = bi_kl(p_img, p_txt, img, txt, cfg=cfg.beta_cfg)
    g = global_similarity(img, txt)
    d = _divergence_value(cfg.divergence_mode, report)
    rec = ScoreRecord(
        candidate_id=cand_id,
        g=g,
        d=d,
        msd=g - cfg.alpha * d,
        soft_msd=g - cfg.alpha * d,  # u = 1 until batch context applies
        u=1.0,
        p=1.0,
        kl_img_txt=report.kl_img_txt,
        kl_txt_img=report.kl_txt_img,
        bikl=report.weighted,
        beta=report.beta,
        caption_length=report.caption_length,
    )
    return rec, report


def msd_score(
    img: EmbeddingSet,
    txt: EmbeddingSet,
    cfg: FusionConfig,
    em_img: EmConfig,
    em_txt: EmConfig,
    candidate_id: str = "",
) -> ScoreRecord:
    """Single-candidate MSD; u = 1 so Soft-MSD coincides with MSD."""
    rec, _ = _score_one(img, txt, candidate_id, cfg, em_img, em_txt)
    return rec


def candidate_uncertainty(gs: np.ndarray, xi: float) -> tuple[np.ndarray, float]:
    """Softmax masses over global scores and the shared uncertainty u.

    u = 1 for a single candidate, else M/(M-1) * (1 - max p). Algebra
    keeps u in [0, 1]; a defensive clamp guards float rounding.
    """
    m = gs.shape[0]
    z = gs / xi
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    if m == 1:
        return p, 1.0
    u = (m / (m - 1.0)) * (1.0 - float(p.max()))
    if u < 0.0 or u > 1.0:
        log.warning("uncertainty u=%r clamped to [0, 1]", u)
        u = min(max(u, 0.0), 1.0)
    return p, u


def soft_msd_batch(
    img: EmbeddingSet,
    candidates: list[tuple[str, EmbeddingSet]],
    cfg: FusionConfig,
    em_img: EmConfig,
    em_txt: EmConfig,
    image_id: str = "",
) -> list[ScoreRecord]:
    """Score a candidate set with a shared uncertainty gate.

    Each mixture fit gets a seed derived from (image_id, candidate id,
    role) so batch order and candidate multiplicity never change scores.
    """
    if not candidates:
        raise EmptyCandidatesError("soft_msd_batch needs at least one candidate")
    em_img_seeded = EmConfig(
        k=em_img.k,
        kappa=em_img.kappa,
        iterations=em_img.iterations,
        reinit_threshold=em_img.reinit_threshold,
        seed=derived_seed(image_id, "img", em_img.seed),
    )
    records = []
    for cand_id, txt in candidates:
        em_txt_seeded = EmConfig(
            k=em_txt.k,
            kappa=em_txt.kappa,
            iterations=em_txt.iterations,
            reinit_threshold=em_txt.reinit_threshold,
            seed=derived_seed(image_id, cand_id, "txt", em_txt.seed),
        )
        rec, _ = _score_one(img, txt, cand_id, cfg, em_img_seeded, em_txt_seeded)
        records.append(rec)

    gs = np.array([r.g for r in records])
    p, u = candidate_uncertainty(gs, cfg.xi)
    for rec, pj in zip(records, p):
        rec.p = float(pj)
        rec.u = u
        if len(records) > 1:
            rec.soft_msd = rec.g - cfg.alpha * u * rec.d
        # M == 1 keeps the msd_score path bit-exactly
    return records


def rank_agg(
    pos: tuple[float, float], neg: tuple[float, float], tau_r: float
) -> bool:
    """Two-stage diagnostic baseline on (cosine, bikl) pairs.

    Decide by cosine when the cosine gap exceeds tau_r, otherwise by
    Bi-KL (lower wins). Exact ties are not preferred (strict '>'/'<').
    """
    cos_pos, bikl_pos = pos
    cos_neg, bikl_neg = neg
    if abs(cos_pos - cos_neg) > tau_r:
        return cos_pos > cos_neg
    return bikl_pos < bikl_neg
