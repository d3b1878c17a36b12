"""Reference-free image-caption scoring via fixed-kappa von Mises-Fisher
mixtures, Monte-Carlo bi-directional KL, and uncertainty-gated fusion."""

from .divergence import (
    AttributionBundle,
    BetaConfig,
    DivergenceReport,
    attribution_maps,
    beta_of_length,
    bi_kl,
    mask_and_rescore,
    mc_kl,
)
from .scoring import (
    DivergenceMode,
    FusionConfig,
    ScoreRecord,
    global_similarity,
    msd_score,
    rank_agg,
    soft_msd_batch,
)
from .sphere import EmbeddingSet, Modality, cosine, log_sum_exp, mean_pool, normalize
from .vmf import (
    EmConfig,
    EmTrace,
    VmfMixture,
    clustering_ari,
    em_fit,
    kappa_hat,
    responsibilities,
    responsibility_entropy,
    unnorm_log_density,
)

__version__ = "0.1.0"
