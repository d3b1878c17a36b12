"""Evaluation-protocol statistics: pairwise accuracy, tie-aware
agreement, rank correlations, bucketing, cluster bootstrap, McNemar."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.stats import rankdata

from .exceptions import (
    DegenerateRanksError,
    EmptyEvalError,
    LengthMismatchError,
    TooFewClustersError,
)
from .scoring import ScoreRecord

EPS_TIE_DEFAULT = 1e-4

# ScoreRecord fields where a larger value means a better caption, and
# divergence fields where a smaller value does. Selectors always return
# "higher is better".
_HIGHER_BETTER = {"g", "msd", "soft_msd"}
_LOWER_BETTER = {"d", "kl_img_txt", "kl_txt_img", "bikl"}


def score_selector(name: str):
    """Selector mapping a ScoreRecord to a higher-is-better score."""
    if name in _HIGHER_BETTER:
        return lambda rec: getattr(rec, name)
    if name in _LOWER_BETTER:
        return lambda rec: -getattr(rec, name)
    raise KeyError(f"unknown score field {name!r}")


@dataclass(frozen=True)
class PairwiseInstance:
    image_id: str
    pos: ScoreRecord
    neg: ScoreRecord
    meta: dict = field(default_factory=dict)


class HumanLabel(Enum):
    FIRST = "first"
    SECOND = "second"
    TIE = "tie"


@dataclass(frozen=True)
class PreferenceInstance:
    image_id: str
    score_1: float
    score_2: float
    human_label: HumanLabel
    difficulty_level: int | None = None


@dataclass
class EvalResult:
    metric_name: str
    n: int
    point_estimate: float
    ci_low: float | None = None
    ci_high: float | None = None
    p_value: float | None = None
    per_bucket: list[tuple[str, int, float]] = field(default_factory=list)


def pairwise_accuracy(instances: list[PairwiseInstance], field_name: str = "soft_msd") -> EvalResult:
    """Fraction of instances where the positive strictly beats the negative."""
    if not instances:
        raise EmptyEvalError("no instances")
    sel = score_selector(field_name)
    wins = sum(1 for inst in instances if sel(inst.pos) > sel(inst.neg))
    return EvalResult(
        metric_name=f"pairwise_accuracy[{field_name}]",
        n=len(instances),
        point_estimate=wins / len(instances),
    )


def predicted_label(delta: float, eps_tie: float) -> HumanLabel:
    if abs(delta) <= eps_tie:
        return HumanLabel.TIE
    return HumanLabel.FIRST if delta > 0 else HumanLabel.SECOND


def agreement(
    instances: list[PreferenceInstance], eps_tie: float = EPS_TIE_DEFAULT
) -> EvalResult:
    """Tie-aware caption-level agreement with human preference labels."""
    if not instances:
        raise EmptyEvalError("no instances")
    agree_flags = [
        predicted_label(inst.score_1 - inst.score_2, eps_tie) == inst.human_label
        for inst in instances
    ]
    result = EvalResult(
        metric_name="agreement",
        n=len(instances),
        point_estimate=sum(agree_flags) / len(instances),
    )
    levels = sorted(
        {inst.difficulty_level for inst in instances if inst.difficulty_level is not None}
    )
    for level in levels:
        flags = [
            f for f, inst in zip(agree_flags, instances) if inst.difficulty_level == level
        ]
        result.per_bucket.append((f"level{level}", len(flags), sum(flags) / len(flags)))
    return result


def spearman_rho(scores_a, scores_b) -> float:
    """Spearman correlation with average ranks under ties."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise LengthMismatchError("need two equal-length score lists, M >= 2")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise DegenerateRanksError("constant score list")
    ra = rankdata(a)
    rb = rankdata(b)
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    return float(np.dot(ra, rb) / math.sqrt(np.dot(ra, ra) * np.dot(rb, rb)))


def kendall_tau(scores_a, scores_b) -> float:
    """Kendall tau-a: (concordant - discordant) / C(M, 2); ties count for neither."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise LengthMismatchError("need two equal-length score lists, M >= 2")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise DegenerateRanksError("constant score list")
    m = a.size
    nc = nd = 0
    for i in range(m):
        for j in range(i + 1, m):
            s = (a[i] - a[j]) * (b[i] - b[j])
            if s > 0:
                nc += 1
            elif s < 0:
                nd += 1
    return (nc - nd) / math.comb(m, 2)


def _quantile_chunks(order: np.ndarray, n_bins: int) -> list[np.ndarray]:
    """Split sorted indices into n_bins near-equal chunks (lower bins first)."""
    return [chunk for chunk in np.array_split(order, n_bins) if chunk.size]


def margin_buckets(
    instances: list[PairwiseInstance],
    n_bins: int,
    fields: tuple[str, ...] = ("g", "soft_msd"),
) -> dict[str, EvalResult]:
    """Per-quantile-bin accuracy over the cosine margin |g+ - g-|.

    Also reports mean margin and mean uncertainty per bin. Boundary ties
    fall into the lower bin via a stable sort on (margin, image_id, index).
    """
    if not instances:
        raise EmptyEvalError("no instances")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    margins = np.array([abs(inst.pos.g - inst.neg.g) for inst in instances])
    keys = sorted(
        range(len(instances)),
        key=lambda i: (margins[i], instances[i].image_id, i),
    )
    chunks = _quantile_chunks(np.asarray(keys), n_bins)

    results: dict[str, EvalResult] = {}
    for name in fields:
        sel = score_selector(name)
        res = EvalResult(
            metric_name=f"margin_buckets[{name}]",
            n=len(instances),
            point_estimate=pairwise_accuracy(instances, name).point_estimate,
        )
        for bi, chunk in enumerate(chunks):
            subset = [instances[i] for i in chunk]
            acc = sum(1 for inst in subset if sel(inst.pos) > sel(inst.neg)) / len(subset)
            res.per_bucket.append((f"bin{bi}", len(subset), acc))
        results[name] = res

    for label, value_of in (
        ("mean_abs_dcos", lambda i: margins[i]),
        ("mean_u", lambda i: instances[i].pos.u),
    ):
        res = EvalResult(
            metric_name=label,
            n=len(instances),
            point_estimate=float(np.mean([value_of(i) for i in range(len(instances))])),
        )
        for bi, chunk in enumerate(chunks):
            res.per_bucket.append(
                (f"bin{bi}", len(chunk), float(np.mean([value_of(i) for i in chunk])))
            )
        results[label] = res
    return results


def length_buckets(
    instances: list[PairwiseInstance],
    edges: list[int],
    fields: tuple[str, ...] = ("kl_img_txt", "kl_txt_img", "bikl", "soft_msd"),
) -> dict[str, EvalResult]:
    """Per-caption-length-bucket accuracy; bucket i covers [edges[i], edges[i+1]),
    the last bucket is unbounded above. Lengths below edges[0] are excluded."""
    if not instances:
        raise EmptyEvalError("no instances")
    if any(b <= a for a, b in zip(edges, edges[1:])) or not edges:
        raise ValueError("edges must be nonempty and strictly increasing")
    lengths = np.array([inst.pos.caption_length for inst in instances])
    bounds = list(edges) + [math.inf]
    results: dict[str, EvalResult] = {}
    for name in fields:
        sel = score_selector(name)
        res = EvalResult(
            metric_name=f"length_buckets[{name}]",
            n=len(instances),
            point_estimate=pairwise_accuracy(instances, name).point_estimate,
        )
        for bi in range(len(edges)):
            lo, hi = bounds[bi], bounds[bi + 1]
            idx = [i for i, ln in enumerate(lengths) if lo <= ln < hi]
            if not idx:
                res.per_bucket.append((f"[{lo},{hi})", 0, math.nan))
                continue
            subset = [instances[i] for i in idx]
            acc = sum(1 for inst in subset if sel(inst.pos) > sel(inst.neg)) / len(subset)
            mean_len = float(np.mean([lengths[i] for i in idx]))
            res.per_bucket.append((f"[{lo},{hi}) mean={mean_len:.1f}", len(idx), acc))
        results[name] = res
    return results


def cluster_bootstrap_ci(
    instances: list,
    statistic,
    b: int = 1000,
    seed: int = 0,
    image_id_of=lambda inst: inst.image_id,
) -> tuple[float, float]:
    """Percentile 95% CI via image-level cluster bootstrap.

    All instances of a resampled image enter together; resamples draw
    image ids with replacement.
    """
    if b < 100:
        raise ValueError("b must be >= 100")
    clusters: dict[str, list] = {}
    for inst in instances:
        clusters.setdefault(image_id_of(inst), []).append(inst)
    ids = sorted(clusters)
    if len(ids) < 2:
        raise TooFewClustersError("cluster bootstrap needs >= 2 distinct image ids")
    rng = np.random.default_rng(seed)
    stats = np.empty(b)
    for r in range(b):
        draw = rng.integers(0, len(ids), size=len(ids))
        resample = [inst for j in draw for inst in clusters[ids[j]]]
        stats[r] = statistic(resample)
    lo, hi = np.percentile(stats, [2.5, 97.5])
    return float(lo), float(hi)


def mcnemar_test(paired_correctness: list[tuple[bool, bool]]) -> float:
    """Two-sided McNemar p-value with Edwards continuity correction.

    chi2 = (|b - c| - 1)^2 / (b + c) on the discordant counts; p = 1
    when there is no discordance.
    """
    b = sum(1 for x, y in paired_correctness if x and not y)
    c = sum(1 for x, y in paired_correctness if y and not x)
    if b + c == 0:
        return 1.0
    chi2 = (abs(b - c) - 1.0) ** 2 / (b + c)
    # survival function of chi-square with 1 dof
    return float(math.erfc(math.sqrt(chi2 / 2.0)))
