"""Synthetic vMF data generation and brute-force oracles.

The sampler uses the standard rejection scheme for the mu.x marginal
(Wood 1994) with a uniform direction on the orthogonal subsphere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sphere import EmbeddingSet, Modality, normalize
from .vmf import VmfMixture


def _sample_radial(rng: np.random.Generator, kappa: float, dim: int) -> float:
    """Rejection-sample w = mu . x for a vMF on S^(dim-1)."""
    d = dim - 1
    b = d / (np.sqrt(4.0 * kappa**2 + d**2) + 2.0 * kappa)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + d * np.log(1.0 - x0**2)
    while True:
        z = rng.beta(d / 2.0, d / 2.0)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        if kappa * w + d * np.log(1.0 - x0 * w) - c >= np.log(rng.uniform()):
            return float(w)


def sample_vmf(mu, kappa: float, n: int, seed: int = 0, modality: Modality = Modality.TEXT) -> EmbeddingSet:
    """Draw n unit vectors from vMF(mu, kappa)."""
    mu = normalize(mu)
    dim = mu.shape[0]
    rng = np.random.default_rng(seed)
    out = np.empty((n, dim))
    for i in range(n):
        w = _sample_radial(rng, kappa, dim)
        v = rng.standard_normal(dim)
        v -= mu * np.dot(mu, v)
        v /= np.linalg.norm(v)
        out[i] = w * mu + np.sqrt(max(0.0, 1.0 - w * w)) * v
    return EmbeddingSet(out, modality)


@dataclass(frozen=True)
class Perturbation:
    """Single controlled semantic change applied to a ground-truth mixture."""

    kind: str  # none | rotate | add | drop | swap
    index: int = 0
    index2: int = 0
    angle: float = 0.0
    mu: np.ndarray | None = None
    weight: float = 0.0


@dataclass(frozen=True)
class SynthSpec:
    mixture: VmfMixture
    n_samples: int
    sample_kappa: float | None = None  # defaults to the mixture's kappa
    perturbation: Perturbation = Perturbation("none")
    seed: int = 0


def apply_perturbation(mix: VmfMixture, pert: Perturbation, seed: int = 0) -> VmfMixture:
    """Return the perturbed mixture; 'none' returns the input unchanged."""
    if pert.kind == "none":
        return mix
    mus = mix.mus.copy()
    weights = mix.weights.copy()
    if pert.kind == "rotate":
        if not 0.0 <= pert.angle <= np.pi:
            raise ValueError("rotation angle must lie in [0, pi]")
        mu = mus[pert.index]
        rng = np.random.default_rng(seed)
        t = rng.standard_normal(mix.dim)
        t -= mu * np.dot(mu, t)
        t /= np.linalg.norm(t)
        mus[pert.index] = np.cos(pert.angle) * mu + np.sin(pert.angle) * t
    elif pert.kind == "add":
        mus = np.vstack([mus, normalize(pert.mu)])
        weights = np.append(weights * (1.0 - pert.weight), pert.weight)
    elif pert.kind == "drop":
        keep = [k for k in range(mix.k) if k != pert.index]
        mus = mus[keep]
        weights = weights[keep]
        weights = weights / weights.sum()
    elif pert.kind == "swap":
        mus[[pert.index, pert.index2]] = mus[[pert.index2, pert.index]]
    else:
        raise ValueError(f"unknown perturbation kind {pert.kind!r}")
    return VmfMixture(mus=mus, weights=weights, kappa=mix.kappa)


def sample_mixture(
    mix: VmfMixture,
    n: int,
    seed: int = 0,
    sample_kappa: float | None = None,
    modality: Modality = Modality.TEXT,
) -> tuple[EmbeddingSet, np.ndarray]:
    """Draw n points: pick a component per its weight, then sample vMF.

    Returns the set and the ground-truth component labels.
    """
    rng = np.random.default_rng(seed)
    kappa = mix.kappa if sample_kappa is None else sample_kappa
    labels = rng.choice(mix.k, size=n, p=mix.weights)
    out = np.empty((n, mix.dim))
    for i, k in enumerate(labels):
        mu = mix.mus[k]
        w = _sample_radial(rng, kappa, mix.dim)
        v = rng.standard_normal(mix.dim)
        v -= mu * np.dot(mu, v)
        v /= np.linalg.norm(v)
        out[i] = w * mu + np.sqrt(max(0.0, 1.0 - w * w)) * v
    return EmbeddingSet(out, modality), labels


def planted_pair(
    spec: SynthSpec, n_txt: int | None = None
) -> tuple[EmbeddingSet, EmbeddingSet, EmbeddingSet]:
    """(image, positive caption, negative caption) embedding sets.

    Image and positive caption are independent draws from the ground
    truth; the negative caption comes from the perturbed mixture.
    """
    n_txt = spec.n_samples if n_txt is None else n_txt
    img, _ = sample_mixture(
        spec.mixture, spec.n_samples, seed=spec.seed,
        sample_kappa=spec.sample_kappa, modality=Modality.IMAGE,
    )
    pos, _ = sample_mixture(
        spec.mixture, n_txt, seed=spec.seed + 1, sample_kappa=spec.sample_kappa
    )
    perturbed = apply_perturbation(spec.mixture, spec.perturbation, seed=spec.seed + 2)
    neg, _ = sample_mixture(
        perturbed, n_txt, seed=spec.seed + 3, sample_kappa=spec.sample_kappa
    )
    return img, pos, neg


def brute_force_em_step(data: EmbeddingSet, mix: VmfMixture) -> VmfMixture:
    """One naive EM iteration: explicit double loops, no log-space tricks,
    no reinitialization. Reference oracle for em_fit's update math."""
    n, k = data.n, mix.k
    gamma = np.empty((n, k))
    for i in range(n):
        terms = [
            mix.weights[j] * np.exp(mix.kappa * float(np.dot(mix.mus[j], data.vectors[i])))
            for j in range(k)
        ]
        total = sum(terms)
        for j in range(k):
            gamma[i, j] = terms[j] / total
    mus = np.empty_like(mix.mus)
    weights = np.empty(k)
    for j in range(k):
        s = np.zeros(mix.dim)
        for i in range(n):
            s += gamma[i, j] * data.vectors[i]
        weights[j] = gamma[:, j].sum() / n
        mus[j] = s / np.linalg.norm(s)
    return VmfMixture(mus=mus, weights=weights / weights.sum(), kappa=mix.kappa)
