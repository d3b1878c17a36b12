"""Unit-sphere geometry primitives shared by the whole pipeline.

All vectors are float64 numpy arrays. Embedding sets are immutable
(N, D) row matrices of unit vectors.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import (
    DegeneratePoolingError,
    DimMismatchError,
    EmptyInputError,
    ZeroVectorError,
)

ZERO_NORM_THRESHOLD = 1e-12


class Modality(Enum):
    IMAGE = 0
    TEXT = 1


def normalize(v) -> np.ndarray:
    """Return v scaled to unit L2 norm.

    Vectors already within 1e-12 of unit norm are returned unscaled so
    that normalization is bit-stable under repeated application.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] < 2:
        raise DimMismatchError(f"expected a 1-d vector with D >= 2, got shape {v.shape}")
    norm = float(np.linalg.norm(v))
    if norm <= ZERO_NORM_THRESHOLD:
        raise ZeroVectorError(f"vector norm {norm:g} below threshold {ZERO_NORM_THRESHOLD:g}")
    if abs(norm - 1.0) <= 1e-12:
        return v.copy()
    return v / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit vectors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatchError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


def log_sum_exp(xs) -> float:
    """log(sum(exp(xs))) via max-shift; finite whenever any entry is finite."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise EmptyInputError("log_sum_exp of an empty sequence")
    m = float(np.max(xs))
    if not np.isfinite(m):
        return m
    return m + float(np.log(np.sum(np.exp(xs - m))))


@dataclass(frozen=True)
class EmbeddingSet:
    """N unit vectors in D dimensions for one modality instance.

    ``grid`` is (rows, cols) for image patch sets laid out on a grid,
    or None when no spatial layout applies.
    """

    vectors: np.ndarray
    modality: Modality
    grid: tuple[int, int] | None = None

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise DimMismatchError(f"expected (N, D) matrix, got shape {v.shape}")
        if v.shape[0] < 1:
            raise EmptyInputError("embedding set must contain at least one vector")
        if v.shape[1] < 2:
            raise DimMismatchError("embedding dimension must be >= 2")
        rows = np.stack([normalize(row) for row in v])
        rows.setflags(write=False)
        object.__setattr__(self, "vectors", rows)
        if self.grid is not None:
            r, c = self.grid
            if r * c != rows.shape[0]:
                raise DimMismatchError(
                    f"grid {r}x{c} does not match count {rows.shape[0]}"
                )

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def subset(self, indices) -> "EmbeddingSet":
        """Row subset; drops the grid layout (it no longer applies)."""
        return EmbeddingSet(self.vectors[np.asarray(indices)], self.modality)


def mean_pool(emb: EmbeddingSet) -> np.ndarray:
    """L2-normalized arithmetic mean of the set's vectors."""
    mean = emb.vectors.mean(axis=0)
    try:
        return normalize(mean)
    except ZeroVectorError as exc:
        raise DegeneratePoolingError("embedding set mean cancels to zero") from exc


def derived_seed(*parts) -> int:
    """Stable 63-bit seed derived from string parts (sample id, role, ...)."""
    h = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little") & 0x7FFFFFFFFFFFFFFF
