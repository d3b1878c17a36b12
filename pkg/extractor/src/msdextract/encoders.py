"""Pluggable encoders producing patch- and token-level embeddings.

Two encoders are provided:

* ``hashed`` — a deterministic, weight-free fallback. Images are tiled
  on a fixed grid and per-tile color/texture statistics are passed
  through a seeded random projection; text tokens get hash-seeded
  directions. It needs no downloads and keeps the full pipeline
  runnable offline. Its embeddings are *not* semantically aligned
  across modalities, so scores on real data are structural smoke
  checks, not quality judgments.

* ``clip`` — patch/token features from a pretrained CLIP checkpoint
  via ``transformers`` (optional extra). Uses post-projection local
  features from the requested hidden layer, excluding the CLS/global
  token.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np
from PIL import Image

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def tokenize(text: str) -> list[str]:
    """Lowercased word/punctuation split; stable across runs."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class EncodedImage:
    patches: np.ndarray  # (rows*cols, dim), unit rows
    grid: tuple[int, int]


@dataclass(frozen=True)
class EncodedText:
    tokens: np.ndarray  # (n_tokens, dim), unit rows
    n_tokens: int


def _normalize_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ValueError("degenerate zero feature row")
    return mat / norms


class HashedEncoder:
    """Deterministic offline encoder (no pretrained weights)."""

    name = "hashed"

    def __init__(self, dim: int = 64, grid: tuple[int, int] = (7, 7), seed: int = 0,
                 layer: str = "stats"):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        self.grid = grid
        self.seed = seed
        self.layer = layer
        # fixed projection from the 12 tile statistics to the embedding space
        rng = np.random.default_rng(seed)
        self._proj = rng.standard_normal((12, dim)) / np.sqrt(12)

    def _tile_features(self, tile: np.ndarray) -> np.ndarray:
        # tile: (h, w, 3) floats in [0, 1]
        mean = tile.mean(axis=(0, 1))
        std = tile.std(axis=(0, 1))
        gy = np.abs(np.diff(tile, axis=0)).mean(axis=(0, 1))
        gx = np.abs(np.diff(tile, axis=1)).mean(axis=(0, 1))
        return np.concatenate([mean, std, gy, gx])

    def encode_image(self, image: Image.Image) -> EncodedImage:
        rows, cols = self.grid
        img = np.asarray(image.convert("RGB").resize((cols * 16, rows * 16)),
                         dtype=np.float64) / 255.0
        feats = np.empty((rows * cols, 12))
        for r in range(rows):
            for c in range(cols):
                tile = img[r * 16:(r + 1) * 16, c * 16:(c + 1) * 16]
                feats[r * cols + c] = self._tile_features(tile)
        # center per image so embeddings spread over the sphere instead of
        # collapsing onto the all-tiles-similar direction
        feats = feats - feats.mean(axis=0, keepdims=True)
        emb = feats @ self._proj
        emb += 1e-6  # keep rows of flat tiles non-degenerate
        return EncodedImage(patches=_normalize_rows(emb), grid=(rows, cols))

    def _token_vector(self, token: str, position: int) -> np.ndarray:
        digest = hashlib.sha256(
            f"{self.seed}:{token}".encode("utf-8")
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        base = rng.standard_normal(self.dim)
        pos_rng = np.random.default_rng(self.seed * 31 + position)
        return base + 0.05 * pos_rng.standard_normal(self.dim)

    def encode_text(self, text: str) -> EncodedText:
        tokens = tokenize(text)
        if not tokens:
            raise ValueError("caption has no tokens")
        emb = np.stack([self._token_vector(t, i) for i, t in enumerate(tokens)])
        return EncodedText(tokens=_normalize_rows(emb), n_tokens=len(tokens))


class ClipEncoder:
    """Patch/token features from a pretrained CLIP checkpoint.

    ``layer`` selects the vision hidden layer (-1 = last). The paper's
    trained aligner weights are not public, so these off-the-shelf
    features are a documented fidelity gap: containers are format- and
    norm-valid, but absolute benchmark parity is not expected.
    """

    name = "clip"

    def __init__(self, model_name: str = "openai/clip-vit-large-patch14",
                 device: str = "cpu", layer: int = -1, **_):
        import torch  # deferred: optional heavy dependency
        from transformers import CLIPModel, CLIPProcessor

        self._torch = torch
        self.layer = layer
        self.device = device
        self.model = CLIPModel.from_pretrained(model_name).to(device).eval()
        self.processor = CLIPProcessor.from_pretrained(model_name)

    def encode_image(self, image: Image.Image) -> EncodedImage:
        torch = self._torch
        inputs = self.processor(images=image.convert("RGB"), return_tensors="pt")
        with torch.no_grad():
            out = self.model.vision_model(
                pixel_values=inputs["pixel_values"].to(self.device),
                output_hidden_states=True,
            )
            hidden = out.hidden_states[self.layer][0, 1:]  # drop CLS
            hidden = self.model.vision_model.post_layernorm(hidden)
            emb = self.model.visual_projection(hidden).cpu().numpy().astype(np.float64)
        side = int(round(np.sqrt(emb.shape[0])))
        if side * side != emb.shape[0]:
            raise ValueError(f"non-square patch count {emb.shape[0]}")
        return EncodedImage(patches=_normalize_rows(emb), grid=(side, side))

    def encode_text(self, text: str) -> EncodedText:
        torch = self._torch
        inputs = self.processor(text=[text], return_tensors="pt", truncation=True)
        with torch.no_grad():
            out = self.model.text_model(
                input_ids=inputs["input_ids"].to(self.device),
                attention_mask=inputs["attention_mask"].to(self.device),
            )
            emb = self.model.text_projection(out.last_hidden_state[0])
            emb = emb.cpu().numpy().astype(np.float64)
        return EncodedText(tokens=_normalize_rows(emb), n_tokens=emb.shape[0])


ENCODERS = {"hashed": HashedEncoder, "clip": ClipEncoder}


def build_encoder(name: str, **kwargs):
    if name not in ENCODERS:
        raise ValueError(f"unknown encoder {name!r}; choose from {sorted(ENCODERS)}")
    return ENCODERS[name](**kwargs)
