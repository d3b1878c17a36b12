"""Bit-exact file formats: MSDE embedding containers, JSONL manifests,
and score files with config fingerprints.

Container layout (all little-endian):
  bytes 0-3   magic "MSDE"
  bytes 4-7   uint32 version (=1)
  bytes 8-11  uint32 dim
  bytes 12-15 uint32 count
  byte  16    uint8 modality (0=image, 1=text)
  bytes 17-18 uint16 grid_rows
  bytes 19-20 uint16 grid_cols
  payload     count*dim float32, row-major
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .exceptions import (
    BadHeaderError,
    BadMagicError,
    DegenerateRowError,
    DuplicateIdError,
    MissingPathError,
    MixedFingerprintError,
    ParseError,
    TruncatedPayloadError,
    VersionUnsupportedError,
)
from .scoring import FusionConfig, ScoreRecord
from .sphere import EmbeddingSet, Modality
from .vmf import EmConfig

MAGIC = b"MSDE"
VERSION = 1
_HEADER = struct.Struct("<4sIIIBHH")


def write_container(emb: EmbeddingSet, path) -> None:
    """Write an embedding set as an MSDE container (float32 payload)."""
    rows, cols = emb.grid if emb.grid is not None else (0, 0)
    header = _HEADER.pack(
        MAGIC, VERSION, emb.dim, emb.n, emb.modality.value, rows, cols
    )
    payload = emb.vectors.astype("<f4").tobytes()
    _atomic_write_bytes(path, header + payload)


def read_container(path) -> EmbeddingSet:
    """Read an MSDE container; rows are promoted to float64 and renormalized."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(
            f"{path}: file shorter than header", byte_offset=len(raw)
        )
    magic, version, dim, count, modality, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionUnsupportedError(f"{path}: unsupported version {version}")
    if dim < 2 or count < 1:
        raise BadHeaderError(f"{path}: invalid dim={dim} count={count}")
    if rows * cols != 0 and rows * cols != count:
        raise BadHeaderError(f"{path}: grid {rows}x{cols} != count {count}")
    expected = _HEADER.size + 4 * count * dim
    if len(raw) != expected:
        raise TruncatedPayloadError(
            f"{path}: expected {expected} bytes, got {len(raw)}",
            byte_offset=len(raw),
        )
    payload = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    mat = payload.reshape(count, dim).astype(np.float64)
    norms = np.linalg.norm(mat, axis=1)
    bad = np.flatnonzero(norms < 1e-6)
    if bad.size:
        raise DegenerateRowError(f"{path}: row {bad[0]} has norm {norms[bad[0]]:g}")
    grid = (rows, cols) if rows * cols != 0 else None
    return EmbeddingSet(mat, Modality(modality), grid=grid)


_MANIFEST_KNOWN = {"id", "image_container", "candidates", "human", "meta"}
_CAND_KNOWN = {"cand_id", "text_container", "n_tokens", "raw_text"}


def read_manifest(path, check_paths: bool = True) -> list[dict]:
    """Parse a JSONL manifest; unknown fields are preserved under meta.

    Referenced container paths resolve relative to the manifest location
    and are checked for existence when check_paths is set.
    """
    base = Path(path).parent
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}", line=lineno) from exc
            if not isinstance(obj, dict) or "id" not in obj:
                raise ParseError(f"{path}:{lineno}: record missing 'id'", line=lineno)
            rid = obj["id"]
            if rid in seen:
                raise DuplicateIdError(f"{path}:{lineno}: duplicate id {rid!r}", line=lineno)
            seen.add(rid)
            meta = dict(obj.get("meta", {}))
            for key in set(obj) - _MANIFEST_KNOWN:
                meta[key] = obj[key]
            record = {
                "id": rid,
                "image_container": str(base / obj["image_container"]),
                "candidates": [],
                "human": obj.get("human"),
                "meta": meta,
            }
            for cand in obj.get("candidates", []):
                cand_rec = {
                    "cand_id": cand["cand_id"],
                    "text_container": str(base / cand["text_container"]),
                    "n_tokens": cand.get("n_tokens"),
                    "raw_text": cand.get("raw_text"),
                }
                for key in set(cand) - _CAND_KNOWN:
                    cand_rec[key] = cand[key]
                record["candidates"].append(cand_rec)
            if check_paths:
                paths = [record["image_container"]] + [
                    c["text_container"] for c in record["candidates"]
                ]
                for p in paths:
                    if not os.path.exists(p):
                        raise MissingPathError(f"{path}:{lineno}: missing {p}", line=lineno)
            records.append(record)
    return records


def config_fingerprint(
    fusion: FusionConfig, em_img: EmConfig, em_txt: EmConfig
) -> str:
    """Stable hash over a canonical serialization of all hyperparameters."""
    blob = json.dumps(
        {
            "alpha": fusion.alpha,
            "xi": fusion.xi,
            "l0": fusion.beta_cfg.l0,
            "tau_l": fusion.beta_cfg.tau_l,
            "divergence_mode": fusion.divergence_mode.value,
            "em_img": dataclasses.asdict(em_img),
            "em_txt": dataclasses.asdict(em_txt),
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def score_record_to_json(image_id: str, rec: ScoreRecord, fingerprint: str) -> str:
    obj = {
        "image_id": image_id,
        "candidate_id": rec.candidate_id,
        "g": rec.g,
        "d": rec.d,
        "msd": rec.msd,
        "soft_msd": rec.soft_msd,
        "u": rec.u,
        "p": rec.p,
        "kl_img_txt": rec.kl_img_txt,
        "kl_txt_img": rec.kl_txt_img,
        "bikl": rec.bikl,
        "beta": rec.beta,
        "caption_length": rec.caption_length,
        "fingerprint": fingerprint,
    }
    return json.dumps(obj, sort_keys=True)


def write_scores(path, rows: list[tuple[str, ScoreRecord]], fingerprint: str) -> None:
    """Write (image_id, record) rows as a JSONL score file."""
    text = "".join(
        score_record_to_json(image_id, rec, fingerprint) + "\n"
        for image_id, rec in rows
    )
    _atomic_write_bytes(path, text.encode("utf-8"))


def read_scores(path) -> list[dict]:
    """Parse a score file; rejects mixed config fingerprints."""
    records = []
    fingerprint = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}", line=lineno) from exc
            fp = obj.get("fingerprint")
            if fingerprint is None:
                fingerprint = fp
            elif fp != fingerprint:
                raise MixedFingerprintError(
                    f"{path}:{lineno}: fingerprint {fp!r} != {fingerprint!r}"
                )
            records.append(obj)
    return records


def score_record_from_json(obj: dict) -> ScoreRecord:
    return ScoreRecord(
        candidate_id=obj["candidate_id"],
        g=obj["g"],
        d=obj["d"],
        msd=obj["msd"],
        soft_msd=obj["soft_msd"],
        u=obj["u"],
        p=obj["p"],
        kl_img_txt=obj.get("kl_img_txt", float("nan")),
        kl_txt_img=obj.get("kl_txt_img", float("nan")),
        bikl=obj.get("bikl", float("nan")),
        beta=obj.get("beta", float("nan")),
        caption_length=obj.get("caption_length", 0),
    )


def write_csv_grid(path, grid: np.ndarray) -> None:
    """Write a 2-d map as plain CSV with repr-precision floats."""
    lines = [",".join(repr(float(v)) for v in row) for row in np.atleast_2d(grid)]
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def write_pgm(path, grid: np.ndarray, sidecar_path=None) -> None:
    """Write a min-max normalized 8-bit binary PGM; the normalization
    mapping goes into a JSON sidecar."""
    grid = np.asarray(grid, dtype=np.float64)
    lo, hi = float(grid.min()), float(grid.max())
    span = hi - lo if hi > lo else 1.0
    pixels = np.round((grid - lo) / span * 255.0).astype(np.uint8)
    header = f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode("ascii")
    _atomic_write_bytes(path, header + pixels.tobytes())
    if sidecar_path is not None:
        sidecar = {"min": lo, "max": hi, "levels": 256}
        _atomic_write_bytes(
            sidecar_path, (json.dumps(sidecar, sort_keys=True) + "\n").encode()
        )


def _atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temp file in the target directory, then atomically rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
