"""Batch extraction jobs: images + captions -> MSDE containers + manifest.

The captions file is JSONL, one record per image:

    {"id": "im1", "image": "photos/im1.png",
     "candidates": [{"cand_id": "a", "text": "a dog on grass"}, ...]}

Image paths resolve relative to the captions file. Per-file failures
are recorded and the job continues; the manifest only lists records
whose image and all candidate texts extracted cleanly.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image

from .container import MODALITY_IMAGE, MODALITY_TEXT, write_container


@dataclass
class ExtractJob:
    captions_file: str
    out_dir: str
    encoder: object
    batch_size: int = 8
    errors: list[tuple[str, str]] = field(default_factory=list)


def _load_records(job: ExtractJob) -> list[dict]:
    base = Path(job.captions_file).parent
    records = []
    with open(job.captions_file, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            obj["_image_path"] = str(base / obj["image"])
            records.append(obj)
    return records


def extract_image(job: ExtractJob, record: dict) -> str | None:
    """Encode one image into a container; returns the container name."""
    name = f"{record['id']}_img.msde"
    try:
        with Image.open(record["_image_path"]) as im:
            encoded = job.encoder.encode_image(im)
        write_container(
            encoded.patches, MODALITY_IMAGE, Path(job.out_dir) / name,
            grid=encoded.grid,
        )
        return name
    except Exception as exc:  # per-file: record and keep going
        job.errors.append((record["_image_path"], str(exc)))
        return None


def extract_text(job: ExtractJob, record: dict, cand: dict) -> tuple[str, int] | None:
    """Encode one caption; returns (container name, n_tokens)."""
    name = f"{record['id']}_{cand['cand_id']}_txt.msde"
    try:
        encoded = job.encoder.encode_text(cand["text"])
        write_container(
            encoded.tokens, MODALITY_TEXT, Path(job.out_dir) / name
        )
        return name, encoded.n_tokens
    except Exception as exc:
        job.errors.append((f"{record['id']}/{cand['cand_id']}", str(exc)))
        return None


def emit_manifest(job: ExtractJob) -> Path:
    """Run the whole job and write a manifest consumable by the engine."""
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = _load_records(job)

    def one(record):
        image_name = extract_image(job, record)
        if image_name is None:
            return None
        candidates = []
        for cand in record.get("candidates", []):
            text = extract_text(job, record, cand)
            if text is None:
                return None
            text_name, n_tokens = text
            candidates.append({
                "cand_id": cand["cand_id"],
                "text_container": text_name,
                "n_tokens": n_tokens,
                "raw_text": cand["text"],
            })
        return json.dumps({
            "id": record["id"],
            "image_container": image_name,
            "candidates": candidates,
            "meta": {
                "encoder": job.encoder.name,
                "layer": str(getattr(job.encoder, "layer", "")),
            },
        }, sort_keys=True)

    if job.batch_size > 1:
        with ThreadPoolExecutor(max_workers=job.batch_size) as pool:
            lines = list(pool.map(one, records))
    else:
        lines = [one(r) for r in records]
    lines = [ln for ln in lines if ln is not None]
    manifest = out / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + ("\n" if lines else ""))
    return manifest
