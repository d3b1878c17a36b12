"""Secondary acceptance: extractor output flows through the scoring
engine end to end.

The engine is consumed only through its external interfaces: the MSDE
container format (validated here by the engine's own reader) and the
`msd` CLI subcommands.
"""
import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from msdextract.cli import main as extract_main


def _photo(seed, size=128):
    """A structured synthetic photograph: sky gradient, ground, one shape."""
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size, 3), dtype=np.uint8)
    horizon = size // 2 + int(rng.integers(-10, 10))
    for y in range(horizon):
        img[y] = (120 + y // 2, 160 + y // 3, 230)
    img[horizon:] = (60 + int(rng.integers(0, 40)), 130, 50)
    x0, y0 = int(rng.integers(10, size - 40)), int(rng.integers(10, size - 40))
    color = tuple(int(v) for v in rng.integers(0, 256, 3))
    img[y0:y0 + 30, x0:x0 + 30] = color
    img += rng.integers(0, 16, img.shape, dtype=np.uint8)
    return Image.fromarray(img, "RGB")


CAPTIONS = [
    "a colorful square sits on a grassy field under a pale sky",
    "an empty street at night with neon signs reflecting in rain",
]


def _run_msd(args):
    return subprocess.run(
        [sys.executable, "-m", "msdscore.cli", *args],
        capture_output=True, text=True,
    )


def test_secondary_extractor_smoke(tmp_path):
    # 10-sample captions set, two candidates per image
    records = []
    for i in range(10):
        _photo(i).save(tmp_path / f"photo{i}.png")
        records.append({
            "id": f"photo{i}",
            "image": f"photo{i}.png",
            "candidates": [
                {"cand_id": "pos", "text": CAPTIONS[0]},
                {"cand_id": "neg", "text": CAPTIONS[1]},
            ],
        })
    captions = tmp_path / "captions.jsonl"
    captions.write_text("\n".join(json.dumps(r) for r in records) + "\n")

    out_dir = tmp_path / "emb"
    rc = extract_main(["--captions", str(captions), "--out-dir", str(out_dir),
                       "--encoder", "hashed", "--dim", "48", "--grid", "7", "7"])
    assert rc == 0

    # every container validates against the engine's io-formats reader
    # and carries unit-norm rows within 1e-4
    from msdscore.ioformats import read_container, read_manifest

    manifest = read_manifest(out_dir / "manifest.jsonl")
    assert len(manifest) == 10
    containers = [r["image_container"] for r in manifest]
    containers += [c["text_container"] for r in manifest for c in r["candidates"]]
    assert len(containers) == 30
    for path in containers:
        emb = read_container(path)
        raw = np.frombuffer(
            open(path, "rb").read(), dtype="<f4", offset=21
        ).reshape(emb.n, emb.dim)
        np.testing.assert_allclose(
            np.linalg.norm(raw.astype(np.float64), axis=1), 1.0, atol=1e-4
        )

    # cmd_score runs without error over the extracted manifest
    scores = tmp_path / "scores.jsonl"
    res = _run_msd(["score", "--manifest", str(out_dir / "manifest.jsonl"),
                    "--out", str(scores)])
    assert res.returncode == 0, res.stderr
    assert "warning" not in res.stderr
    rows = [json.loads(l) for l in scores.read_text().strip().split("\n")]
    assert len(rows) == 20
    assert all(np.isfinite(r["soft_msd"]) for r in rows)

    # cmd_attribute runs without error on one extracted pair
    attr_dir = tmp_path / "attr"
    res = _run_msd(["attribute", "--manifest", str(out_dir / "manifest.jsonl"),
                    "--id", "photo0", "--cand", "pos",
                    "--out-dir", str(attr_dir)])
    assert res.returncode == 0, res.stderr
    assert (attr_dir / "coverage_map.csv").exists()
    assert (attr_dir / "divergence.json").exists()
    print("[ACCEPT] S01 extractor smoke: containers valid, unit-norm 1e-4, "
          "score+attribute ran on 10 samples: PASS")
