"""CLI: extract embeddings for a captions file into MSDE containers."""
from __future__ import annotations

import argparse
import sys

from .encoders import build_encoder
from .extract import ExtractJob, emit_manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msd-extract",
        description="Dump patch/token embeddings as MSDE containers + manifest",
    )
    parser.add_argument("--captions", required=True,
                        help="JSONL with id/image/candidates records")
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--encoder", default="hashed", choices=("hashed", "clip"))
    parser.add_argument("--encoder-name", default="openai/clip-vit-large-patch14",
                        help="pretrained checkpoint for --encoder clip")
    parser.add_argument("--layer", type=int, default=-1,
                        help="hidden layer for --encoder clip (-1 = last)")
    parser.add_argument("--dim", type=int, default=64,
                        help="embedding dimension for --encoder hashed")
    parser.add_argument("--grid", type=int, nargs=2, default=(7, 7),
                        metavar=("ROWS", "COLS"),
                        help="patch grid for --encoder hashed")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=8)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.encoder == "hashed":
        encoder = build_encoder("hashed", dim=args.dim, grid=tuple(args.grid),
                                seed=args.seed)
    else:
        encoder = build_encoder("clip", model_name=args.encoder_name,
                                device=args.device, layer=args.layer)
    job = ExtractJob(captions_file=args.captions, out_dir=args.out_dir,
                     encoder=encoder, batch_size=args.batch_size)
    manifest = emit_manifest(job)
    for source, message in job.errors:
        print(f"# error: {source}: {message}", file=sys.stderr)
    print(f"wrote {manifest}", file=sys.stderr)
    return 0 if not job.errors else 3


if __name__ == "__main__":
    sys.exit(main())
