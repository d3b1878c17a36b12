"""Command-line surface binding the scoring pipeline end to end."""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import evalstats, ioformats
from .divergence import BetaConfig, attribution_maps, bi_kl, mask_and_rescore
from .exceptions import MsdError
from .scoring import DivergenceMode, FusionConfig, soft_msd_batch
from .sphere import EmbeddingSet, Modality, derived_seed, normalize
from .synth import Perturbation, SynthSpec, planted_pair
from .vmf import (
    EmConfig,
    VmfMixture,
    clustering_ari,
    em_fit,
    hard_labels,
    responsibility_entropy,
)

PROFILES = {"short": (3, 2), "long": (5, 3)}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file with flag defaults")
    parser.add_argument("--profile", choices=("short", "long"), default="short",
                        help="selects (K_img, K_txt); short=(3,2), long=(5,3)")
    parser.add_argument("--k-img", type=int, help="override image mixture size")
    parser.add_argument("--k-txt", type=int, help="override text mixture size")
    parser.add_argument("--kappa", type=float, default=20.0)
    parser.add_argument("--iters", type=int, default=20)
    parser.add_argument("--reinit-threshold", type=float, default=1e-6)
    parser.add_argument("--alpha", type=float, default=0.1)
    parser.add_argument("--xi", type=float, default=0.2)
    parser.add_argument("--l0", type=float, default=20.0)
    parser.add_argument("--tau-l", type=float, default=3.0)
    parser.add_argument("--eps-tie", type=float, default=1e-4)
    parser.add_argument("--mode", choices=[m.value for m in DivergenceMode],
                        default=DivergenceMode.BI_KL.value)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("MSD_THREADS", "1")))


def _configs(args) -> tuple[FusionConfig, EmConfig, EmConfig]:
    k_img, k_txt = PROFILES[args.profile]
    if args.k_img:
        k_img = args.k_img
    if args.k_txt:
        k_txt = args.k_txt
    fusion = FusionConfig(
        alpha=args.alpha,
        xi=args.xi,
        beta_cfg=BetaConfig(l0=args.l0, tau_l=args.tau_l),
        divergence_mode=DivergenceMode(args.mode),
    )
    em_img = EmConfig(k=k_img, kappa=args.kappa, iterations=args.iters,
                      reinit_threshold=args.reinit_threshold, seed=args.seed)
    em_txt = EmConfig(k=k_txt, kappa=args.kappa, iterations=args.iters,
                      reinit_threshold=args.reinit_threshold, seed=args.seed)
    return fusion, em_img, em_txt


def _apply_config_file(args, argv) -> None:
    """Fill flag defaults from a key=value file; explicit flags win."""
    if not args.config:
        return
    explicit = {a.split("=")[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    for lineno, line in enumerate(Path(args.config).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise MsdError(f"{args.config}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        attr = key.replace("-", "_")
        if attr in explicit or not hasattr(args, attr):
            continue
        current = getattr(args, attr)
        caster = type(current) if current is not None else str
        setattr(args, attr, caster(value))


def cmd_score(args) -> int:
    fusion, em_img, em_txt = _configs(args)
    fingerprint = ioformats.config_fingerprint(fusion, em_img, em_txt)
    print(f"# config fingerprint {fingerprint}", file=sys.stderr)
    records = ioformats.read_manifest(args.manifest)

    def score_record(rec):
        img = ioformats.read_container(rec["image_container"])
        candidates = []
        for cand in rec["candidates"]:
            txt = ioformats.read_container(cand["text_container"])
            if cand.get("n_tokens") not in (None, txt.n):
                print(
                    f"# warning: {rec['id']}/{cand['cand_id']}: manifest n_tokens="
                    f"{cand['n_tokens']} != container count {txt.n}; container wins",
                    file=sys.stderr,
                )
            candidates.append((cand["cand_id"], txt))
        scored = soft_msd_batch(img, candidates, fusion, em_img, em_txt,
                                image_id=rec["id"])
        return [(rec["id"], s) for s in scored]

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            batches = list(pool.map(score_record, records))
    else:
        batches = [score_record(r) for r in records]
    rows = [row for batch in batches for row in batch]
    ioformats.write_scores(args.out, rows, fingerprint)
    return 0


def _paired_instances(scores: list[dict], pos_id: str, neg_id: str):
    by_image: dict[str, dict] = {}
    for obj in scores:
        by_image.setdefault(obj["image_id"], {})[obj["candidate_id"]] = obj
    instances = []
    for image_id in sorted(by_image):
        cands = by_image[image_id]
        if pos_id not in cands or neg_id not in cands:
            raise MsdError(f"image {image_id}: missing candidate {pos_id!r} or {neg_id!r}")
        instances.append(
            evalstats.PairwiseInstance(
                image_id=image_id,
                pos=ioformats.score_record_from_json(cands[pos_id]),
                neg=ioformats.score_record_from_json(cands[neg_id]),
            )
        )
    return instances


def cmd_pairwise(args) -> int:
    scores = ioformats.read_scores(args.scores)
    instances = _paired_instances(scores, args.pos_id, args.neg_id)
    fields = args.fields.split(",")
    report: dict = {"n": len(instances), "metrics": {}}
    for name in fields:
        res = evalstats.pairwise_accuracy(instances, name)
        lo, hi = evalstats.cluster_bootstrap_ci(
            instances,
            lambda s, n=name: evalstats.pairwise_accuracy(s, n).point_estimate,
            b=args.bootstrap,
            seed=args.seed,
        )
        report["metrics"][name] = {
            "accuracy": res.point_estimate, "ci95": [lo, hi],
        }
    if args.baseline and len(fields) >= 1:
        sel_a = evalstats.score_selector(fields[0])
        sel_b = evalstats.score_selector(args.baseline)
        paired = [
            (sel_a(i.pos) > sel_a(i.neg), sel_b(i.pos) > sel_b(i.neg))
            for i in instances
        ]
        report["mcnemar_p"] = {
            "fields": [fields[0], args.baseline],
            "p_value": evalstats.mcnemar_test(paired),
        }
    margin = evalstats.margin_buckets(instances, args.bins, fields=tuple(fields))
    report["margin_buckets"] = {
        name: res.per_bucket for name, res in margin.items()
    }
    if args.length_edges:
        edges = [int(e) for e in args.length_edges.split(",")]
        length = evalstats.length_buckets(instances, edges, fields=tuple(fields))
        report["length_buckets"] = {
            name: res.per_bucket for name, res in length.items()
        }
    _write_json(args.out, report)
    return 0


def cmd_agree(args) -> int:
    scores = ioformats.read_scores(args.scores)
    by_key = {(o["image_id"], o["candidate_id"]): o for o in scores}
    prefs = []
    model_scores: dict[str, list[float]] = {}
    with open(args.labels, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            rec1 = by_key[(obj["id"], obj["first"])]
            rec2 = by_key[(obj["id"], obj["second"])]
            prefs.append(
                evalstats.PreferenceInstance(
                    image_id=obj["id"],
                    score_1=rec1[args.field],
                    score_2=rec2[args.field],
                    human_label=evalstats.HumanLabel(obj["label"]),
                    difficulty_level=obj.get("difficulty_level"),
                )
            )
            for cand_id, model in obj.get("models", {}).items():
                model_scores.setdefault(model, []).append(
                    by_key[(obj["id"], cand_id)][args.field]
                )
    res = evalstats.agreement(prefs, eps_tie=args.eps_tie)
    report: dict = {
        "n": res.n,
        "agreement": res.point_estimate,
        "per_level": res.per_bucket,
    }
    if args.model_ranking:
        human = json.loads(Path(args.model_ranking).read_text())
        common = sorted(set(human) & set(model_scores))
        if len(common) >= 2:
            metric = [float(np.mean(model_scores[m])) for m in common]
            gold = [float(human[m]) for m in common]
            report["model_level"] = {
                "models": common,
                "spearman_rho": evalstats.spearman_rho(metric, gold),
                "kendall_tau": evalstats.kendall_tau(metric, gold),
            }
    _write_json(args.out, report)
    return 0


def _load_pair(args, manifest_rec, cand):
    img = ioformats.read_container(manifest_rec["image_container"])
    txt = ioformats.read_container(cand["text_container"])
    return img, txt


def cmd_attribute(args) -> int:
    fusion, em_img, em_txt = _configs(args)
    records = {r["id"]: r for r in ioformats.read_manifest(args.manifest)}
    rec = records[args.id]
    cand = next(c for c in rec["candidates"] if c["cand_id"] == args.cand)
    img, txt = _load_pair(args, rec, cand)
    if img.grid is None:
        raise MsdError(f"image container for {args.id} carries no patch grid")
    em_img = EmConfig(k=em_img.k, kappa=em_img.kappa, iterations=em_img.iterations,
                      reinit_threshold=em_img.reinit_threshold,
                      seed=derived_seed(rec["id"], "img", args.seed))
    em_txt = EmConfig(k=em_txt.k, kappa=em_txt.kappa, iterations=em_txt.iterations,
                      reinit_threshold=em_txt.reinit_threshold,
                      seed=derived_seed(rec["id"], args.cand, "txt", args.seed))
    p_img, _ = em_fit(img, em_img)
    p_txt, _ = em_fit(txt, em_txt)
    report = bi_kl(p_img, p_txt, img, txt, cfg=fusion.beta_cfg)
    bundle = attribution_maps(report, img.grid, img, txt, kappa=args.kappa)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ioformats.write_csv_grid(out / "coverage_map.csv", bundle.coverage_map)
    ioformats.write_csv_grid(out / "projection_map.csv", bundle.projection_map)
    ioformats.write_csv_grid(out / "token_scores.csv", bundle.token_scores[None, :])
    ioformats.write_pgm(out / "coverage_map.pgm", bundle.coverage_map,
                        sidecar_path=out / "coverage_map.json")
    ioformats.write_pgm(out / "projection_map.pgm", bundle.projection_map,
                        sidecar_path=out / "projection_map.json")
    _write_json(out / "divergence.json", {
        "kl_img_txt": report.kl_img_txt,
        "kl_txt_img": report.kl_txt_img,
        "beta": report.beta,
        "weighted": report.weighted,
        "caption_length": report.caption_length,
    })
    return 0


def cmd_mask_probe(args) -> int:
    fusion, em_img, em_txt = _configs(args)
    records = ioformats.read_manifest(args.manifest)
    modes = args.modes.split(",")
    results = []
    for rec in records:
        img = ioformats.read_container(rec["image_container"])
        if img.grid is None:
            continue
        for cand in rec["candidates"]:
            txt = ioformats.read_container(cand["text_container"])
            em_i = EmConfig(k=em_img.k, kappa=em_img.kappa, iterations=em_img.iterations,
                            reinit_threshold=em_img.reinit_threshold,
                            seed=derived_seed(rec["id"], "img", args.seed))
            em_t = EmConfig(k=em_txt.k, kappa=em_txt.kappa, iterations=em_txt.iterations,
                            reinit_threshold=em_txt.reinit_threshold,
                            seed=derived_seed(rec["id"], cand["cand_id"], "txt", args.seed))
            p_img, _ = em_fit(img, em_i)
            p_txt, _ = em_fit(txt, em_t)
            report = bi_kl(p_img, p_txt, img, txt, cfg=fusion.beta_cfg)
            bundle = attribution_maps(report, img.grid, img, txt, kappa=args.kappa)
            rank_map = bundle.projection_map.ravel()
            entry = {"id": rec["id"], "cand_id": cand["cand_id"], "deltas": {}}
            for mode in modes:
                orig, masked = mask_and_rescore(
                    img, txt, rank_map, args.fraction, mode, em_i, em_t,
                    beta_cfg=fusion.beta_cfg,
                    seed=derived_seed(rec["id"], cand["cand_id"], mode, args.seed),
                )
                entry["deltas"][mode] = {"original": orig, "masked": masked,
                                         "delta": masked - orig}
            results.append(entry)
    _write_json(args.out, {"fraction": args.fraction, "results": results})
    return 0


def cmd_synth(args) -> int:
    spec = json.loads(Path(args.spec).read_text())
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_pairs = spec.get("n_pairs", 100)
    dim = spec.get("dim", 64)
    k = spec.get("k", 2)
    kappa = spec.get("kappa", 20.0)
    sample_kappa = spec.get("sample_kappa")
    n_img = spec.get("n_img", 49)
    n_txt = spec.get("n_txt", 20)
    grid = spec.get("grid")
    base_seed = spec.get("seed", 0)
    pert_spec = spec.get("perturbation", {"kind": "rotate", "index": 0,
                                          "angle": float(np.pi / 2)})

    manifest_lines = []
    for i in range(n_pairs):
        seed = derived_seed("synth", base_seed, i)
        rng = np.random.default_rng(seed)
        mus = np.stack([normalize(rng.standard_normal(dim)) for _ in range(k)])
        mixture = VmfMixture(mus=mus, weights=np.full(k, 1.0 / k), kappa=kappa)
        pert = Perturbation(
            kind=pert_spec.get("kind", "rotate"),
            index=pert_spec.get("index", 0),
            index2=pert_spec.get("index2", 0),
            angle=pert_spec.get("angle", 0.0),
            mu=(normalize(rng.standard_normal(dim))
                if pert_spec.get("kind") == "add" else None),
            weight=pert_spec.get("weight", 0.0),
        )
        synth = SynthSpec(mixture=mixture, n_samples=n_img,
                          sample_kappa=sample_kappa, perturbation=pert, seed=seed)
        img, pos, neg = planted_pair(synth, n_txt=n_txt)
        if grid:
            img = EmbeddingSet(img.vectors, Modality.IMAGE, grid=tuple(grid))
        pair_id = f"pair{i:05d}"
        ioformats.write_container(img, out / f"{pair_id}_img.msde")
        ioformats.write_container(pos, out / f"{pair_id}_pos.msde")
        ioformats.write_container(neg, out / f"{pair_id}_neg.msde")
        manifest_lines.append(json.dumps({
            "id": pair_id,
            "image_container": f"{pair_id}_img.msde",
            "candidates": [
                {"cand_id": "pos", "text_container": f"{pair_id}_pos.msde",
                 "n_tokens": n_txt},
                {"cand_id": "neg", "text_container": f"{pair_id}_neg.msde",
                 "n_tokens": n_txt},
            ],
            "meta": {"positive": "pos", "perturbation": pert.kind},
        }, sort_keys=True))
    (out / "manifest.jsonl").write_text("\n".join(manifest_lines) + "\n")
    return 0


def cmd_em_diag(args) -> int:
    data = ioformats.read_container(args.container)
    seeds = [int(s) for s in args.seeds.split(",")]
    fits = []
    for seed in seeds:
        cfg = EmConfig(k=args.k, kappa=args.kappa, iterations=args.iters,
                       reinit_threshold=args.reinit_threshold, seed=seed)
        mixture, trace = em_fit(data, cfg)
        labels = hard_labels(trace.responsibilities)
        entropy = float(np.mean([
            responsibility_entropy(row) for row in trace.responsibilities
        ]))
        fits.append({"seed": seed, "labels": labels,
                     "mean_entropy": entropy,
                     "log_likelihood": trace.log_likelihood[-1],
                     "reinits": len(trace.reinit_events)})
    aris = []
    for i in range(len(fits)):
        for j in range(i + 1, len(fits)):
            aris.append(clustering_ari(fits[i]["labels"], fits[j]["labels"]))
    _write_json(args.out, {
        "k": args.k,
        "kappa": args.kappa,
        "seeds": seeds,
        "mean_pairwise_ari": float(np.mean(aris)) if aris else 1.0,
        "pairwise_ari": aris,
        "per_seed": [
            {k: v for k, v in f.items() if k != "labels"} for f in fits
        ],
    })
    return 0


def _write_json(path, obj) -> None:
    ioformats._atomic_write_bytes(
        path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msd",
        description="Reference-free caption scoring via vMF mixtures and Bi-KL",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score manifest candidates (Soft-MSD)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("pairwise", help="pairwise accuracy report from a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pos-id", default="pos")
    p.add_argument("--neg-id", default="neg")
    p.add_argument("--fields", default="soft_msd,msd,g,bikl,kl_img_txt,kl_txt_img")
    p.add_argument("--baseline", default="g",
                   help="McNemar baseline field vs the first of --fields")
    p.add_argument("--bins", type=int, default=5)
    p.add_argument("--length-edges", default="")
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pairwise)

    p = sub.add_parser("agree", help="caption-level agreement + model-level tables")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--field", default="soft_msd")
    p.add_argument("--eps-tie", type=float, default=1e-4)
    p.add_argument("--model-ranking", default="")
    p.set_defaults(func=cmd_agree)

    p = sub.add_parser("attribute", help="export attribution maps for one pair")
    p.add_argument("--manifest", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--cand", required=True)
    p.add_argument("--out-dir", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("mask-probe", help="patch-masking faithfulness deltas")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fraction", type=float, default=0.1)
    p.add_argument("--modes", default="top,bottom,random")
    _add_common(p)
    p.set_defaults(func=cmd_mask_probe)

    p = sub.add_parser("synth", help="generate planted-pair datasets")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("em-diag", help="ARI seed stability and entropy report")
    p.add_argument("--container", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--kappa", type=float, default=20.0)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--reinit-threshold", type=float, default=1e-6)
    p.set_defaults(func=cmd_em_diag)

    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    args = parser.parse_args(argv)
    if hasattr(args, "config"):
        _apply_config_file(args, argv)
    try:
        return args.func(args)
    except MsdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, KeyError, StopIteration, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
