"""Command-line interface.

Subcommands cover corpus creation, the five training stages, watermark
embedding, single attacks over image folders, the full evaluation sweep,
and report re-rendering. Failures exit nonzero with a machine-readable
JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image


def _save_png(img: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((np.clip(img, 0, 1) * 255).round().astype(np.uint8)).save(path)


def _load_config(path: str):
    from rewash.harness.config import ExperimentConfig

    return ExperimentConfig.load(path)


def cmd_make_corpus(args) -> int:
    from rewash.data import make_synthetic_corpus

    manifest = make_synthetic_corpus(args.out, args.n, args.resolution, args.seed)
    print(json.dumps(manifest, indent=2))
    return 0


def _train_stage(args, stage: str) -> int:
    from rewash.harness.stages import run_pipeline_train

    cfg = _load_config(args.config)
    manifest = run_pipeline_train(cfg, stages=[stage], force=args.force)
    print(json.dumps(manifest["stages"].get(stage, {}), indent=2))
    return 0


def cmd_train_all(args) -> int:
    from rewash.harness.stages import run_pipeline_train

    cfg = _load_config(args.config)
    manifest = run_pipeline_train(cfg, force=args.force)
    print(json.dumps({k: v.get("reused") for k, v in manifest["stages"].items()}, indent=2))
    return 0


def _scheme_watermarker(cfg, name: str, pipeline=None):
    from rewash.harness.stages import load_stega
    from rewash.watermarks.base import random_payload
    from rewash.watermarks.qim import QIM_PAYLOAD_BITS, QimWatermarker

    if name == "dwtdctsvd":
        return QimWatermarker(random_payload(QIM_PAYLOAD_BITS, cfg.payload_seed), cfg.qim_step)
    if name == "stega_toy":
        return load_stega(cfg)
    raise ValueError(f"embed/attack scoring supports dwtdctsvd and stega_toy, not {name!r}")


def cmd_embed(args) -> int:
    from rewash.data import ingest

    cfg = _load_config(args.config)
    wm = _scheme_watermarker(cfg, args.scheme)
    dataset = ingest(args.input, cfg.resolution, seed=cfg.seed)
    out = Path(args.out)
    for name, img in zip(dataset.names, dataset.images):
        _save_png(wm.embed(img), out / name)
    (out / "embed_manifest.json").write_text(
        json.dumps({"scheme": args.scheme, "n_images": len(dataset.names), **wm.to_config()}, indent=2)
    )
    print(f"embedded {len(dataset.names)} images -> {out}")
    return 0


def cmd_attack(args) -> int:
    from rewash.data import ingest
    from rewash.edges import canny
    from rewash.harness.config import AttackSpec
    from rewash.harness.evalrun import build_pipeline, run_attack
    from rewash.harness.stages import load_components
    from rewash.training import derive_seed

    cfg = _load_config(args.config)
    spec = AttackSpec(name=args.attack, t_star=args.t_star, k=args.k)
    components = load_components(cfg, need_controls=args.attack.startswith("ctrl"))
    pipeline = build_pipeline(cfg, components)
    dataset = ingest(args.input, cfg.resolution, seed=cfg.seed)
    images = list(dataset.images)
    seeds = [derive_seed(args.seed, "attack", args.attack, name) for name in dataset.names]
    attacked = run_attack(pipeline, spec, images, seeds)
    wm = _scheme_watermarker(cfg, args.scheme) if args.scheme else None
    out = Path(args.out)
    for i, name in enumerate(dataset.names):
        _save_png(attacked[i], out / name)
        record = {
            "source": name,
            "seed": seeds[i],
            "attack": spec.name,
            "t_star": spec.t_star,
            "scheme": args.scheme,
        }
        if wm is not None:
            record["score_before"] = wm.detect(images[i]).score
            record["score_after"] = wm.detect(attacked[i]).score
        (out / f"{Path(name).stem}.json").write_text(json.dumps(record, indent=2))
        if args.dump_edges:
            _save_png(
                canny(images[i]).astype(np.float64), out / f"{Path(name).stem}_edges.png"
            )
    print(f"attacked {len(images)} images -> {out}")
    return 0


def cmd_eval(args) -> int:
    from rewash.harness.evalrun import run_attack_eval

    cfg = _load_config(args.config)
    manifest = run_attack_eval(cfg, out_dir=args.out)
    print(json.dumps({"csv_sha256": manifest["csv_sha256"], "rows": len(manifest["rows"])}, indent=2))
    return 0


def cmd_sweep(args) -> int:
    from rewash.harness.evalrun import run_attack_eval

    cfg = _load_config(args.config)
    grid = [int(v) for v in args.grid.split(",")] if args.grid else [100, 200, 300, 400, 500, 1000]
    cfg.attacks = [
        {"name": "regen", "t_star_grid": [t for t in grid if t <= 500]},
        {"name": "ctrl_regen_plus", "t_star_grid": grid},
    ]
    manifest = run_attack_eval(cfg, out_dir=args.out)
    print(json.dumps({"csv_sha256": manifest["csv_sha256"], "rows": len(manifest["rows"])}, indent=2))
    return 0


def cmd_report(args) -> int:
    from rewash.harness.report import render_reports

    manifest = json.loads(Path(args.run, "manifest.json").read_text())
    written = render_reports(manifest["rows"], Path(args.run) / "plots")
    print(json.dumps(written, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rewash",
        description="Regeneration-based watermark removal testbed",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", help="generate the deterministic synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_corpus)

    for stage, cmd in [
        ("codec", "train-codec"),
        ("backbone", "train-backbone"),
        ("semantic", "train-semantic"),
        ("spatial", "train-spatial"),
        ("stega", "train-watermark"),
    ]:
        p = sub.add_parser(cmd, help=f"train the {stage} stage")
        p.add_argument("--config", required=True)
        p.add_argument("--force", action="store_true", help="retrain even if a checkpoint exists")
        p.set_defaults(func=lambda a, _s=stage: _train_stage(a, _s))

    p = sub.add_parser("train-all", help="run every training stage in order")
    p.add_argument("--config", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train_all)

    p = sub.add_parser("embed", help="watermark a folder of images")
    p.add_argument("--config", required=True)
    p.add_argument("--scheme", required=True, choices=["dwtdctsvd", "stega_toy"])
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("attack", help="run one attack over a folder of images")
    p.add_argument("--config", required=True)
    p.add_argument("--attack", required=True,
                   choices=["regen", "rinse", "ctrl_regen", "ctrl_regen_plus"])
    p.add_argument("--t-star", dest="t_star", type=int, default=None)
    p.add_argument("--k", type=int, default=None, help="rinse pass count")
    p.add_argument("--scheme", default=None, help="score before/after with this scheme")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-edges", action="store_true", help="also write edge-map PNGs")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="full before/after evaluation (CSV, manifest, plots)")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="noising-step sweep for regen and ctrl_regen_plus")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", default=None, help="comma-separated t_star values")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="re-render plots from an existing run directory")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # machine-readable failure record
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
