"""Command-line interface for the batch annotation pipeline."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import PipelineConfig, default_config
from .errors import MedclustError
from .pipeline import Pipeline
from .report import composition_svg
from .synth import SynthParams, generate_synthetic

STAGE_COMMANDS = {
    "ingest": "ingest",
    "export-images": "export_images",
    "prep-tags": "prep_tags",
    "prep-text": "prep_text",
    "extract": "extract",
    "cluster": "cluster_stage",
    "fuse": "fuse_stage",
    "evaluate": "evaluate_stage",
}


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--workers", type=int, default=None, help="bound worker parallelism")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="medclust",
        description="Annotate a medical imaging corpus by multimodal "
                    "embedding fusion and clustering.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in list(STAGE_COMMANDS) + ["run", "report"]:
        p = sub.add_parser(name)
        _add_config_args(p)

    p = sub.add_parser("label", help="apply frozen models to a new corpus")
    _add_config_args(p)
    p.add_argument("--input", required=True, help="directory of DICOM files")
    p.add_argument("--diagnoses", required=True, help="exam_id,text CSV")
    p.add_argument("--out-name", default="label")

    p = sub.add_parser("synth", help="generate a synthetic labelled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--files-per-exam", type=int, default=1)
    p.add_argument("--missingness", type=float, default=0.15)
    p.add_argument("--image-size", type=int, default=64)
    return parser


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_json(args.config)
    if args.seed is not None:
        cfg.raw["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        cfg.raw["workers"] = args.workers
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            params = SynthParams(classes=args.classes, per_class=args.per_class,
                                 seed=args.seed, files_per_exam=args.files_per_exam,
                                 missingness=args.missingness,
                                 image_size=args.image_size)
            summary = generate_synthetic(args.out, params)
            out = Path(args.out)
            cfg = default_config(str(out / "dicom"), str(out / "diagnoses.csv"),
                                 str(out / "run"), seed=args.seed)
            cfg.to_json(out / "config.json")
            print(json.dumps({**summary, "config": str(out / "config.json")}))
            return 0

        cfg = _load_config(args)
        pipe = Pipeline(cfg)

        if args.command == "run":
            manifest = pipe.run()
            print(json.dumps({"ok": manifest.ok,
                              "stages": [s.name for s in manifest.stages],
                              "failed": [s.name for s in manifest.stages if s.failed]}))
            return 0 if manifest.ok else 1

        if args.command == "label":
            rec = pipe.label_corpus(args.input, args.diagnoses, args.out_name)
            print(json.dumps(rec.counts))
            return 0

        if args.command == "report":
            eval_dir = Path(cfg["paths"]["output_dir"]) / "evaluation"
            report_path = eval_dir / "final_report.json"
            payload = json.loads(report_path.read_text())
            for target in ("modality", "body_part"):
                composition_svg(payload["composition"], target,
                                eval_dir / f"final_composition_{target}.svg")
            print(json.dumps({k: payload[k] for k in
                              ("nmi_m", "nmi_b", "hs_m", "hs_b", "s", "d")}))
            return 0

        rec = getattr(pipe, STAGE_COMMANDS[args.command])()
        print(json.dumps({"stage": rec.name, "seconds": round(rec.seconds, 2),
                          "counts": rec.counts, "failed": rec.failed}))
        return 0 if not rec.failed else 1
    except MedclustError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
