"""Command-line entry point for the full pipeline.

One JSON config file drives every stage; unknown keys anywhere in it are
rejected so typos fail loudly instead of silently using defaults. Each run
that produces a file also writes `<output>.run.json` beside it recording the
effective config, seed, code version, and input hashes.

Exit codes: 0 success, 2 validation or input failure, 1 internal error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import service
from .align import AlignConfig, AlignmentFailed, IdentityOracle, align
from .datakit import FilterCriteria, filter_manifest
from .diffusion import (DiffusionTrainConfig, DiTConfig, sample_skeleton,
                        train_dit)
from .graphs import (DatasetRecord, ParseError, StrokeGraph2D, dumps,
                     loads_skeleton, loads_stroke, read_manifest, validate,
                     write_manifest)
from .metrics import evaluate_batch
from .preference import (CdProxyScorer, DPOConfig, build_pairs, dpo_finetune,
                         read_conditions, read_pairs, write_pairs)
from .stroke import StrokeSimConfig, simulate_stroke
from .textenc import make_encoder
from .util import canon_json
from .vae import VAEConfig, VAETrainConfig, train_vae

_SECTIONS = ("config_version", "vae", "vae_train", "dit", "dit_train",
             "stroke_sim", "filter", "dpo", "align", "sample", "text")
_SAMPLE_KEYS = ("seed", "guidance", "method", "ddim_steps")
_TEXT_KEYS = ("kind", "d_text")


class CliError(RuntimeError):
    def __init__(self, message: str, exit_code: int = 2):
        super().__init__(message)
        self.exit_code = exit_code


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}")
    except json.JSONDecodeError as err:
        raise CliError(f"config is not valid JSON: {err}")
    if not isinstance(doc, dict):
        raise CliError("config must be a JSON object")
    unknown = sorted(set(doc) - set(_SECTIONS))
    if unknown:
        raise CliError(f"unknown config keys {unknown}; "
                       f"known sections: {sorted(_SECTIONS)}")
    version = doc.get("config_version", 1)
    if version != 1:
        raise CliError(f"unsupported config_version {version!r}")
    return doc


def _section(config: dict, name: str, cls):
    """Build a config dataclass from one section, strictly."""
    doc = config.get(name, {})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise CliError(f"config[{name!r}]: unknown keys {unknown}")
    coerced = {k: tuple(v) if isinstance(v, list) else v
               for k, v in doc.items()}
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as err:
        raise CliError(f"config[{name!r}]: {err}")


def _plain_section(config: dict, name: str, allowed) -> dict:
    doc = config.get(name, {})
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise CliError(f"config[{name!r}]: unknown keys {unknown}")
    return dict(doc)


def _emit_manifest(out_path, command: str, config: dict, seed: int,
                   inputs: dict | None = None) -> None:
    manifest = ckpt.run_manifest(command, config, seed, inputs)
    ckpt.write_run_manifest(str(out_path) + ".run.json", manifest)


def _write_csv(path, rows: list[dict]) -> None:
    if not rows:
        raise CliError("nothing to write")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _read_skeleton_lines(path):
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for k, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(loads_skeleton(line))
            except ParseError as err:
                raise CliError(f"{path} line {k + 1}: {err}")
    if not out:
        raise CliError(f"no skeletons in {path}")
    return out


def _load_bundle(path) -> ckpt.PipelineBundle:
    if not Path(path).exists():
        raise CliError(f"checkpoint not found: {path}")
    try:
        return ckpt.load_pipeline(path)
    except ckpt.CheckpointError as err:
        raise CliError(f"{path}: {err}")


def _merged_defaults(bundle: ckpt.PipelineBundle) -> dict:
    return {**service.SAMPLING_DEFAULTS, **bundle.defaults}


# -- subcommands --------------------------------------------------------------


def cmd_align(args) -> int:
    config = load_config(args.config)
    align_cfg = _section(config, "align", AlignConfig)
    records = read_manifest(args.infile)
    oracle = None if args.no_oracle else IdentityOracle()
    aligned, methods, failed = [], Counter(), 0
    for rec in records:
        try:
            graph, frame = align(rec.skeleton, align_cfg, oracle)
        except AlignmentFailed:
            failed += 1
            continue
        methods[frame.method] += 1
        aligned.append(DatasetRecord(graph, rec.caption, rec.tags,
                                     rec.source_id))
    write_manifest(aligned, args.out)
    _emit_manifest(args.out, "align",
                   {"align": dataclasses.asdict(align_cfg)}, 0,
                   {"in": args.infile})
    print(json.dumps({"input": len(records), "aligned": len(aligned),
                      "failed": failed,
                      "methods": dict(sorted(methods.items()))}))
    return 0


def cmd_filter(args) -> int:
    config = load_config(args.config)
    criteria = _section(config, "filter", FilterCriteria)
    try:
        stats = filter_manifest(args.infile, args.out, criteria,
                                lax=not args.strict)
    except ParseError as err:
        raise CliError(f"{args.infile}: {err}")
    _emit_manifest(args.out, "filter",
                   {"filter": dataclasses.asdict(criteria)}, 0,
                   {"in": args.infile})
    print(json.dumps(stats))
    return 0


def cmd_simulate_strokes(args) -> int:
    config = load_config(args.config)
    sim_cfg = _section(config, "stroke_sim", StrokeSimConfig)
    records = read_manifest(args.infile)
    if not records:
        raise CliError(f"no records in {args.infile}")
    rng = np.random.default_rng(args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        for rec in records:
            stroke = simulate_stroke(rec.skeleton, rng, sim_cfg)
            tagged = StrokeGraph2D(stroke.joints2d, stroke.edges,
                                   stroke.view_tag, text=rec.caption)
            fh.write(dumps(tagged) + "\n")
    _emit_manifest(args.out, "simulate-strokes",
                   {"stroke_sim": dataclasses.asdict(sim_cfg)}, args.seed,
                   {"in": args.infile})
    print(json.dumps({"strokes": len(records)}))
    return 0


def cmd_train_vae(args) -> int:
    config = load_config(args.config)
    model_cfg = _section(config, "vae", VAEConfig)
    train_cfg = _section(config, "vae_train", VAETrainConfig)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    records = read_manifest(args.data)
    if not records:
        raise CliError(f"no records in {args.data}")
    model, history = train_vae([r.skeleton for r in records], model_cfg,
                               train_cfg)
    ckpt.save_vae(args.out, model)
    _write_csv(str(args.out) + ".loss.csv", history)
    _emit_manifest(args.out, "train-vae",
                   {"vae": dataclasses.asdict(model_cfg),
                    "vae_train": dataclasses.asdict(train_cfg)},
                   train_cfg.seed, {"data": args.data})
    print(json.dumps({"records": len(records), "steps": train_cfg.steps,
                      "final_loss": history[-1]["loss"],
                      "out": str(args.out)}))
    return 0


def cmd_train_dit(args) -> int:
    config = load_config(args.config)
    model_cfg = _section(config, "dit", DiTConfig)
    train_cfg = _section(config, "dit_train", DiffusionTrainConfig)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    if not Path(args.vae).exists():
        raise CliError(f"no VAE checkpoint at {args.vae}; run train-vae "
                       "first and pass its output via --vae")
    try:
        vae_model = ckpt.load_vae(args.vae)
    except ckpt.CheckpointError as err:
        raise CliError(f"{args.vae}: {err}")
    if vae_model.config.d_latent != model_cfg.d_latent:
        raise CliError(f"latent width mismatch: VAE d_latent="
                       f"{vae_model.config.d_latent}, denoiser d_latent="
                       f"{model_cfg.d_latent}")
    text_cfg = {"kind": "hash", "d_text": model_cfg.d_text,
                **_plain_section(config, "text", _TEXT_KEYS)}
    if text_cfg["d_text"] != model_cfg.d_text:
        raise CliError(f"text width mismatch: config[text][d_text]="
                       f"{text_cfg['d_text']}, denoiser d_text="
                       f"{model_cfg.d_text}")
    encoder = make_encoder(text_cfg["kind"], text_cfg["d_text"])
    records = read_manifest(args.data)
    stroke_cfg = (_section(config, "stroke_sim", StrokeSimConfig)
                  if "stroke_sim" in config else None)
    defaults = _plain_section(config, "sample", _SAMPLE_KEYS)
    try:
        model, schedule, history = train_dit(records, vae_model, model_cfg,
                                             train_cfg, encoder, stroke_cfg)
    except ValueError as err:
        raise CliError(str(err))
    ckpt.save_pipeline(args.out, vae_model, model, schedule,
                       encoder_kind=text_cfg["kind"], defaults=defaults)
    _write_csv(str(args.out) + ".loss.csv", history)
    _emit_manifest(args.out, "train-dit",
                   {"dit": dataclasses.asdict(model_cfg),
                    "dit_train": dataclasses.asdict(train_cfg),
                    "text": text_cfg, "sample": defaults},
                   train_cfg.seed, {"data": args.data, "vae": args.vae})
    print(json.dumps({"records": len(records), "steps": train_cfg.steps,
                      "final_loss": history[-1]["loss"],
                      "out": str(args.out)}))
    return 0


def cmd_sample(args) -> int:
    bundle = _load_bundle(args.ckpt)
    try:
        with open(args.stroke, "r", encoding="utf-8") as fh:
            stroke = loads_stroke(fh.read())
    except ParseError as err:
        raise CliError(f"{args.stroke}: {err}")
    report = validate(stroke)
    if not report.ok:
        raise CliError(f"{args.stroke}: invalid stroke: "
                       + "; ".join(f"{v.code}: {v.detail}"
                                   for v in report.violations))
    defaults = _merged_defaults(bundle)
    seed = args.seed if args.seed is not None else int(defaults["seed"])
    guidance = (args.guidance if args.guidance is not None
                else float(defaults["guidance"]))
    method = defaults.get("method", "ddpm")
    ddim_steps = None
    if args.steps is not None and args.steps < bundle.schedule.n_steps:
        method, ddim_steps = "ddim", args.steps
    text = args.text if args.text is not None else (stroke.text or "")
    c_text = bundle.encoder.embed(text).vector
    skeleton = sample_skeleton(bundle.denoiser, bundle.vae, bundle.schedule,
                               stroke, c_text, np.random.default_rng(seed),
                               guidance=guidance, method=method,
                               ddim_steps=ddim_steps)
    payload = dumps(skeleton)
    print(payload)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
        _emit_manifest(args.out, "sample",
                       {"text": text, "guidance": guidance, "method": method,
                        "ddim_steps": ddim_steps,
                        "model_version": bundle.model_version},
                       seed, {"stroke": args.stroke, "ckpt": args.ckpt})
    return 0


def cmd_eval(args) -> int:
    preds = _read_skeleton_lines(args.pred)
    gts = _read_skeleton_lines(args.gt)
    if len(preds) != len(gts):
        raise CliError(f"pair count mismatch: {len(preds)} predictions vs "
                       f"{len(gts)} references")
    report = evaluate_batch(zip(preds, gts),
                            samples_per_bone=args.samples_per_bone)
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(canon_json(report) + "\n")
        _emit_manifest(args.out, "eval",
                       {"samples_per_bone": args.samples_per_bone}, 0,
                       {"pred": args.pred, "gt": args.gt})
    return 0


def cmd_build_pairs(args) -> int:
    bundle = _load_bundle(args.ckpt)
    config = load_config(args.config)
    dpo_cfg = _section(config, "dpo", DPOConfig)
    margin = args.margin if args.margin is not None else dpo_cfg.margin
    try:
        conditions = read_conditions(args.conditions)
    except ValueError as err:
        raise CliError(f"{args.conditions}: {err}")
    if not conditions:
        raise CliError(f"no conditions in {args.conditions}")
    if any(not c.source_id for c in conditions):
        raise CliError("every condition needs a non-empty source_id so "
                       "pair files can refer back to it")
    defaults = _merged_defaults(bundle)
    pairs, stats = build_pairs(conditions, bundle.denoiser, bundle.vae,
                               bundle.schedule, bundle.encoder,
                               CdProxyScorer(), margin=margin,
                               seed0=args.seed0,
                               guidance=float(defaults["guidance"]))
    write_pairs(args.out, pairs)
    _emit_manifest(args.out, "build-pairs",
                   {"margin": margin, "model_version": bundle.model_version},
                   args.seed0, {"conditions": args.conditions,
                                "ckpt": args.ckpt})
    print(json.dumps(stats))
    return 0


def cmd_dpo_finetune(args) -> int:
    bundle = _load_bundle(args.ckpt)
    config = load_config(args.config)
    dpo_cfg = _section(config, "dpo", DPOConfig)
    try:
        conditions = read_conditions(args.conditions)
        by_id = {c.source_id: c for c in conditions}
        pairs = read_pairs(args.pairs, by_id)
    except (ValueError, KeyError) as err:
        raise CliError(f"loading pairs: {err}")
    if not pairs:
        raise CliError(f"no pairs in {args.pairs}")
    defaults = _merged_defaults(bundle)
    try:
        tuned, report = dpo_finetune(bundle.denoiser, bundle.vae,
                                     bundle.schedule, bundle.encoder, pairs,
                                     dpo_cfg, seed=args.seed,
                                     heldout=conditions,
                                     scorer=CdProxyScorer(),
                                     guidance=float(defaults["guidance"]))
    except FloatingPointError as err:
        raise CliError(f"finetuning diverged: {err}", exit_code=1)
    ckpt.save_pipeline(args.out, bundle.vae, tuned, bundle.schedule,
                       encoder_kind=bundle.encoder_kind,
                       defaults=bundle.defaults)
    _write_csv(str(args.out) + ".loss.csv", report["history"])
    _emit_manifest(args.out, "dpo-finetune",
                   {"dpo": dataclasses.asdict(dpo_cfg),
                    "model_version": bundle.model_version},
                   args.seed, {"pairs": args.pairs,
                               "conditions": args.conditions,
                               "ckpt": args.ckpt})
    print(json.dumps({k: v for k, v in report.items() if k != "history"}))
    return 0


def cmd_serve(args) -> int:
    if not Path(args.ckpt).exists():
        raise CliError(f"checkpoint not found: {args.ckpt}")
    service.serve(args.ckpt, host=args.host, port=args.port)
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.reports:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (FileNotFoundError, json.JSONDecodeError) as err:
            raise CliError(f"{path}: {err}")
        if "overall" not in doc:
            raise CliError(f"{path}: not an evaluation report")
        run = Path(path).stem
        rows.append({"run": run, "scope": "overall", **doc["overall"]})
        for cat, agg in sorted(doc.get("per_category", {}).items()):
            rows.append({"run": run, "scope": cat, **agg})
    columns = ["run", "scope", "cd_j2j", "cd_j2b", "cd_b2b", "n"]
    ordered = [{k: row.get(k, "") for k in columns} for row in rows]
    if args.out:
        _write_csv(args.out, ordered)
    else:
        writer = csv.DictWriter(sys.stdout, fieldnames=columns)
        writer.writeheader()
        writer.writerows(ordered)
    return 0


# -- parser --------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skelgen",
        description="Stroke-conditioned 3D skeleton generation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        return p

    p = add("align", cmd_align, "rotate skeleton records into the canonical "
            "frame")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--no-oracle", action="store_true",
                   help="fail records instead of falling back to the oracle")

    p = add("filter", cmd_filter, "apply dataset filters to a manifest")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--strict", action="store_true",
                   help="abort on unreadable records instead of counting "
                   "them")

    p = add("simulate-strokes", cmd_simulate_strokes,
            "project records to jittered 2D drawings")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)

    p = add("train-vae", cmd_train_vae, "train the skeleton autoencoder")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)

    p = add("train-dit", cmd_train_dit, "train the latent denoiser on top "
            "of a trained autoencoder")
    p.add_argument("--data", required=True)
    p.add_argument("--vae", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)

    p = add("sample", cmd_sample, "generate one skeleton from a stroke file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--stroke", required=True)
    p.add_argument("--text")
    p.add_argument("--seed", type=int)
    p.add_argument("--guidance", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--out")

    p = add("eval", cmd_eval, "score predictions against references")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out")
    p.add_argument("--samples-per-bone", type=int, default=32)

    p = add("build-pairs", cmd_build_pairs, "sample candidate pairs and "
            "keep decisively ranked ones")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--conditions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--margin", type=float)
    p.add_argument("--seed0", type=int, default=0)

    p = add("dpo-finetune", cmd_dpo_finetune, "push the denoiser toward "
            "pair winners")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--conditions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)

    p = add("serve", cmd_serve, "run the HTTP generation service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    p = add("report", cmd_report, "flatten evaluation reports into CSV")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out")

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    except (ParseError, ckpt.CheckpointError, FileNotFoundError,
            IsADirectoryError, json.JSONDecodeError, ValueError,
            KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:
        print(f"internal error: {err!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
