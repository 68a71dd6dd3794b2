"""Command-line entry point: ``bts {prepare,train,evaluate,ablate,scenario,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from .audio import SegmentCache
from .config import RunConfig, load_config
from .errors import BtsError, MissingManifest
from .icbhi import Manifest, OFFICIAL_COUNTS, Split, build_manifest
from .model import resolve_checkpoint
from .report import ablation_table, load_reports, main_table, render_all, scenario_table
from .text import describe, write_description_table
from .train import (
    Scenario,
    evaluate_run,
    run_ablation_matrix,
    run_experiment,
    run_scenario_matrix,
    samples_from_manifest,
)

log = logging.getLogger("bts")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="YAML run configuration")
    p.add_argument("--dataset-root")
    p.add_argument("--split-list")
    p.add_argument("--demographics")
    p.add_argument("--output-dir")
    p.add_argument("--cache-dir")
    p.add_argument("--encoder", choices=["clap", "stub"])
    p.add_argument("--checkpoint")
    p.add_argument("--d", type=int, help="stub encoder embedding width")
    p.add_argument("--encoder-seed", type=int)
    p.add_argument("--mode", choices=["Fused", "AudioOnly"])
    p.add_argument("--freeze-encoders", action="store_true", default=None)
    p.add_argument("--subset", help='metadata attributes, e.g. "All" or "Age-Loc-Dev"')
    p.add_argument("--scenario", choices=[s.value for s in Scenario])
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",")], help="comma-separated")
    p.add_argument("--pad-mode", choices=["cyclic", "zero"])
    p.add_argument("--device", default="cpu")
    p.add_argument("-v", "--verbose", action="store_true")


def _resolve(args) -> RunConfig:
    overrides = {
        "dataset_root": args.dataset_root,
        "split_list": args.split_list,
        "demographics": args.demographics,
        "output_dir": args.output_dir,
        "cache_dir": args.cache_dir,
        "model.encoder": args.encoder,
        "model.checkpoint": args.checkpoint,
        "model.d": args.d,
        "model.encoder_seed": args.encoder_seed,
        "model.mode": args.mode,
        "model.freeze_encoders": args.freeze_encoders,
        "subset": args.subset,
        "scenario": args.scenario,
        "train.epochs": args.epochs,
        "train.lr": args.lr,
        "train.batch_size": args.batch_size,
        "train.seeds": args.seeds,
        "prep.pad_mode": args.pad_mode,
    }
    return load_config(args.config, overrides)


def _load_manifest(cfg: RunConfig) -> Manifest:
    if not cfg.manifest_path.is_file():
        raise MissingManifest(f"{cfg.manifest_path} not found; run `bts prepare` first")
    return Manifest.load(cfg.manifest_path)


def _samples(cfg: RunConfig, manifest: Manifest, split: Split):
    return samples_from_manifest(manifest.split(split), SegmentCache(cfg.segment_cache_dir, cfg.prep))


def _check_encoder(cfg: RunConfig) -> None:
    if cfg.experiment.model.encoder == "clap":
        resolve_checkpoint(cfg.experiment.model.checkpoint)


def cmd_prepare(cfg: RunConfig, args) -> int:
    if not cfg.dataset_root or not cfg.split_list:
        raise MissingManifest("prepare needs --dataset-root and --split-list (or a config providing them)")
    manifest = build_manifest(cfg.dataset_root, cfg.split_list, cfg.demographics)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest.save(cfg.manifest_path)
    cfg.dump(out / "config.yaml")

    cache = SegmentCache(cfg.segment_cache_dir, cfg.prep)
    with open(out / "cache_index.jsonl", "w") as fh:
        for e in manifest.entries:
            cache.get(e)
            fh.write(json.dumps({"sample_id": e.sample_id, "key": cache.key(e)}) + "\n")
    subset = cfg.experiment.attribute_subset
    write_description_table(
        out / f"descriptions_{subset.name}.jsonl",
        [e.sample_id for e in manifest.entries],
        [describe(e.meta, subset) for e in manifest.entries],
        seed=0,
    )

    n_train, n_test = (sum(manifest.counts[s].values()) for s in Split)
    if manifest.matches_official_counts():
        print(f"counts OK: {n_train} train / {n_test} test")
    else:
        official = [sum(OFFICIAL_COUNTS[s].values()) for s in Split]
        print(f"counts differ from the official release: {n_train} train / {n_test} test (official {official[0]} / {official[1]})")
    print(manifest.count_summary())
    print(f"manifest: {cfg.manifest_path}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    _check_encoder(cfg)
    manifest = _load_manifest(cfg)
    run_dir = cfg.runs_dir / cfg.experiment.hash
    if args.resume and (run_dir / "report.json").is_file():
        print(f"run {run_dir} is already complete; nothing to do")
        print(main_table(load_reports([run_dir])))
        return 0
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.dump(run_dir / "run_config.yaml")
    report = run_experiment(
        cfg.experiment,
        _samples(cfg, manifest, Split.TRAIN),
        _samples(cfg, manifest, Split.TEST),
        cfg.runs_dir,
        resume=args.resume,
        device=args.device,
    )
    print(main_table([report]))
    print(f"run directory: {run_dir}")
    return 0


def _run_dir(cfg: RunConfig, args) -> Path:
    # Scenarios are test-time only, so the trained run is the Standard one.
    trained = replace(cfg.experiment, scenario=Scenario.STANDARD.value)
    return Path(args.run) if args.run else cfg.runs_dir / trained.hash


def cmd_evaluate(cfg: RunConfig, args) -> int:
    manifest = _load_manifest(cfg)
    report = evaluate_run(_run_dir(cfg, args), _samples(cfg, manifest, Split.TEST), cfg.experiment.scenario, args.device)
    print(scenario_table([report]) if report["mode"] == "Fused" else main_table([report]))
    return 0


def cmd_ablate(cfg: RunConfig, args) -> int:
    _check_encoder(cfg)
    manifest = _load_manifest(cfg)
    reports = run_ablation_matrix(
        cfg.experiment,
        _samples(cfg, manifest, Split.TRAIN),
        _samples(cfg, manifest, Split.TEST),
        cfg.runs_dir,
        resume=args.resume,
        device=args.device,
    )
    print(ablation_table(reports))
    return 0


def cmd_scenario(cfg: RunConfig, args) -> int:
    manifest = _load_manifest(cfg)
    reports = run_scenario_matrix(_run_dir(cfg, args), _samples(cfg, manifest, Split.TEST), device=args.device)
    print(scenario_table(reports))
    return 0


def cmd_report(cfg: RunConfig, args) -> int:
    reports = load_reports(args.run_dirs)
    print(render_all(reports))
    if args.json:
        Path(args.json).write_text(json.dumps(reports, indent=2, sort_keys=True) + "\n")
    return 0


COMMANDS = {
    "prepare": (cmd_prepare, "parse the dataset, write the manifest and fill the segment cache"),
    "train": (cmd_train, "fine-tune and evaluate once per seed"),
    "evaluate": (cmd_evaluate, "re-evaluate a trained run under a metadata scenario"),
    "ablate": (cmd_ablate, "run the metadata-subset ablation matrix"),
    "scenario": (cmd_scenario, "evaluate a trained run under every test-time metadata scenario"),
    "report": (cmd_report, "render result tables from run directories"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bts", description="Metadata-text + audio respiratory sound classification.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        _common(p)
        if name in ("train", "ablate"):
            p.add_argument("--resume", action="store_true", help="reuse completed seeds and runs")
        if name in ("evaluate", "scenario"):
            p.add_argument("--run", help="run directory (default: the run matching the config)")
        if name == "report":
            p.add_argument("run_dirs", nargs="+")
            p.add_argument("--json", help="also write the collected reports to this file")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        return COMMANDS[args.command][0](cfg, args)
    except BtsError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, TypeError, yaml.YAMLError) as exc:
        print(f"error[ConfigError]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
