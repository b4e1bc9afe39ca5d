"""Command-line pipeline: gen -> train/finetune -> eval, plus gradcheck and
one-shot replication of both case studies.  Every command writes a JSON run
manifest next to its primary artifact."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, profiles
from .datafile import DatasetFileError, read_dataset, write_dataset
from .evaluation import evaluate, render_report, reports_to_csv
from .gradcheck import find_check_point, grad_check
from .models import (
    CheckpointError,
    CnnSpec,
    FingerprintMismatchError,
    MlpSpec,
    SpecError,
    build_model,
    fingerprint,
    load_checkpoint,
    restore_for_transfer,
    save_checkpoint,
    spec_from_dict,
)
from .training import DivergenceError, TrainConfig, fine_tune, train
from .waveforms import ConfigError, GenConfig, build_dataset, split

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4
EXIT_FINGERPRINT = 5

GRADCHECK_TOLERANCE = 1e-4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _write_manifest(out_path: Path, command: str, config_snapshot: dict, seeds: dict,
                    artifacts: dict) -> None:
    manifest = {
        "command": command,
        "config": config_snapshot,
        "seeds": seeds,
        "artifacts": {k: str(v) for k, v in artifacts.items()},
        "tool_version": __version__,
    }
    path = Path(str(out_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_gen_config(args) -> GenConfig:
    if args.profile:
        cfg = profiles.GEN_PROFILES[args.profile]
    elif args.config:
        try:
            cfg = GenConfig.from_json(Path(args.config).read_text())
        except OSError as exc:
            raise CliError(f"cannot read config: {exc}", EXIT_CONFIG) from exc
    else:
        raise CliError("gen needs --profile or --config", EXIT_USAGE)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.count is not None:
        cfg = dataclasses.replace(cfg, count=args.count)
    return cfg


def _model_spec(name: str):
    if name == "cnn":
        return profiles.CNN_SPEC
    if name == "mlp":
        return profiles.MLP_SPEC
    try:
        return spec_from_dict(json.loads(Path(name).read_text()))
    except (OSError, json.JSONDecodeError, SpecError, KeyError) as exc:
        raise CliError(f"cannot load model spec {name!r}: {exc}", EXIT_CONFIG) from exc


def _read_dataset(path):
    try:
        return read_dataset(path)
    except DatasetFileError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc


def _train_config(args, base: TrainConfig) -> TrainConfig:
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    if args.batch is not None:
        overrides["batch_size"] = args.batch
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "freeze_conv", False):
        overrides["freeze_conv"] = True
    try:
        return dataclasses.replace(base, **overrides)
    except ValueError as exc:
        raise CliError(f"bad training config: {exc}", EXIT_CONFIG) from exc


def cmd_gen(args) -> int:
    cfg = _load_gen_config(args)
    try:
        cfg.validate()
        dataset = build_dataset(cfg)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    out = Path(args.out)
    write_dataset(dataset, out)
    _write_manifest(out, "gen", cfg.to_dict(), {"master_seed": cfg.seed},
                    {"dataset": out, "dataset_sha256": _sha256(out)})
    print(f"wrote {len(dataset)} windows to {out}")
    return EXIT_OK


def _run_training(model, dataset, config):
    try:
        return train(model, dataset, config)
    except DivergenceError as exc:
        raise CliError(f"training diverged: {exc}", EXIT_DIVERGENCE) from exc


def cmd_train(args) -> int:
    dataset = _read_dataset(args.data)
    spec = _model_spec(args.model)
    base = profiles.CASE1_CNN_TRAIN if isinstance(spec, CnnSpec) else profiles.CASE1_MLP_TRAIN
    config = _train_config(args, base)
    try:
        train_set, _ = split(dataset, args.train_fraction, args.split_seed)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    model = build_model(spec, args.init_seed)
    run = _run_training(model, train_set, config)
    out = Path(args.out)
    metadata = {
        "init_seed": args.init_seed,
        "epochs_trained": len(run.records),
        "final_train_loss": run.records[-1].train_loss if run.records else None,
        "final_val_loss": run.records[-1].val_loss if run.records else None,
        "dataset_seed": dataset.master_seed,
    }
    save_checkpoint(run.model, metadata, out)
    curves = Path(args.curves) if args.curves else out.with_suffix(".curves.csv")
    run.to_csv(curves)
    _write_manifest(
        out, "train",
        {"model": spec.to_dict(), "train": dataclasses.asdict(config),
         "train_fraction": args.train_fraction, "split_seed": args.split_seed},
        {"init_seed": args.init_seed, "train_seed": config.seed, "split_seed": args.split_seed},
        {"checkpoint": out, "checkpoint_sha256": _sha256(out), "curves": curves},
    )
    print(f"trained {len(run.records)} epochs; "
          f"final val loss {run.records[-1].val_loss:.4f}; checkpoint {out}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    dataset = _read_dataset(args.data)
    base = profiles.CASE2_SCRATCH if args.scratch else profiles.CASE2_FINETUNE
    config = _train_config(args, base)
    try:
        train_set, _ = split(dataset, args.train_fraction, args.split_seed)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    try:
        ckpt = load_checkpoint(args.ckpt)
        if args.scratch:
            model = build_model(ckpt.spec, args.init_seed)
            run = _run_training(model, train_set, config)
        else:
            run = _run_training(restore_for_transfer(ckpt, ckpt.spec), train_set, config)
    except FingerprintMismatchError as exc:
        raise CliError(str(exc), EXIT_FINGERPRINT) from exc
    except CheckpointError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    out = Path(args.out)
    metadata = {
        "init_seed": args.init_seed if args.scratch else ckpt.metadata.get("init_seed", 0),
        "epochs_trained": len(run.records),
        "final_train_loss": run.records[-1].train_loss if run.records else None,
        "final_val_loss": run.records[-1].val_loss if run.records else None,
        "dataset_seed": dataset.master_seed,
        "warm_start": not args.scratch,
    }
    save_checkpoint(run.model, metadata, out)
    curves = Path(args.curves) if args.curves else out.with_suffix(".curves.csv")
    run.to_csv(curves)
    _write_manifest(
        out, "finetune",
        {"train": dataclasses.asdict(config), "scratch": args.scratch,
         "train_fraction": args.train_fraction, "split_seed": args.split_seed},
        {"train_seed": config.seed, "split_seed": args.split_seed},
        {"checkpoint": out, "checkpoint_sha256": _sha256(out), "curves": curves,
         "source_checkpoint": args.ckpt},
    )
    mode = "scratch" if args.scratch else "fine-tune"
    conv = run.convergence_epoch
    print(f"{mode}: {len(run.records)} epochs, convergence epoch {conv}, checkpoint {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    dataset = _read_dataset(args.data)
    if args.holdout:
        try:
            _, dataset = split(dataset, args.train_fraction, args.split_seed)
        except ConfigError as exc:
            raise CliError(str(exc), EXIT_CONFIG) from exc
    if len(dataset) == 0:
        raise CliError("evaluation dataset is empty", EXIT_USAGE)
    reports = []
    for ckpt_path in args.ckpt:
        try:
            ckpt = load_checkpoint(ckpt_path)
            model = restore_for_transfer(ckpt, ckpt.spec)
        except FingerprintMismatchError as exc:
            raise CliError(str(exc), EXIT_FINGERPRINT) from exc
        except CheckpointError as exc:
            raise CliError(str(exc), EXIT_DATA) from exc
        reports.append(
            evaluate(model, dataset, threshold=args.threshold, name=Path(ckpt_path).stem,
                     dataset_id=str(args.data), model_fingerprint=ckpt.fingerprint.hex())
        )
    table = render_report(*reports)
    print(table, end="")
    if args.out:
        out = Path(args.out)
        reports_to_csv(reports, out)
        _write_manifest(out, "eval",
                        {"threshold": args.threshold, "holdout": args.holdout,
                         "train_fraction": args.train_fraction, "split_seed": args.split_seed},
                        {"split_seed": args.split_seed},
                        {"report": out, "table": table})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    spec = _model_spec(args.model)
    model = build_model(spec, args.seed)
    x, y = find_check_point(model, seed=args.seed)
    err = grad_check(model, x, y)
    status = "PASS" if err < GRADCHECK_TOLERANCE else "FAIL"
    print(f"gradcheck {args.model}: max relative error {err:.3e} [{status}]")
    return EXIT_OK if err < GRADCHECK_TOLERANCE else EXIT_USAGE


def cmd_replicate(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ns = argparse.Namespace
    if args.case == "case1":
        data = outdir / "case1.dataset"
        cmd_gen(ns(profile="case1", config=None, seed=args.seed, count=None, out=data))
        common = dict(data=data, epochs=None, lr=None, batch=None, seed=None,
                      train_fraction=profiles.CASE1_TRAIN_FRACTION, split_seed=profiles.SPLIT_SEED,
                      init_seed=1, curves=None)
        cmd_train(ns(model="cnn", out=outdir / "cnn.ckpt", **common))
        cmd_train(ns(model="mlp", out=outdir / "mlp.ckpt", **common))
        return cmd_eval(ns(ckpt=[outdir / "cnn.ckpt", outdir / "mlp.ckpt"], data=data,
                           holdout=True, train_fraction=profiles.CASE1_TRAIN_FRACTION,
                           split_seed=profiles.SPLIT_SEED, threshold=0.5,
                           out=outdir / "case1_report.csv"))
    if not args.source_ckpt:
        raise CliError("replicate case2 needs --source-ckpt (the trained case1 CNN)", EXIT_USAGE)
    data = outdir / "case2.dataset"
    cmd_gen(ns(profile="case2", config=None, seed=args.seed, count=None, out=data))
    common = dict(data=data, epochs=None, lr=None, batch=None, seed=None,
                  train_fraction=profiles.CASE2_TRAIN_FRACTION, split_seed=profiles.SPLIT_SEED,
                  init_seed=2, curves=None, ckpt=args.source_ckpt)
    cmd_finetune(ns(scratch=False, out=outdir / "transfer.ckpt", freeze_conv=False, **common))
    cmd_finetune(ns(scratch=True, out=outdir / "scratch.ckpt", freeze_conv=False, **common))
    return cmd_eval(ns(ckpt=[outdir / "scratch.ckpt", outdir / "transfer.ckpt"], data=data,
                       holdout=True, train_fraction=profiles.CASE2_TRAIN_FRACTION,
                       split_seed=profiles.SPLIT_SEED, threshold=0.5,
                       out=outdir / "case2_report.csv"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hifbench",
                                     description="HIF detection workbench: synthetic waveforms, "
                                                 "from-scratch CNN/MLP, transfer learning")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen", help="generate a labeled dataset file")
    p.add_argument("--profile", choices=sorted(profiles.GEN_PROFILES))
    p.add_argument("--config", help="JSON generation config")
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on the train side of a dataset split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", default="cnn", help="cnn, mlp, or a spec JSON path")
    p.add_argument("--out", required=True)
    p.add_argument("--curves")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--init-seed", type=int, default=1, dest="init_seed")
    p.add_argument("--train-fraction", type=float, default=0.8, dest="train_fraction")
    p.add_argument("--split-seed", type=int, default=profiles.SPLIT_SEED, dest="split_seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="fine-tune from a checkpoint (or retrain from scratch)")
    p.add_argument("--ckpt", required=True, help="source checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--curves")
    p.add_argument("--scratch", action="store_true",
                   help="ignore checkpoint weights, random initialization")
    p.add_argument("--freeze-conv", action="store_true", dest="freeze_conv")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--init-seed", type=int, default=2, dest="init_seed")
    p.add_argument("--train-fraction", type=float, default=0.5, dest="train_fraction")
    p.add_argument("--split-seed", type=int, default=profiles.SPLIT_SEED, dest="split_seed")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate checkpoints on a dataset (or its holdout split)")
    p.add_argument("--ckpt", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--holdout", action="store_true", help="evaluate the test side of the split")
    p.add_argument("--train-fraction", type=float, default=0.8, dest="train_fraction")
    p.add_argument("--split-seed", type=int, default=profiles.SPLIT_SEED, dest="split_seed")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all analytic gradients")
    p.add_argument("--model", default="cnn")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("replicate", help="run a full case study end to end")
    p.add_argument("case", choices=["case1", "case2"])
    p.add_argument("--outdir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--source-ckpt", dest="source_ckpt",
                   help="case1 CNN checkpoint (required for case2)")
    p.set_defaults(func=cmd_replicate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
