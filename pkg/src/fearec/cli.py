"""Command-line entry point.

Subcommands: ``prepare`` (raw log -> processed dataset), ``train``,
``evaluate``, ``inspect`` (attention export for one user), ``check``
(property suites).  Options may come from a flat JSON config file; explicit
command-line flags override file values, and every run echoes its effective
configuration into the output directory so it can be reproduced exactly.

Exit codes: 0 success, 1 check or metric failure, 2 I/O or configuration
error.  ``FEAREC_THREADS`` caps the worker thread count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .data import SequenceDataset, build_dataset, load_interactions, pad_truncate
from .encoder import FEARec, ModelConfig
from .evaluation import evaluate, export_attention
from .training import LossWeights, TrainConfig, run_training

TRAIN_DEFAULTS: dict = {
    "data": None,
    "out": None,
    "seed": None,
    "epochs": 10,
    "batch_size": 256,
    "learning_rate": 0.001,
    "lambda1": 0.1,
    "lambda2": 0.1,
    "cl_temperature": 1.0,
    "patience": None,
    "max_len": 50,
    "dim": 64,
    "num_layers": 2,
    "num_heads": 2,
    "alpha": 1.0,
    "gamma": 0.5,
    "topk_scale": 1.0,
    "dropout_rate": 0.5,
    "causal_mask": True,
    "exclude_seen": True,
}


class CliError(Exception):
    """Configuration or I/O problem; maps to exit code 2."""


def _load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise CliError(f"config file not found: {path}")
    try:
        loaded = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(loaded, dict):
        raise CliError(f"config file {path} must hold a flat JSON object")
    unknown = set(loaded) - set(TRAIN_DEFAULTS)
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}")
    return loaded


def _effective_train_config(args) -> dict:
    cfg = dict(TRAIN_DEFAULTS)
    if args.config is not None:
        cfg.update(_load_config_file(args.config))
    for key in TRAIN_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg["data"] is None:
        raise CliError("a prepared dataset path is required (--data or config 'data')")
    if cfg["out"] is None:
        raise CliError("an output directory is required (--out or config 'out')")
    if cfg["seed"] is None:
        raise CliError("a seed is required for training runs (--seed or config 'seed')")
    return cfg


def _model_config(cfg: dict, num_items: int) -> ModelConfig:
    return ModelConfig(
        num_items=num_items,
        max_len=cfg["max_len"],
        dim=cfg["dim"],
        num_layers=cfg["num_layers"],
        num_heads=cfg["num_heads"],
        alpha=cfg["alpha"],
        gamma=cfg["gamma"],
        topk_scale=cfg["topk_scale"],
        dropout_rate=cfg["dropout_rate"],
        causal_mask=bool(cfg["causal_mask"]),
    )


def cmd_prepare(args) -> int:
    raw = Path(args.input)
    if not raw.exists():
        raise CliError(f"raw interaction file not found: {raw}")
    log = load_interactions(raw, fmt=args.format)
    ds = build_dataset(log, min_count=args.min_count)
    ds.save(args.out)
    stats = ds.stats()
    print(f"wrote {args.out}")
    print(f"  users:      {stats['users']}")
    print(f"  items:      {stats['items']}")
    print(f"  actions:    {stats['actions']}")
    print(f"  avg length: {stats['avg_length']:.2f}")
    print(f"  sparsity:   {stats['sparsity']:.4%}")
    return 0


def cmd_train(args) -> int:
    cfg = _effective_train_config(args)
    data_path = Path(cfg["data"])
    if not data_path.exists():
        raise CliError(f"prepared dataset not found: {data_path}")
    ds = SequenceDataset.load(data_path)

    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    )

    try:
        model_cfg = _model_config(cfg, ds.num_items)
        train_cfg = TrainConfig(
            learning_rate=cfg["learning_rate"],
            batch_size=cfg["batch_size"],
            epochs=cfg["epochs"],
            seed=cfg["seed"],
            cl_temperature=cfg["cl_temperature"],
            patience=cfg["patience"],
        )
        weights = LossWeights(lambda1=cfg["lambda1"], lambda2=cfg["lambda2"])
    except ValueError as exc:
        raise CliError(str(exc)) from exc

    model = FEARec(model_cfg, rng=torch.Generator().manual_seed(cfg["seed"]))
    log_path = out_dir / "train_log.jsonl"
    log_path.write_text("")
    valid_history: list[dict] = []
    best = {"ndcg": -1.0}

    def evaluate_fn(m: FEARec, epoch: int) -> dict:
        report = evaluate(m, ds, "valid", exclude_seen=bool(cfg["exclude_seen"]))
        return dict(report.metrics)

    def epoch_callback(m: FEARec, epoch: int, record: dict) -> bool:
        valid_history.append(
            {k: v for k, v in record.items() if k != "wall_seconds"}
        )
        if record["NDCG@10"] > best["ndcg"]:
            best["ndcg"] = record["NDCG@10"]
            save_checkpoint(out_dir / "best.ckpt", m)
        return False

    def log_fn(record: dict) -> None:
        with log_path.open("a") as handle:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
        print(
            f"epoch {record['epoch']:>3}  rec={record['rec_loss']:.4f}  "
            f"cl={record['cl_loss']:.4f}  freg={record['freg_loss']:.4f}  "
            f"total={record['total']:.4f}  NDCG@10={record.get('NDCG@10', float('nan')):.4f}  "
            f"({record['wall_seconds']:.1f}s)"
        )

    run_training(
        model, ds, train_cfg, weights,
        evaluate_fn=evaluate_fn, epoch_callback=epoch_callback, log_fn=log_fn,
    )
    save_checkpoint(out_dir / "last.ckpt", model)
    (out_dir / "valid_metrics.json").write_text(
        json.dumps(valid_history, sort_keys=True, separators=(",", ":"))
    )
    print(f"checkpoints written to {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise CliError(f"checkpoint not found: {ckpt_path}")
    data_path = Path(args.data)
    if not data_path.exists():
        raise CliError(f"prepared dataset not found: {data_path}")
    model = load_checkpoint(ckpt_path)
    ds = SequenceDataset.load(data_path)
    if model.cfg.num_items != ds.num_items:
        raise CliError(
            f"vocabulary mismatch: checkpoint was trained with "
            f"{model.cfg.num_items} items but the dataset has {ds.num_items}"
        )
    report = evaluate(model, ds, args.split, exclude_seen=not args.include_seen)
    out = Path(args.out) if args.out else ckpt_path.parent / f"report_{args.split}.json"
    report.save(out)
    print(f"wrote {out}")
    for name in ("HR@5", "HR@10", "NDCG@5", "NDCG@10"):
        print(f"  {name}: {report.metrics[name]:.4f}")
    return 0


def cmd_inspect(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise CliError(f"checkpoint not found: {ckpt_path}")
    model = load_checkpoint(ckpt_path)
    ds = SequenceDataset.load(args.data)
    if args.user not in ds.user_index:
        raise CliError(
            f"unknown user {args.user!r}; dataset has {ds.num_users} users "
            f"(examples: {list(ds.user_index)[:5]})"
        )
    user = ds.user_index[args.user]
    train, valid, _ = ds.splits(user)
    ids = pad_truncate(train + [valid], model.cfg.max_len)
    written = export_attention(model, np.asarray(ids), args.out)
    print(f"wrote {len(written)} files to {args.out}")
    return 0


def cmd_check(args) -> int:
    from .checks import run_all_checks

    results = run_all_checks()
    failed = 0
    for name, (ok, detail) in results.items():
        print(f"{name:<10} {'PASS' if ok else 'FAIL'}  ({detail})")
        failed += 0 if ok else 1
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fearec",
        description="Frequency-enhanced hybrid attention sequential recommender",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build a processed dataset from a raw log")
    p.add_argument("--input", required=True, help="raw interaction file")
    p.add_argument("--out", required=True, help="output dataset file")
    p.add_argument("--format", choices=("tsv", "csv"), default="tsv")
    p.add_argument("--min-count", dest="min_count", type=int, default=5)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on a prepared dataset")
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--data", help="prepared dataset file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--cl-temperature", dest="cl_temperature", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--num-layers", dest="num_layers", type=int)
    p.add_argument("--num-heads", dest="num_heads", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--topk-scale", dest="topk_scale", type=float)
    p.add_argument("--dropout-rate", dest="dropout_rate", type=float)
    p.add_argument(
        "--no-causal-mask", dest="causal_mask", action="store_const", const=False
    )
    p.add_argument(
        "--include-seen", dest="exclude_seen", action="store_const", const=False,
        help="rank against the full catalog including already-seen items",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a held-out split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--out", help="report path (default: next to the checkpoint)")
    p.add_argument("--include-seen", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect", help="export attention maps for one user")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--user", required=True, help="original user ID")
    p.add_argument("--out", required=True, help="output directory for CSVs")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("check", help="run the property suites")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    threads = os.environ.get("FEAREC_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
