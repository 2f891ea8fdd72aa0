"""Command-line entry point.

Subcommands: pretrain, finetune, predict, eval, benchmark, select-features,
export-embeddings. Every run writes a JSON manifest next to its outputs.

Exit codes: 0 success, 2 configuration error, 3 missing input file,
4 malformed data, 1 any other failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import benchmark as bench
from .config import ConfigError, RunConfig
from .data import DataError, FeatureSchema, load_dataset
from .feature_select import StopRule, backward_eliminate
from .finetune import TaskSpec, finetune_loop, predict_scores
from .metrics import auprc, auroc, ece
from .model import Model
from .pretrain import pretrain_loop

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_FILE = 3
EXIT_DATA = 4


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error:config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"error:missing-file: {e}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except DataError as e:
        print(f"error:data: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, RuntimeError, KeyError) as e:
        print(f"error:runtime: {e}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tabfusion",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--config", help="JSON run-config file (defaults used when omitted)")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--threads", type=int, default=1, help="parallelism limit")
    p.add_argument("--dry-run", action="store_true", help="validate config and data, touch no model state")
    sub = p.add_subparsers(dest="command")

    def data_args(sp, embeddings=True):
        sp.add_argument("--schema", required=True)
        sp.add_argument("--data", required=True)
        if embeddings:
            sp.add_argument("--embeddings", help="binary f32 sidecar for embedding features")

    sp = sub.add_parser("pretrain", help="self-supervised pre-training")
    data_args(sp)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--out-checkpoint", required=True)
    sp.add_argument("--loss-log")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("finetune", help="supervised fine-tuning with SNGP heads")
    data_args(sp)
    sp.add_argument("--task", required=True, action="append", help="task name (repeatable)")
    sp.add_argument("--init-checkpoint")
    sp.add_argument("--out-checkpoint", required=True)
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("predict", help="calibrated predictions for snapshots")
    data_args(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--task", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("eval", help="metrics on a labeled dataset")
    data_args(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--task", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("benchmark", help="k-fold public-benchmark run")
    sp.add_argument("--dataset", required=True, choices=sorted(bench.DATASETS))
    sp.add_argument("--data-dir", default="data")
    sp.add_argument("--data", help="explicit path to the dataset CSV")
    sp.add_argument("--folds", type=int)
    sp.add_argument("--pretrain-steps", type=int)
    sp.add_argument("--out", default="metrics.json")
    sp.set_defaults(func=cmd_benchmark)

    sp = sub.add_parser("select-features", help="backward elimination over structured features")
    data_args(sp)
    sp.add_argument("--task", required=True)
    sp.add_argument("--tolerance", type=float, default=0.002)
    sp.add_argument("--min-features", type=int, default=1)
    sp.add_argument("--out-schema", required=True)
    sp.add_argument("--trace")
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("export-embeddings", help="pooled embeddings to binary + index")
    data_args(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out-prefix", required=True)
    sp.add_argument("--pca2d", action="store_true")
    sp.add_argument("--task", help="label column to include in the index")
    sp.set_defaults(func=cmd_export)
    return p


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.threads = args.threads
    cfg.validate()
    return cfg


def _load_data(args):
    for attr in ("schema", "data"):
        path = getattr(args, attr)
        if not Path(path).exists():
            raise FileNotFoundError(f"--{attr} file {path} does not exist")
    emb = getattr(args, "embeddings", None)
    if emb and not Path(emb).exists():
        raise FileNotFoundError(f"--embeddings file {emb} does not exist")
    return load_dataset(args.data, args.schema, emb)


def _write_manifest(out_path, cfg: RunConfig, inputs: dict, started: float) -> None:
    manifest = {
        "config": cfg.to_dict(),
        "inputs": {
            k: hashlib.sha256(Path(v).read_bytes()).hexdigest() for k, v in inputs.items() if v
        },
        "wall_time_s": round(time.time() - started, 3),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    Path(str(out_path) + ".manifest.json").write_text(json.dumps(manifest, indent=2))


def cmd_pretrain(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    schema, snapshots = _load_data(args)
    if args.dry_run:
        print(f"dry-run ok: {len(snapshots)} snapshots, {len(schema)} features")
        return EXIT_OK
    if args.steps is not None:
        cfg.pretrain_steps = args.steps
    if cfg.pretrain_steps <= 0:
        cfg.pretrain_steps = 200
    model = bench.build_model(schema, cfg)
    pretrain_loop(model, snapshots, bench.pretrain_config(cfg), log_path=args.loss_log)
    model.save(args.out_checkpoint, cfg.to_dict())
    _write_manifest(args.out_checkpoint, cfg, {"schema": args.schema, "data": args.data}, started)
    return EXIT_OK


def cmd_finetune(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    schema, snapshots = _load_data(args)
    if args.dry_run:
        print(f"dry-run ok: {len(snapshots)} snapshots, {len(schema)} features")
        return EXIT_OK
    if args.init_checkpoint:
        model = Model.load(
            args.init_checkpoint, schema, cfg.to_dict(), **_model_kwargs(cfg)
        )
    else:
        model = bench.build_model(schema, cfg)
    tasks = []
    for name in args.task:
        spec = next((t for t in schema.tasks if t.name == name), None)
        classes = spec.classes if spec else 2
        tasks.append(TaskSpec(name, classes=classes, gamma=cfg.focal_gamma))
    finetune_loop(model, snapshots, tasks, bench.finetune_config(cfg))
    model.save(args.out_checkpoint, cfg.to_dict())
    _write_manifest(args.out_checkpoint, cfg, {"schema": args.schema, "data": args.data}, started)
    return EXIT_OK


def _model_kwargs(cfg: RunConfig) -> dict:
    return dict(
        d=cfg.d,
        n_layers=cfg.n_layers,
        heads=cfg.heads,
        ffn_dim=cfg.ffn_dim,
        d_prime=cfg.d_prime,
        spectral_norm=cfg.spectral_norm,
        asset_criterion=cfg.asset_criterion,
        seed=cfg.seed,
    )


def cmd_predict(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    schema, snapshots = _load_data(args)
    if not Path(args.checkpoint).exists():
        raise FileNotFoundError(f"--checkpoint file {args.checkpoint} does not exist")
    if args.dry_run:
        print(f"dry-run ok: {len(snapshots)} snapshots")
        return EXIT_OK
    model = Model.load(args.checkpoint, schema, cfg.to_dict(), **_model_kwargs(cfg))
    if args.task not in model.heads:
        raise ConfigError(f"checkpoint has no head for task '{args.task}'")
    head = model.heads[args.task]
    with Path(args.out).open("w") as fh:
        for lo in range(0, len(snapshots), cfg.batch_size):
            batch = snapshots[lo : lo + cfg.batch_size]
            x, mask = model.encoder.assemble_tokens(batch)
            _, pooled = model.trunk(x, mask, mode="inference")
            result = head.predict(pooled)
            for i in range(len(batch)):
                rec = {
                    "task": args.task,
                    "probs": [round(float(v), 8) for v in result["probs"][i]],
                    "variance": None
                    if not result["calibrated"]
                    else round(float(result["variance"][i]), 8),
                    "calibrated": bool(result["calibrated"]),
                }
                fh.write(json.dumps(rec) + "\n")
    _write_manifest(args.out, cfg, {"schema": args.schema, "data": args.data}, started)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    schema, snapshots = _load_data(args)
    if args.dry_run:
        print(f"dry-run ok: {len(snapshots)} snapshots")
        return EXIT_OK
    model = Model.load(args.checkpoint, schema, cfg.to_dict(), **_model_kwargs(cfg))
    labeled = [s for s in snapshots if s.labels.get(args.task) is not None]
    scores = predict_scores(model, labeled, args.task)
    y = np.array([s.labels[args.task] for s in labeled])
    result = {
        "task": args.task,
        "n": len(labeled),
        "auroc": auroc(scores, y),
        "auprc": auprc(scores, y),
        "ece": ece(scores, y),
    }
    text = json.dumps(result, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = _load_config(args)
    if args.folds is not None:
        cfg.folds = args.folds
    if args.pretrain_steps is not None:
        cfg.pretrain_steps = args.pretrain_steps
    cfg.validate()
    if args.dry_run:
        path = Path(args.data) if args.data else Path(args.data_dir) / f"{args.dataset}.csv"
        bench.load_benchmark_csv(path, args.dataset)
        print("dry-run ok")
        return EXIT_OK
    report = bench.run_benchmark(
        args.dataset, cfg, data_dir=args.data_dir, data_path=args.data, report_path=args.out
    )
    print(report.format_text())
    return EXIT_OK


def cmd_select(args) -> int:
    cfg = _load_config(args)
    schema, snapshots = _load_data(args)
    if args.dry_run:
        print(f"dry-run ok: {len(snapshots)} snapshots")
        return EXIT_OK
    rule = StopRule(tolerance=args.tolerance, min_features=args.min_features)
    reduced, trace = backward_eliminate(snapshots, schema, args.task, rule, seed=cfg.seed)
    reduced.save(args.out_schema)
    if args.trace:
        with Path(args.trace).open("w") as fh:
            fh.write(f"baseline {trace.baseline_metric:.6f}\n")
            for rnd, name, imp, metric in trace.rounds:
                fh.write(f"round {rnd} removed {name} importance {imp:.6f} metric {metric:.6f}\n")
    print(f"kept {len(reduced)} of {len(schema)} features")
    return EXIT_OK


def cmd_export(args) -> int:
    cfg = _load_config(args)
    schema, snapshots = _load_data(args)
    if args.dry_run:
        print(f"dry-run ok: {len(snapshots)} snapshots")
        return EXIT_OK
    model = Model.load(args.checkpoint, schema, cfg.to_dict(), **_model_kwargs(cfg))
    bench.export_embeddings(snapshots, model, args.out_prefix, task=args.task, pca2d=args.pca2d)
    print(f"exported {len(snapshots)} embeddings")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
