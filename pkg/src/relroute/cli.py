"""Command-line interface.

Subcommands: ``analyze`` (table classification), ``routes`` (atomic route
listing), ``generate`` (synthetic datasets), ``train``, and ``eval``.
Results go to stdout in the declared format (JSON or DOT); diagnostics go to
stderr.  Exit codes: 0 success, 1 usage or syntax error, 2 data/validation
error, 3 training divergence.

``RELROUTE_THREADS`` caps internal parallelism; the current implementation
is fully sequential (the deterministic default of 1) for any setting, and the
variable is validated so scripts can rely on it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, dump_checkpoint, load_checkpoint
from .database import DataValidationError, build_entity_graph, load_database
from .schema import (SchemaError, SchemaSyntaxError, SchemaValidationError,
                     classify_tables, derive_atomic_routes, emit_routes,
                     parse_schema)
from .synth import MotifConfig, write_dataset
from .train import (TrainConfig, TrainingDiverged, evaluate_checkpoint,
                    load_task, load_task_table, seed_sweep, train_loop)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _threads():
    raw = os.environ.get("RELROUTE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise SystemExit(f"RELROUTE_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise SystemExit("RELROUTE_THREADS must be >= 1")
    return n


def _read_schema(path):
    p = Path(path)
    if not p.is_file():
        raise DataValidationError(f"no schema file at {p}")
    return parse_schema(p.read_text(encoding="utf-8"))


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_analyze(args):
    schema = _read_schema(args.schema)
    classes = classify_tables(schema)
    counts = {"entity": 0, "bridge": 0, "hub": 0}
    tables = {}
    for tdef in schema.tables:
        cls = classes[tdef.name]
        counts[cls.value] += 1
        tables[tdef.name] = {
            "class": cls.value,
            "foreign_keys": len(tdef.foreign_keys),
        }
    _emit({"tables": tables, "counts": counts})
    return EXIT_OK


def cmd_routes(args):
    schema = _read_schema(args.schema)
    routes = derive_atomic_routes(schema)
    print(emit_routes(routes, args.format))
    return EXIT_OK


def cmd_generate(args):
    cfg = MotifConfig(
        motif=args.motif, n_src=args.n_src, n_dst=args.n_dst, n_mid=args.n_mid,
        d_attr=args.d_attr, noise_std=args.noise_std, rng_seed=args.seed[0],
        hub_concentration=args.hub_concentration)
    out = write_dataset(cfg, args.out)
    print(f"wrote dataset to {out}", file=sys.stderr)
    _emit({"out": str(out), "motif": args.motif, "seed": args.seed[0]})
    return EXIT_OK


def _train_config(args, seed) -> TrainConfig:
    model = args.model.replace("-", "_")
    return TrainConfig(
        model=model, d_model=args.dim, layers=args.layers, heads=args.heads,
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        fanout=args.fanout, patience=args.patience, rng_seed=seed,
        rpe=args.rpe, time_encoder=args.time_enc, head=args.head)


def cmd_train(args):
    _threads()
    schema = _read_schema(args.schema)
    db = load_database(schema, args.data)
    graph = build_entity_graph(db)
    task = load_task(args.task)
    table = load_task_table(task, db)
    if len(args.seed) > 1:
        if args.checkpoint is not None:
            raise SystemExit("--checkpoint requires a single --seed")
        result = seed_sweep(graph, table, _train_config(args, args.seed[0]),
                            args.seed)
        _emit(result)
        return EXIT_OK
    report, payload = train_loop(graph, table, _train_config(args, args.seed[0]))
    if args.checkpoint is not None:
        dump_checkpoint(args.checkpoint, payload)
        print(f"checkpoint written to {args.checkpoint}", file=sys.stderr)
    _emit(report)
    return EXIT_OK


def cmd_eval(args):
    _threads()
    payload = load_checkpoint(args.checkpoint)
    schema = _read_schema(args.schema)
    db = load_database(schema, args.data)
    graph = build_entity_graph(db)
    task = load_task(args.task)
    table = load_task_table(task, db)
    _emit(evaluate_checkpoint(payload, graph, table))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relroute",
                     description="Atomic routes and composite message passing "
                                 "for relational data")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="classify schema tables")
    p.add_argument("--schema", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("routes", help="list atomic routes")
    p.add_argument("--schema", required=True)
    p.add_argument("--format", choices=["json", "dot"], default="json")
    p.set_defaults(func=cmd_routes)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--motif", choices=["bridge", "hub"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, nargs="+", default=[0])
    p.add_argument("--n-src", type=int, default=200)
    p.add_argument("--n-dst", type=int, default=200)
    p.add_argument("--n-mid", type=int, default=2000)
    p.add_argument("--d-attr", type=int, default=4)
    p.add_argument("--noise-std", type=float, default=1.0)
    p.add_argument("--hub-concentration", type=float, default=0.9)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model on a task")
    p.add_argument("--schema", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--model", choices=["relgnn", "relgnn-noattn", "heterosage"],
                   default="relgnn")
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--fanout", type=int, default=16)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--seed", type=int, nargs="+", default=[0])
    p.add_argument("--rpe", action="store_true")
    p.add_argument("--time-enc", choices=["none", "time2vec", "fixedcos"],
                   default="none")
    p.add_argument("--head", choices=["auto", "mlp", "idgnn", "twotower"],
                   default="auto")
    p.add_argument("--checkpoint", help="write the trained model here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--task", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except SchemaSyntaxError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaValidationError, SchemaError, DataValidationError,
            CheckpointError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except SystemExit as e:
        if isinstance(e.code, str):
            print(f"error: {e.code}", file=sys.stderr)
            return EXIT_USAGE
        return int(e.code or 0)


if __name__ == "__main__":
    sys.exit(main())
