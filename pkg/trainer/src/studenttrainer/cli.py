"""CLI: train a student from subset files, or serve a checkpoint."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from .data import DataSchemaMismatch
from .server import PortInUse, serve
from .train import CheckpointCorrupt, OutOfMemory, TrainSpec, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="studenttrainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fine-tune a student on exported subsets")
    p.add_argument("--subset", action="append", required=True, dest="subsets",
                   help="subset JSONL file; repeat to train on a union")
    p.add_argument("--base-model", default="tiny")
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--roles", default="", help="comma-separated roles covered (metadata)")

    p = sub.add_parser("serve", help="serve a checkpoint over the student protocol")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--host", default="127.0.0.1")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        if args.command == "train":
            spec = TrainSpec(
                subset_files=tuple(args.subsets),
                base_model=args.base_model,
                learning_rate=args.lr,
                batch_size=args.batch_size,
                epochs=args.epochs,
                seed=args.seed,
                output_dir=args.out_dir,
                roles=tuple(r for r in args.roles.split(",") if r),
            )
            out_dir = train(spec)
            print(f"train: checkpoint written to {out_dir}")
            return 0
        if args.command == "serve":
            serve(args.checkpoint, args.port, args.host)
            return 0
        return 2
    except (DataSchemaMismatch, OutOfMemory, CheckpointCorrupt, PortInUse) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
