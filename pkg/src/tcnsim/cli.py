"""Command-line interface.

Subcommands: generate-data, train-embedding, evaluate, train-policy,
imitate-pose, export-embeddings. Success exits 0; any failure prints one
structured ``error: <Kind>: <message>`` line to stderr and exits 1.
``TCNSIM_MAX_WORKERS`` caps worker threads, ``TCNSIM_NUMBA=0`` disables the
JIT kernels.
"""

from __future__ import annotations

import argparse
import sys

from . import pipeline
from .config import load_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tcnsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, data=False):
        p.add_argument("--config", default=None, help="flat key=value config file (defaults apply if omitted)")
        p.add_argument("--out", required=True, help="fresh output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if data:
            p.add_argument("--data", required=True, help="dataset directory (from generate-data)")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="embedding checkpoint file")

    common(sub.add_parser("generate-data", help="write a synthetic dataset"))
    common(sub.add_parser("train-embedding", help="train the embedding on a dataset"), data=True)
    common(sub.add_parser("evaluate", help="alignment + attribute metrics for a checkpoint"), checkpoint=True, data=True)

    p_policy = sub.add_parser("train-policy", help="learn an imitation policy from one demo")
    common(p_policy, checkpoint=True, data=True)
    p_policy.add_argument("--demo", required=True, help="demo sequence id within the dataset")

    p_pose = sub.add_parser("imitate-pose", help="train joints decoders for supervision combinations")
    p_pose.add_argument("--config", default=None)
    p_pose.add_argument("--out", required=True)
    p_pose.add_argument("--seed", type=int, default=None)
    p_pose.add_argument("--data", required=True)
    p_pose.add_argument("--checkpoint", default=None, help="embedding checkpoint (required for tc combinations)")

    p_export = sub.add_parser("export-embeddings", help="dump per-frame embeddings to CSV")
    common(p_export, checkpoint=True, data=True)
    p_export.add_argument("--split", default="test", help="dataset split to export")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_overrides({"seed": args.seed})

        if args.command == "generate-data":
            out = pipeline.cmd_generate_data(cfg, args.out)
            print(f"dataset written to {out}")
        elif args.command == "train-embedding":
            result = pipeline.cmd_train_embedding(cfg, args.data, args.out)
            print(f"trained {len(result['checkpoints'])} checkpoints into {result['out']}")
        elif args.command == "evaluate":
            result = pipeline.cmd_evaluate(cfg, args.data, args.checkpoint, args.out)
            m = result["metrics"]
            print(
                f"alignment_error={m['alignment_error_mean']:.4f} "
                f"classification_error={m['classification']['aggregate']:.4f} -> {result['out']}"
            )
        elif args.command == "train-policy":
            result = pipeline.cmd_train_policy(cfg, args.data, args.checkpoint, args.demo, args.out)
            if result["history"]:
                last = result["history"][-1]
                print(f"final mean cost {last['mean_cost']:.4f} -> {result['out']}")
            else:
                print(f"initial policy echoed -> {result['out']}")
        elif args.command == "imitate-pose":
            result = pipeline.cmd_imitate_pose(cfg, args.data, args.checkpoint, args.out)
            print(f"supervision results -> {result['out']}")
        elif args.command == "export-embeddings":
            result = pipeline.cmd_export_embeddings(cfg, args.data, args.checkpoint, args.split, args.out)
            print(f"exported {result['rows']} rows -> {result['path']}")
        else:  # pragma: no cover - argparse enforces the choices
            raise ValueError(f"unknown command {args.command}")
    except Exception as exc:  # structured one-line failure for scripting
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
