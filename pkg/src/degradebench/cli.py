"""Command-line entry points.

Subcommands:
  generate      render corrupted frames + tasks to a directory, no model
  run           execute the closed-loop benchmark and write a record file
  score         recompute metrics for a record and compare with its summaries
  uir-annotate  build refined pseudo-labels for a sequence's tasks
  replay        re-run a mock record's config and byte-compare the output
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .harness import (
    ConfigError,
    annotate_with_uir,
    generate_assets,
    generate_tasks,
    load_config,
    load_sequence,
    replay_record,
    run_benchmark,
    score_record,
)
from .models import canonical_json


def _add_config_options(parser: argparse.ArgumentParser, mock_default=None) -> None:
    parser.add_argument("--config", required=True, help="path to a JSON run config")
    parser.add_argument("--out", default=None, help="override the configured output path")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    parser.add_argument(
        "--mock",
        default=mock_default,
        help="swap the model for a named mock (echo, wrong_on_corrupted, sticky[:N], or a JSON answer file)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="degradebench",
        description="Benchmark VLM answer stability under temporally degraded video frames.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="materialize degraded frames and tasks")
    _add_config_options(p_gen)

    p_run = sub.add_parser("run", help="run closed-loop episodes against a model")
    _add_config_options(p_run)
    p_run.add_argument("--workers", type=int, default=1, help="parallel episode workers")

    p_score = sub.add_parser("score", help="rescore an existing record file")
    p_score.add_argument("record", help="path to a .jsonl record")

    p_uir = sub.add_parser("uir-annotate", help="refine pseudo-labels over clean frames")
    _add_config_options(p_uir)

    p_replay = sub.add_parser("replay", help="verify a mock record reproduces byte for byte")
    p_replay.add_argument("record", help="path to a .jsonl record")

    return parser


def _cmd_generate(args) -> int:
    config = load_config(args.config, seed=args.seed, mock=args.mock)
    out_dir = Path(args.out) if args.out else config.output.with_suffix("")
    manifest = generate_assets(config, out_dir)
    print(f"wrote {manifest['frames']} frames and {manifest['tasks']} tasks to {manifest['out_dir']}")
    return 0


def _cmd_run(args) -> int:
    config = load_config(args.config, seed=args.seed, out=args.out, mock=args.mock)
    records, _ = run_benchmark(config, workers=args.workers)
    complete = all(not r.summary["incomplete"] for r in records)
    print(f"wrote {config.output} ({len(records)} episodes)")
    if not complete:
        print("warning: at least one episode aborted on a model error", file=sys.stderr)
        return 1
    return 0


def _cmd_score(args) -> int:
    report = score_record(args.record)
    for episode in sorted(report["episodes"]):
        entry = report["episodes"][episode]
        status = "ok" if entry["matches"] else "MISMATCH"
        print(f"episode {episode}: {status} {canonical_json(entry['metrics']).decode()}")
    print(f"aggregate: {canonical_json(report['aggregate']).decode()}")
    if not report["matches"]:
        print("stored summaries do not match recomputed metrics", file=sys.stderr)
        return 1
    return 0


def _cmd_uir_annotate(args) -> int:
    config = load_config(args.config, seed=args.seed, out=args.out, mock=args.mock)
    frames, annotations = load_sequence(config)
    tasks = generate_tasks(config, annotations)
    labels, retention = annotate_with_uir(config, frames, tasks)
    out = Path(args.out) if args.out else config.output
    out.parent.mkdir(parents=True, exist_ok=True)
    body = b"\n".join(canonical_json(l) for l in labels)
    out.write_bytes(body + (b"\n" if labels else b""))
    print(f"wrote {len(labels)} pseudo-labels to {out} (retention {retention:.1%})")
    if labels and retention == 0.0:
        print("warning: no pseudo-label passed the retention threshold", file=sys.stderr)
    return 0


def _cmd_replay(args) -> int:
    ok, detail = replay_record(args.record)
    if ok:
        print(f"{args.record}: replay identical")
        return 0
    print(f"{args.record}: replay diverged ({detail})", file=sys.stderr)
    return 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "generate": _cmd_generate,
        "run": _cmd_run,
        "score": _cmd_score,
        "uir-annotate": _cmd_uir_annotate,
        "replay": _cmd_replay,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
