"""Operator entry points.

Every verb is a thin wrapper over one module operation; the CLI only
parses arguments and formats output. Exit codes: 0 success, 1 runtime
failure (e.g. missing library snapshot), 2 usage or input-file error,
3 verifier/gateway transport failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import (
    CheckpointError,
    CorruptStoreError,
    ParseError,
    SkillProverError,
    TransportError,
)
from .gateway import HashEmbedder
from .library import SkillLibrary
from .orchestrator import Orchestrator, OrchestratorConfig, build_orchestrator
from .runlog import RunLog, read_log
from .stats import compute_stats
from .theory import contains_cheat_keywords
from .verifier import MockVerifier, TcpVerifier

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_TRANSPORT = 3


def _echo_attempts(record: dict) -> None:
    if record.get("event") == "attempt":
        print(
            f"attempt seq={record['seq']} round={record['round']} "
            f"problem={record['problem_id']} valid={record['valid']} "
            f"status={record['status_after']}"
        )
    elif record.get("event") == "round_start":
        print(f"round {record['round']}: {len(record['problems'])} pending problems")


def cmd_run(args) -> int:
    try:
        config = OrchestratorConfig.from_file(args.config)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.mode:
        config.mode = args.mode
    if args.seed is not None:
        config.seed = args.seed

    try:
        if args.resume:
            orch = Orchestrator.resume(args.resume)
        else:
            echo = None if args.json else _echo_attempts
            log = RunLog(config.log_path, echo=echo)
            orch = build_orchestrator(config, log=log)
            if config.problems_path:
                report = orch.ingest_problems(config.problems_path)
                if not args.json:
                    print(f"ingested {report.count} problems")
        stats = orch.run(max_steps=args.max_steps)
    except (ParseError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except SkillProverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    if stats is None:
        if config.checkpoint_dir:
            orch.checkpoint(config.checkpoint_dir)
            print(f"paused after {args.max_steps} steps; checkpoint written")
        return EXIT_OK
    if config.library_path:
        orch.library.snapshot(config.library_path)
    if args.json:
        print(json.dumps(stats.to_json_dict(), sort_keys=True))
    else:
        print(
            f"run complete: {stats.solved}/{stats.total_problems} solved, "
            f"{stats.total_skills} skills in library"
        )
    return EXIT_OK


def cmd_query(args) -> int:
    try:
        library = SkillLibrary.load(args.library)
    except CorruptStoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    embedding = HashEmbedder(library.dim).embed(args.text)
    results = library.query_top_k(args.store, embedding, args.k)
    if args.json:
        print(
            json.dumps(
                [
                    {"id": r.record_id, "similarity": r.similarity, "rank": r.rank}
                    for r in results
                ]
            )
        )
    else:
        store = {"lemma": library.lemmas, "request": library.requests, "problem": library.problems}[
            args.store
        ]
        for result in results:
            record = store.get(result.record_id)
            text = getattr(record, "statement", None) or getattr(
                record, "formal_statement", ""
            )
            print(f"{result.rank}. {result.record_id} sim={result.similarity:.4f} {text[:80]}")
    return EXIT_OK


def cmd_verify_file(args) -> int:
    path = Path(args.file)
    if not path.exists():
        print(f"error: no such file {path}", file=sys.stderr)
        return EXIT_USAGE
    source = path.read_text(encoding="utf-8")

    verifier = None
    if args.config:
        try:
            config = OrchestratorConfig.from_file(args.config)
        except ParseError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        if config.verifier == "tcp":
            verifier = TcpVerifier(
                config.verifier_host, config.verifier_port, config.verifier_timeout
            )
        else:
            verifier = MockVerifier(
                allowed_tactics=set(config.mock_allowed_tactics),
                default_accept=config.mock_default_accept,
            )
    if verifier is None:
        verifier = MockVerifier(default_accept=True)

    try:
        outcome = verifier.verify(source)
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT

    cheats = contains_cheat_keywords(source)
    if args.json:
        print(
            json.dumps(
                {
                    "success": outcome.success,
                    "failures": [
                        [f.block_index, f.step_index, f.message] for f in outcome.failures
                    ],
                    "cheat_keywords": cheats,
                }
            )
        )
    else:
        print(f"success: {outcome.success}")
        for failure in outcome.failures:
            print(
                f"  block {failure.block_index} step {failure.step_index}: {failure.message}"
            )
        if cheats:
            print("warning: source contains cheat keywords (sorry/oops); "
                  "it can never be a valid proof")
    return EXIT_OK if outcome.success else EXIT_RUNTIME


def cmd_export_tree(args) -> int:
    try:
        library = SkillLibrary.load(args.library)
        if args.format == "graph":
            text = library.genealogy_dot()
        else:
            text = json.dumps(library.export_genealogy(), indent=2, sort_keys=True)
    except CorruptStoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {args.output}")
    else:
        print(text)
    return EXIT_OK


def cmd_stats(args) -> int:
    try:
        library = SkillLibrary.load(args.library)
        records = read_log(args.log)
    except (CorruptStoreError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    stats = compute_stats(records, library)
    if args.json:
        print(json.dumps(stats.to_json_dict(), sort_keys=True))
    else:
        print(f"problems: {stats.total_problems} "
              f"(solved {stats.solved}, exhausted {stats.exhausted}, pending {stats.pending})")
        print(f"attempts: {stats.attempts_total}")
        print(f"skills: {stats.total_skills} {stats.skill_counts}")
        if stats.origin_groups:
            groups = ", ".join(f"{k}={v:.1%}" for k, v in stats.origin_groups.items())
            print(f"origin groups: {groups}")
        if stats.usage_distribution:
            usage = ", ".join(f"{k}={v:.1%}" for k, v in stats.usage_distribution.items())
            print(f"usage over solved: {usage}")
        print(stats.curve_table())
    return EXIT_OK


def cmd_ingest(args) -> int:
    try:
        config = OrchestratorConfig.from_file(args.config)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    problems = Path(args.problems)
    if not problems.exists():
        print(f"error: no such file {problems}", file=sys.stderr)
        return EXIT_USAGE
    orch = build_orchestrator(config)
    report = orch.ingest_problems(problems)
    for line_no, message in report.errors:
        print(f"line {line_no}: {message}", file=sys.stderr)
    if config.library_path:
        orch.library.snapshot(config.library_path)
    if args.json:
        print(json.dumps({"count": report.count, "errors": len(report.errors)}))
    else:
        print(f"ingested {report.count} problems ({len(report.errors)} errors)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skillprover",
        description="Prove formal statements while growing a library of verified lemmas.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a proving run from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--mode", choices=["live", "record", "replay"])
    run.add_argument("--seed", type=int)
    run.add_argument("--max-steps", type=int, default=None)
    run.add_argument("--resume", metavar="CHECKPOINT_DIR")
    run.add_argument("--json", action="store_true")
    run.set_defaults(func=cmd_run)

    replay = sub.add_parser("replay", help="run in replay mode (cassette-backed)")
    replay.add_argument("--config", required=True)
    replay.add_argument("--seed", type=int)
    replay.add_argument("--max-steps", type=int, default=None)
    replay.add_argument("--resume", metavar="CHECKPOINT_DIR")
    replay.add_argument("--json", action="store_true")
    replay.set_defaults(func=cmd_run, mode="replay")

    query = sub.add_parser("query", help="top-k retrieval from a library snapshot")
    query.add_argument("--library", required=True)
    query.add_argument("--store", choices=["lemma", "request", "problem"], default="lemma")
    query.add_argument("--text", required=True)
    query.add_argument("-k", type=int, default=5)
    query.add_argument("--json", action="store_true")
    query.set_defaults(func=cmd_query)

    verify = sub.add_parser("verify-file", help="verify one theory file")
    verify.add_argument("file")
    verify.add_argument("--config")
    verify.add_argument("--json", action="store_true")
    verify.set_defaults(func=cmd_verify_file)

    tree = sub.add_parser("export-tree", help="export the skill genealogy")
    tree.add_argument("--library", required=True)
    tree.add_argument("--format", choices=["tree", "graph"], default="tree")
    tree.add_argument("-o", "--output")
    tree.add_argument("--json", action="store_true")
    tree.set_defaults(func=cmd_export_tree)

    stats = sub.add_parser("stats", help="aggregate run logs into statistics")
    stats.add_argument("--log", required=True)
    stats.add_argument("--library", required=True)
    stats.add_argument("--json", action="store_true")
    stats.set_defaults(func=cmd_stats)

    ingest = sub.add_parser("ingest", help="load problems into the problem store")
    ingest.add_argument("problems")
    ingest.add_argument("--config", required=True)
    ingest.add_argument("--json", action="store_true")
    ingest.set_defaults(func=cmd_ingest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "mode"):
        args.mode = None
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
