"""
場所: memreader/cli.py
内容: memreader コマンド (run / score / grpo / convert / search / import-teacher) の引数解析と終了コード。
目的: コマンド本体 (memreader.commands) を端末から呼べるようにし、結果は stdout、ログは stderr に分ける。

終了コード: 0 成功 / 1 入力・設定エラー / 2 方策・エンドポイントの実行時エラー
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

from memreader import __version__
from memreader.commands import (
    build_judge,
    convert_records,
    default_system_prompt,
    grpo_report,
    import_teacher_traces,
    load_groups,
    read_gold,
    release,
    run_episode_file,
    score_records,
    search_store,
    write_convert_outputs,
    write_run_outputs,
)
from memreader.config import ChainConfig, Settings, load_settings, load_weights, resolve_endpoints, with_weights
from memreader.decision_engine import PolicyBinding, PolicyKind, read_trajectory_records, write_trajectory_records
from memreader.errors import (
    EndpointError,
    EpisodeError,
    JudgeUnreachable,
    MemReaderError,
    PolicyFailure,
    PolicyUnreachable,
)
from memreader.files import dumps, write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_RUNTIME = 2

_RUNTIME_ERRORS = (PolicyFailure, PolicyUnreachable, JudgeUnreachable, EndpointError)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memreader", description="Memory-management agent runtime and evaluation harness.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, help="YAML configuration document (default: built-in defaults).")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--workers", type=_positive_int, help="Worker bound for judge calls and GRPO groups.")
    parser.add_argument("--seed", type=int, default=0, help="Recorded in outputs (default: 0).")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run an episode file through a policy.")
    run.add_argument("episode", type=Path)
    run.add_argument("--policy", choices=[kind.value for kind in PolicyKind], default=PolicyKind.HEURISTIC.value)
    run.add_argument("--script", type=Path, help="Script or trajectory file for --policy scripted.")
    run.add_argument("--policy-endpoint", help="http(s)://, lambda:<name> or sagemaker:<name>.")
    run.add_argument("--max-steps", type=_positive_int)
    run.add_argument("--k", type=_positive_int, help="Search depth for search_memory observations.")
    run.add_argument("--store", type=Path, help="Where to write the final memory store.")
    run.add_argument("--out", type=Path, required=True, help="Trajectory JSON Lines output.")

    score = sub.add_parser("score", help="Score trajectories against gold annotations.")
    score.add_argument("trajectories", type=Path)
    score.add_argument("gold", type=Path)
    score.add_argument("--weights", type=Path, help="Reward weights document.")
    score.add_argument("--judge-endpoint", help="External judge locator (default: lexical overlap judge).")
    score.add_argument("--out", type=Path)

    grpo = sub.add_parser("grpo", help="Evaluate GRPO quantities over a logprob dump.")
    grpo.add_argument("dump", type=Path)
    grpo.add_argument("--out", type=Path)

    convert = sub.add_parser("convert", help="Convert trajectories into filtered ShareGPT samples.")
    convert.add_argument("trajectories", type=Path)
    convert.add_argument("--system-prompt", type=Path, help="Text file used as the system message.")
    convert.add_argument("--chain-len", type=_positive_int)
    convert.add_argument("--out", type=Path, required=True)

    search = sub.add_parser("search", help="Query a persisted memory store.")
    search.add_argument("store", type=Path)
    search.add_argument("query")
    # k=0 は argparse ではなくコマンド側で拒否して終了コード 1 にする
    search.add_argument("--k", type=int, default=None)

    teacher = sub.add_parser("import-teacher", help="Convert Thought/Action/Observation traces into trajectory drafts.")
    teacher.add_argument("traces", type=Path)
    teacher.add_argument("--out", type=Path, required=True)
    return parser


def _settings(args: argparse.Namespace) -> Settings:
    settings = load_settings(args.config)
    settings = resolve_endpoints(
        settings,
        policy_endpoint=getattr(args, "policy_endpoint", None),
        judge_endpoint=getattr(args, "judge_endpoint", None),
    )
    updates: dict[str, Any] = {}
    if getattr(args, "max_steps", None):
        updates["max_steps"] = args.max_steps
    if getattr(args, "k", None) and args.command == "run":
        updates["search_k"] = args.k
    if args.workers:
        updates["workers"] = args.workers
    if getattr(args, "chain_len", None):
        updates["chain"] = ChainConfig(max_chain_len=args.chain_len)
    if getattr(args, "weights", None):
        settings = with_weights(settings, load_weights(args.weights))
    return settings.model_copy(update=updates)


def _emit(document: Any, out: Path | None) -> None:
    if out is not None:
        write_json(out, document)
    print(dumps(document, indent=2))


def cmd_run(args: argparse.Namespace, settings: Settings) -> int:
    configuration: dict[str, Any] = {}
    if args.policy == PolicyKind.SCRIPTED:
        configuration["source"] = str(args.script) if args.script else None
    elif args.policy == PolicyKind.EXTERNAL:
        configuration["endpoint"] = settings.endpoints.policy_endpoint
    binding = PolicyBinding(PolicyKind(args.policy), configuration)

    outcome = run_episode_file(args.episode, binding, settings, seed=args.seed)
    info_path = write_run_outputs(outcome, args.out, args.store)
    print(dumps({"trajectories": str(args.out), "store": str(args.store) if args.store else None, "run": str(info_path)}))
    if outcome.error is not None:
        print(f"error: {outcome.error}", file=sys.stderr)
        return EXIT_RUNTIME if isinstance(outcome.error.cause, _RUNTIME_ERRORS) else EXIT_INPUT
    failures = outcome.info["failures"]
    if failures:
        # 出力は書き終えている。打ち切りターンは truncated として記録済み
        turns = ", ".join(str(item["turn"]) for item in failures)
        print(f"error: policy failure in turn(s) {turns}: {failures[0]['failure']}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_score(args: argparse.Namespace, settings: Settings) -> int:
    records = read_trajectory_records(args.trajectories)
    gold = read_gold(args.gold)
    judge = build_judge(settings)
    try:
        report = score_records(records, gold, settings.weights, judge, seed=args.seed, workers=settings.workers)
    finally:
        release(judge)
    _emit(report, args.out)
    return EXIT_OK


def cmd_grpo(args: argparse.Namespace, settings: Settings) -> int:
    report = grpo_report(load_groups(args.dump), settings.grpo, settings.workers)
    _emit(report, args.out)
    return EXIT_OK


def cmd_convert(args: argparse.Namespace, settings: Settings) -> int:
    records = read_trajectory_records(args.trajectories)
    if args.system_prompt is not None:
        system_prompt = args.system_prompt.read_text(encoding="utf-8")
    else:
        system_prompt = default_system_prompt(records)
    outcome = convert_records(records, system_prompt, settings.chain, settings.think_max_chars)
    write_convert_outputs(outcome, args.out)
    print(dumps(outcome.report.to_dict(), indent=2))
    return EXIT_OK


def cmd_search(args: argparse.Namespace, settings: Settings) -> int:
    k = settings.search_k if args.k is None else args.k
    for line in search_store(args.store, args.query, k, settings.embedding_dim):
        print(line)
    return EXIT_OK


def cmd_import_teacher(args: argparse.Namespace, settings: Settings) -> int:
    records = import_teacher_traces(args.traces)
    write_trajectory_records(args.out, records)
    print(dumps({"trajectories": str(args.out), "count": len(records)}))
    return EXIT_OK


COMMANDS: dict[str, Callable[[argparse.Namespace, Settings], int]] = {
    "run": cmd_run,
    "score": cmd_score,
    "grpo": cmd_grpo,
    "convert": cmd_convert,
    "search": cmd_search,
    "import-teacher": cmd_import_teacher,
}


def _configure_logging(level: str) -> None:
    logging.basicConfig(level=level, stream=sys.stderr, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        from provider.logging_filters import install_sensitive_data_filter
    except ModuleNotFoundError:
        logger.debug("plugin logging filter unavailable; secrets in logs are not masked")
        return
    install_sensitive_data_filter()


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.log_level)
    try:
        settings = _settings(args)
        return COMMANDS[args.command](args, settings)
    except EpisodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME if isinstance(exc.cause, _RUNTIME_ERRORS) else EXIT_INPUT
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except MemReaderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
