"""
場所: memreader/commands.py
内容: CLI サブコマンドと Dify ツールが共有するコマンド本体 (run / score / grpo / convert / search / import-teacher)。
目的: 入出力の形式変換をここへ集め、CLI とツールは引数の受け渡しとエラー表示だけを担当する。
"""

from __future__ import annotations

import logging
import os
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from memreader.config import ChainConfig, GrpoConfig, RewardWeights, Settings
from memreader.data_pipeline import (
    FilterReport,
    ShareGPTSample,
    chain_expand,
    quality_filter,
    read_teacher_traces,
    teacher_dialogue,
    teacher_to_trajectory,
    to_sharegpt,
    write_sharegpt,
)
from memreader.decision_engine import (
    EMPTY_BUFFER,
    Policy,
    PolicyBinding,
    Trajectory,
    Turn,
    TurnRecord,
    episode_records,
    load_episode,
    render_observation,
    run_episode,
    write_trajectory_records,
)
from memreader.endpoints import EndpointClient
from memreader.errors import (
    ConfigError,
    EpisodeError,
    InvalidDump,
    InvalidGold,
    InvalidTrajectory,
    MemReaderError,
    MisalignedInputs,
    TerminalMismatch,
    TraceParseError,
)
from memreader.files import JsonLine, iter_jsonl, iter_jsonl_lines, write_json
from memreader.grpo_math import Group, GroupReport, evaluate_group
from memreader.judges import ExternalJudge, Judge, JudgeRequest, JudgeScores, LexicalOverlapJudge, judge_many
from memreader.memory_core import HashedTrigramEmbedder, MemoryState, load_store, save_store, search
from memreader.policies import build_policy
from memreader.prompts import render_system_prompt
from memreader.react_protocol import Action
from memreader.rewards import (
    RewardBreakdown,
    action_align_reward,
    efficiency_reward,
    episode_return,
    failed_turn_align,
    judge_reward,
    total_reward,
    trajectory_format_reward,
    turn_output_length,
)

logger = logging.getLogger(__name__)


# ----------------------------------------------------------------------
# run
# ----------------------------------------------------------------------
@dataclass
class RunOutcome:
    records: list[TurnRecord]
    memory: MemoryState
    info: dict[str, Any]
    error: EpisodeError | None = None


def run_episode_file(
    episode_path: str | os.PathLike[str],
    binding: PolicyBinding,
    settings: Settings,
    *,
    seed: int = 0,
    **client_options: Any,
) -> RunOutcome:
    return run_turns(load_episode(episode_path), binding, settings, seed=seed, **client_options)


def run_turns(
    turns: Sequence[Turn],
    binding: PolicyBinding,
    settings: Settings,
    *,
    seed: int = 0,
    **client_options: Any,
) -> RunOutcome:
    """エピソードを空のストアから実行する。途中で方策が失敗しても、そこまでの記録を返す."""
    policy = build_policy(binding, settings, **client_options)
    try:
        return _run_policy(policy, turns, binding, settings, seed)
    finally:
        release(policy)


def release(resource: object) -> None:
    """close() を持つ方策・判定器だけを閉じる."""
    close = getattr(resource, "close", None)
    if close is not None:
        close()


def _run_policy(
    policy: Policy, turns: Sequence[Turn], binding: PolicyBinding, settings: Settings, seed: int
) -> RunOutcome:
    embedder = HashedTrigramEmbedder(settings.embedding_dim)
    info: dict[str, Any] = {
        "seed": seed,
        "policy": str(binding.kind),
        "max_steps": settings.max_steps,
        "turns": len(turns),
        "failures": [],
    }
    try:
        result = run_episode(
            turns, policy, max_steps=settings.max_steps, search_k=settings.search_k, embedder=embedder
        )
    except EpisodeError as exc:
        partial = exc.partial
        records = episode_records(partial)
        failed_turn = turns[exc.turn_index - 1]
        records.append(
            TurnRecord(
                turn=exc.turn_index,
                trajectory=Trajectory(truncated=True, failure=str(exc.cause)),
                utterance=failed_turn.utterance,
                session_time=failed_turn.session_time,
            )
        )
        info["failures"] = _failures(records)
        return RunOutcome(records, partial.memory, info, exc)

    records = episode_records(result)
    info["failures"] = _failures(records)
    return RunOutcome(records, result.memory, info)


def _failures(records: Sequence[TurnRecord]) -> list[dict[str, Any]]:
    return [
        {"turn": record.turn, "failure": record.trajectory.failure}
        for record in records
        if record.trajectory.failure is not None
    ]


def write_run_outputs(
    outcome: RunOutcome,
    out_path: str | os.PathLike[str],
    store_path: str | os.PathLike[str] | None = None,
) -> Path:
    out = Path(out_path)
    write_trajectory_records(out, outcome.records)
    if store_path is not None:
        save_store(outcome.memory, store_path)
    info_path = out.with_name(f"{out.name}.run.json")
    write_json(info_path, outcome.info)
    logger.info("run outputs written to %s", out)
    return info_path


# ----------------------------------------------------------------------
# score
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class GoldAnnotation:
    turn: int
    gold_actions: tuple[Action, ...]
    reference_memory: Mapping[str, Any] | None = None


def read_gold(path: str | os.PathLike[str]) -> dict[int, GoldAnnotation]:
    try:
        lines = list(iter_jsonl(path))
    except OSError as exc:
        raise InvalidGold(f"cannot read gold file {path}: {exc}") from exc
    return parse_gold(lines, str(path))


def gold_from_text(text: str) -> dict[int, GoldAnnotation]:
    return parse_gold(iter_jsonl_lines(text.splitlines()))


def parse_gold(lines: Iterable[JsonLine], path: str = "<input>") -> dict[int, GoldAnnotation]:
    annotations: dict[int, GoldAnnotation] = {}
    for line in lines:
        where = f"{path} line {line.line_number}"
        if line.error is not None:
            raise InvalidGold(f"{where}: {line.error}")
        data = line.value
        try:
            turn = data["turn"]
            if isinstance(turn, bool) or not isinstance(turn, int) or turn < 1:
                raise ValueError(f"turn must be a positive integer, got {turn!r}")
            actions = tuple(Action(label) for label in data["gold_actions"])
            if not actions:
                raise ValueError("gold_actions is empty")
            reference = data.get("reference_memory")
            if reference is not None and not isinstance(reference, Mapping):
                raise ValueError("reference_memory must be an object or null")
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidGold(f"{where}: {exc}") from exc
        if turn in annotations:
            raise InvalidGold(f"{where}: duplicate gold for turn {turn}")
        annotations[turn] = GoldAnnotation(turn, actions, reference)
    if not annotations:
        raise InvalidGold(f"{path} contains no gold annotations")
    return annotations


def build_judge(settings: Settings, **client_options: Any) -> Judge:
    endpoint = settings.endpoints.judge_endpoint
    if not endpoint:
        return LexicalOverlapJudge()
    return ExternalJudge(EndpointClient(endpoint, settings.endpoints.timeout, **client_options))


def _align(trajectory: Trajectory, gold: Sequence[Action], weights: RewardWeights) -> float:
    if not trajectory.steps:
        return failed_turn_align(gold, weights)
    return action_align_reward(trajectory.actions, gold, weights)


def score_records(
    records: Sequence[TurnRecord],
    gold: Mapping[int, GoldAnnotation],
    weights: RewardWeights,
    judge: Judge,
    *,
    seed: int = 0,
    workers: int = 4,
) -> dict[str, Any]:
    """ターン番号で突き合わせて報酬内訳とエピソードリターンを計算する."""
    by_turn: dict[int, TurnRecord] = {}
    for record in records:
        if record.turn in by_turn:
            raise MisalignedInputs(f"duplicate trajectory record for turn {record.turn}")
        by_turn[record.turn] = record
    missing_gold = sorted(set(by_turn) - set(gold))
    if missing_gold:
        raise MisalignedInputs(f"no gold annotation for turn(s) {', '.join(map(str, missing_gold))}")
    missing_records = sorted(set(gold) - set(by_turn))
    if missing_records:
        raise MisalignedInputs(f"no trajectory record for gold turn(s) {', '.join(map(str, missing_records))}")

    ordered = [by_turn[turn] for turn in sorted(by_turn)]
    requests = []
    for record in ordered:
        payload = record.trajectory.add_payload
        if payload is None:
            continue
        requests.append(
            JudgeRequest(
                request_id=str(record.turn),
                extracted=payload.model_dump(mode="json"),
                reference=gold[record.turn].reference_memory,
                dialogue=record.utterance,
            )
        )
    scores: dict[str, JudgeScores] = judge_many(requests, judge, workers)

    per_turn: list[dict[str, Any]] = []
    totals: list[float] = []
    for record in ordered:
        trajectory = record.trajectory
        judge_scores = scores.get(str(record.turn))
        judged = (
            judge_reward(judge_scores, weights, True) if judge_scores is not None else (0.0, False)
        )
        breakdown: RewardBreakdown = total_reward(
            fmt=trajectory_format_reward(trajectory),
            align=_align(trajectory, gold[record.turn].gold_actions, weights),
            judge=judged,
            eff=efficiency_reward(turn_output_length(trajectory), weights),
            weights=weights,
        )
        per_turn.append({"turn": record.turn, **breakdown.to_dict()})
        totals.append(breakdown.total)

    return {
        "per_turn": per_turn,
        "episode_return": episode_return(totals, weights.gamma),
        "weights": weights.model_dump(),
        "seed": seed,
        "judge_scores": {turn: value.to_dict() for turn, value in scores.items()},
    }


# ----------------------------------------------------------------------
# grpo
# ----------------------------------------------------------------------
def load_groups(path: str | os.PathLike[str]) -> list[tuple[int, Group]]:
    try:
        lines = list(iter_jsonl(path))
    except OSError as exc:
        raise InvalidDump([f"cannot read {path}: {exc}"]) from exc
    return parse_groups(lines, str(path))


def groups_from_text(text: str) -> list[tuple[int, Group]]:
    return parse_groups(iter_jsonl_lines(text.splitlines()))


def parse_groups(lines: Iterable[JsonLine], path: str = "<input>") -> list[tuple[int, Group]]:
    """不正な行はまとめて InvalidDump にする (行番号と例外名つき)."""
    groups: list[tuple[int, Group]] = []
    problems: list[str] = []
    for line in lines:
        if line.error is not None:
            problems.append(f"line {line.line_number}: {line.error}")
            continue
        try:
            groups.append((line.line_number, Group.from_dict(line.value)))
        except (MemReaderError, KeyError, TypeError, ValueError) as exc:
            problems.append(f"line {line.line_number}: {type(exc).__name__}: {exc}")
    if problems:
        raise InvalidDump(problems)
    if not groups:
        raise InvalidDump([f"{path} contains no groups"])
    return groups


def grpo_report(groups: Sequence[tuple[int, Group]], config: GrpoConfig, workers: int = 4) -> dict[str, Any]:
    def _evaluate(item: tuple[int, Group]) -> GroupReport:
        return evaluate_group(item[1], config)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        reports = list(pool.map(_evaluate, groups))

    count = len(reports)
    return {
        "groups": [{"line": line, **report.to_dict()} for (line, _), report in zip(groups, reports)],
        "mean_objective": sum(report.objective for report in reports) / count,
        "mean_kl": sum(sum(report.kl) / len(report.kl) for report in reports) / count,
        "mean_clip_fraction": sum(report.clip_fraction for report in reports) / count,
        "mean_nll": sum(report.mean_nll for report in reports) / count,
        "config": config.model_dump(),
    }


# ----------------------------------------------------------------------
# convert
# ----------------------------------------------------------------------
@dataclass
class ConvertOutcome:
    samples: list[ShareGPTSample]
    report: FilterReport
    chained: int = 0
    skipped_turns: list[int] = field(default_factory=list)


def default_system_prompt(records: Sequence[TurnRecord]) -> str:
    first = next((record.session_time for record in records if record.session_time is not None), None)
    return render_system_prompt(EMPTY_BUFFER, first.isoformat() if first else "")


def convert_records(
    records: Sequence[TurnRecord],
    system_prompt: str,
    chain: ChainConfig,
    think_max_chars: int,
) -> ConvertOutcome:
    """ステップを持たないターン (方策失敗) はチェーンの区切りとして扱い、出力には含めない."""
    segments: list[list[TurnRecord]] = [[]]
    skipped: list[int] = []
    for record in sorted(records, key=lambda item: item.turn):
        if record.trajectory.steps:
            segments[-1].append(record)
        else:
            skipped.append(record.turn)
            segments.append([])

    chained: list[ShareGPTSample] = []
    for segment in segments:
        if not segment:
            continue
        samples = to_sharegpt(system_prompt, [(record.utterance, record.trajectory) for record in segment])
        terminals = [record.trajectory.terminal_action for record in segment]
        chained.extend(chain_expand(samples, terminals, chain))
    if skipped:
        logger.warning("turns without steps left out of the dataset: %s", skipped)

    kept, report = quality_filter(chained, think_max_chars)
    return ConvertOutcome(samples=kept, report=report, chained=len(chained), skipped_turns=skipped)


def write_convert_outputs(outcome: ConvertOutcome, out_path: str | os.PathLike[str]) -> Path:
    out = Path(out_path)
    write_sharegpt(out, outcome.samples)
    report_path = out.with_name(f"{out.name}.report.json")
    write_json(report_path, outcome.report.to_dict())
    logger.info("%d samples written to %s", len(outcome.samples), out)
    return report_path


# ----------------------------------------------------------------------
# search
# ----------------------------------------------------------------------
def search_lines(store: MemoryState, query: str, k: int, embedding_dim: int) -> list[str]:
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    hits = search(store, query, k, embedder=HashedTrigramEmbedder(embedding_dim))
    return render_observation(hits).splitlines() if hits else []


def search_store(store_path: str | os.PathLike[str], query: str, k: int, embedding_dim: int) -> list[str]:
    return search_lines(load_store(store_path), query, k, embedding_dim)


# ----------------------------------------------------------------------
# import-teacher
# ----------------------------------------------------------------------
def import_teacher_traces(path: str | os.PathLike[str]) -> list[TurnRecord]:
    try:
        traces = read_teacher_traces(path)
    except OSError as exc:
        raise TraceParseError(f"cannot read trace file {path}: {exc}") from exc
    if not traces:
        raise TraceParseError(f"{path} contains no traces")
    records = []
    for position, trace in enumerate(traces, start=1):
        try:
            draft = teacher_to_trajectory(trace)
        except (TraceParseError, TerminalMismatch, InvalidTrajectory) as exc:
            raise type(exc)(f"trace {position}: {exc}") from exc
        records.append(TurnRecord(turn=position, trajectory=draft.to_trajectory(), utterance=teacher_dialogue(trace)))
    return records
