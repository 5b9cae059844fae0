"""
場所: memreader/decision_engine.py
内容: 1 ターン分の think → act → observe ループ、遷移 (メモリー / バッファ更新)、エピソード実行、
      エピソード入力とトラジェクトリ記録ファイルの読み書き。
目的: 方策 (スクリプト再生・ヒューリスティック・外部エンドポイント) を差し替えても同じ遷移規則で状態を進める。
"""

from __future__ import annotations

import json
import logging
import os
import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import StrEnum
from typing import Any, NamedTuple, Protocol

from pydantic import ValidationError

from memreader.errors import (
    ConfigError,
    EpisodeError,
    InvalidEpisode,
    InvalidTrajectory,
    MemReaderError,
    PolicyFailure,
)
from memreader.files import JsonLine, iter_jsonl, iter_jsonl_lines, read_json, write_jsonl
from memreader.memory_core import (
    BufferItem,
    BufferState,
    Embedder,
    MemoryState,
    buffer_drain,
    buffer_push,
    search,
    upsert_entries,
)
from memreader.prompts import render_system_prompt
from memreader.react_protocol import (
    TOOL_CLOSE,
    TOOL_OPEN,
    Action,
    FormatReport,
    MemoryPayload,
    ParsedStep,
    ToolCall,
    memory_payload,
    parse_output,
    render_step,
    validate_payload,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_STEPS = 16
DEFAULT_SEARCH_K = 5
BUFFER_PREVIEW_CHARS = 200

EMPTY_BUFFER = "(empty)"
NO_RESULTS = "No matching memories found."
ACKNOWLEDGMENTS = {
    Action.ADD: "Memory written.",
    Action.BUFFER: "Buffered until the speaker adds more detail.",
    Action.IGNORE: "Ignored; memory unchanged.",
}

PREVIOUS_STEPS_HEADER = "## Previous Steps"
CURRENT_UTTERANCE_HEADER = "## Current Utterance"


# ----------------------------------------------------------------------
# 型
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class DecisionState:
    utterance: str
    session_time: datetime
    memory: MemoryState
    buffer: BufferState
    turn_index: int

    def __post_init__(self) -> None:
        if not self.utterance.strip():
            raise InvalidEpisode(f"turn {self.turn_index}: utterance is empty")
        if self.turn_index < 1:
            raise InvalidEpisode(f"turn_index must be >= 1, got {self.turn_index}")


@dataclass(frozen=True)
class Step:
    think: str
    call: ToolCall
    observation: str
    # 方策が返した生テキスト。空ならレンダリングで補う
    output: str = ""

    @property
    def parsed(self) -> ParsedStep:
        return ParsedStep(think=self.think, call=self.call)

    @property
    def raw_output(self) -> str:
        return self.output or render_step(self.parsed)


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[Step, ...] = ()
    terminal_action: Action | None = None
    truncated: bool = False
    failure: str | None = None
    rejected_output: str | None = None

    def __post_init__(self) -> None:
        if self.terminal_action is Action.SEARCH:
            raise InvalidTrajectory("search_memory can never be a terminal action")
        if self.truncated:
            if self.terminal_action is not None:
                raise InvalidTrajectory("a truncated trajectory carries no terminal action")
            return
        if self.terminal_action is None or not self.steps:
            raise InvalidTrajectory("a complete trajectory needs at least one step and a terminal action")
        if self.steps[-1].call.action is not self.terminal_action:
            raise InvalidTrajectory(
                f"last step action {self.steps[-1].call.action} differs from terminal {self.terminal_action}"
            )

    @property
    def actions(self) -> list[Action]:
        return [step.call.action for step in self.steps]

    @property
    def outputs(self) -> list[str]:
        rendered = [step.raw_output for step in self.steps]
        if self.rejected_output is not None:
            rendered.append(self.rejected_output)
        return rendered

    @property
    def add_payload(self) -> MemoryPayload | None:
        """終端 add の引数が検証できない場合 (教師トレース由来の空の add など) も None."""
        if self.terminal_action is not Action.ADD:
            return None
        try:
            return memory_payload(self.steps[-1].call)
        except ValidationError:
            return None


class TurnOutcome(NamedTuple):
    trajectory: Trajectory
    memory: MemoryState
    buffer: BufferState


class Turn(NamedTuple):
    utterance: str
    session_time: datetime


@dataclass(frozen=True)
class EpisodeResult:
    trajectories: list[Trajectory]
    memory: MemoryState
    buffer: BufferState
    turns: list[Turn] = field(default_factory=list)


class PolicyKind(StrEnum):
    SCRIPTED = "scripted"
    HEURISTIC = "heuristic"
    EXTERNAL = "external"


@dataclass(frozen=True)
class PolicyBinding:
    kind: PolicyKind
    configuration: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind is PolicyKind.SCRIPTED and not (
            self.configuration.get("source") or self.configuration.get("script") is not None
        ):
            raise ConfigError("scripted policy requires a trajectory source (--script)")
        if self.kind is PolicyKind.EXTERNAL and not self.configuration.get("endpoint"):
            raise ConfigError("external policy requires an endpoint locator (--policy-endpoint)")


class Policy(Protocol):
    kind: PolicyKind

    def respond(self, context: str, *, turn_index: int, step_index: int) -> str: ...


# ----------------------------------------------------------------------
# コンテキスト
# ----------------------------------------------------------------------
def _as_utc(moment: datetime) -> datetime:
    if moment.tzinfo is None:
        return moment.replace(tzinfo=timezone.utc)
    return moment.astimezone(timezone.utc)


def summarize_buffer(buffer: BufferState) -> str:
    if not buffer.items:
        return EMPTY_BUFFER
    lines = []
    for number, item in enumerate(buffer.items, start=1):
        preview = " ".join(item.raw_text.splitlines())[:BUFFER_PREVIEW_CHARS]
        lines.append(f"{number}. {preview}")
    return "\n" + "\n".join(lines)


def _one_line(text: str) -> str:
    return " ".join(text.splitlines())


def render_observation(hits: Sequence[Any]) -> str:
    if not hits:
        return NO_RESULTS
    # 1 件 1 行
    return "\n".join(
        f"{rank}. {_one_line(hit.entry.key)} — {_one_line(hit.entry.value)} ({hit.score:.4f})"
        for rank, hit in enumerate(hits, start=1)
    )


def render_context(state: DecisionState, prior_steps: Sequence[Step]) -> str:
    parts = [
        render_system_prompt(summarize_buffer(state.buffer), _as_utc(state.session_time).isoformat()),
        "",
        PREVIOUS_STEPS_HEADER,
    ]
    if not prior_steps:
        parts.append("(none)")
    for number, step in enumerate(prior_steps, start=1):
        parts.extend([f"### Step {number}", render_step(step.parsed), f"Observation {number}:", step.observation])
    parts.extend(["", CURRENT_UTTERANCE_HEADER, state.utterance])
    return "\n".join(parts)


class ContextView(NamedTuple):
    session_time: datetime | None
    prior_calls: list[ToolCall]
    utterance: str


_SESSION_TIME = re.compile(r"^- Session Time: (?P<value>\S+)\s*$", re.MULTILINE)
_TOOL_BLOCK = re.compile(re.escape(TOOL_OPEN) + r"(?P<body>.*?)" + re.escape(TOOL_CLOSE), re.DOTALL)


def read_context(context: str) -> ContextView:
    """render_context の出力からセッション時刻・これまでの呼び出し・現在の発話を取り出す."""
    head, _, rest = context.partition(f"\n{PREVIOUS_STEPS_HEADER}\n")
    previous, _, utterance = rest.partition(f"\n{CURRENT_UTTERANCE_HEADER}\n")
    if not rest:
        # 見出しが無い素のテキストは発話そのものとして扱う
        return ContextView(None, [], context.strip())

    session_time: datetime | None = None
    match = _SESSION_TIME.search(head)
    if match:
        try:
            session_time = _as_utc(datetime.fromisoformat(match["value"]))
        except ValueError:
            session_time = None

    calls: list[ToolCall] = []
    for block in _TOOL_BLOCK.finditer(previous):
        try:
            decoded = json.loads(block["body"])
            calls.append(ToolCall(action=Action(decoded["name"]), arguments=decoded.get("arguments") or {}))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            continue
    return ContextView(session_time, calls, utterance.strip())


# ----------------------------------------------------------------------
# ターン実行
# ----------------------------------------------------------------------
def _rejected(state: DecisionState, steps: list[Step], raw: str, failure: PolicyFailure) -> TurnOutcome:
    logger.warning("turn %d: policy failure, identity transition (%s)", state.turn_index, failure)
    trajectory = Trajectory(steps=tuple(steps), truncated=True, failure=str(failure), rejected_output=raw)
    return TurnOutcome(trajectory, state.memory, state.buffer)


def run_turn(
    state: DecisionState,
    policy: Policy,
    max_steps: int = DEFAULT_MAX_STEPS,
    *,
    search_k: int = DEFAULT_SEARCH_K,
    embedder: Embedder | None = None,
) -> TurnOutcome:
    """終端アクション (add / buffer / ignore) が出るまで方策に問い合わせる.

    打ち切り (max_steps 到達・パース不能出力) のときは遷移を恒等にする。パース不能出力は
    PolicyFailure として trajectory.failure に記録し、例外にはしない。
    PolicyUnreachable は呼び出し元へそのまま送る。
    """
    if max_steps < 1:
        raise ConfigError(f"max_steps must be >= 1, got {max_steps}")

    steps: list[Step] = []
    for step_index in range(1, max_steps + 1):
        raw = policy.respond(render_context(state, steps), turn_index=state.turn_index, step_index=step_index)
        parsed = parse_output(raw)
        if isinstance(parsed, FormatReport):
            names = ", ".join(parsed.violations)
            return _rejected(state, steps, raw, PolicyFailure(f"step {step_index}: unparseable output ({names})"))
        if not validate_payload(parsed.call).valid:
            failure = PolicyFailure(f"step {step_index}: invalid {parsed.call.action} arguments")
            return _rejected(state, steps, raw, failure)

        call = parsed.call
        if call.action is Action.SEARCH:
            hits = search(state.memory, call.arguments["query"], search_k, embedder=embedder)
            steps.append(Step(parsed.think, call, render_observation(hits), raw))
            continue

        memory, buffer = state.memory, state.buffer
        if call.action is Action.ADD:
            payload = memory_payload(call)
            memory, _ = upsert_entries(memory, payload.memory_list, now=state.session_time)
            _, buffer = buffer_drain(buffer)
        elif call.action is Action.BUFFER:
            item = BufferItem(
                reason=call.arguments["reason"],
                raw_text=state.utterance,
                source_turn=state.turn_index,
                created_at=_as_utc(state.session_time),
            )
            buffer = buffer_push(buffer, item)

        steps.append(Step(parsed.think, call, ACKNOWLEDGMENTS[call.action], raw))
        logger.debug("turn %d finished with %s after %d step(s)", state.turn_index, call.action, len(steps))
        return TurnOutcome(Trajectory(steps=tuple(steps), terminal_action=call.action), memory, buffer)

    logger.warning("turn %d: no terminal action within %d steps", state.turn_index, max_steps)
    return TurnOutcome(Trajectory(steps=tuple(steps), truncated=True), state.memory, state.buffer)


def run_episode(
    turns: Sequence[Turn] | Sequence[tuple[str, datetime]],
    policy: Policy,
    *,
    max_steps: int = DEFAULT_MAX_STEPS,
    search_k: int = DEFAULT_SEARCH_K,
    embedder: Embedder | None = None,
    memory: MemoryState | None = None,
) -> EpisodeResult:
    """空の状態 (または与えられたストア) から全ターンを順に実行する."""
    if not turns:
        raise InvalidEpisode("episode contains no turns")

    memory = memory if memory is not None else MemoryState()
    buffer = BufferState()
    trajectories: list[Trajectory] = []
    normalized = [Turn(*turn) for turn in turns]

    for turn_index, (utterance, session_time) in enumerate(normalized, start=1):
        try:
            state = DecisionState(utterance, _as_utc(session_time), memory, buffer, turn_index)
            outcome = run_turn(state, policy, max_steps, search_k=search_k, embedder=embedder)
        except MemReaderError as exc:
            partial = EpisodeResult(trajectories, memory, buffer, normalized[: turn_index - 1])
            raise EpisodeError(turn_index, exc, partial) from exc
        trajectories.append(outcome.trajectory)
        memory, buffer = outcome.memory, outcome.buffer
        logger.info(
            "turn %d: %s (steps=%d, memory=%d, buffer=%d)",
            turn_index,
            outcome.trajectory.terminal_action or "truncated",
            len(outcome.trajectory.steps),
            len(memory),
            len(buffer),
        )
    return EpisodeResult(trajectories, memory, buffer, normalized)


# ----------------------------------------------------------------------
# エピソード入力
# ----------------------------------------------------------------------
def _parse_timestamp(value: Any, position: int) -> datetime:
    if not isinstance(value, str):
        raise InvalidEpisode(f"turn object {position}: timestamp must be an ISO-8601 string")
    try:
        return _as_utc(datetime.fromisoformat(value))
    except ValueError as exc:
        raise InvalidEpisode(f"turn object {position}: bad timestamp {value!r}") from exc


def group_turns(objects: Sequence[Any]) -> list[Turn]:
    """同じ timestamp (または同じ "turn" 値) が連続する発話を 1 ターンにまとめる."""
    if not isinstance(objects, list) or not objects:
        raise InvalidEpisode("episode must be a non-empty JSON list of turn objects")

    turns: list[Turn] = []
    lines: list[str] = []
    current_key: Any = None
    current_time: datetime | None = None

    for position, obj in enumerate(objects, start=1):
        if not isinstance(obj, Mapping):
            raise InvalidEpisode(f"turn object {position}: expected an object")
        speaker, text = obj.get("speaker"), obj.get("text")
        if not isinstance(speaker, str) or not speaker.strip() or not isinstance(text, str) or not text.strip():
            raise InvalidEpisode(f"turn object {position}: speaker and text must be non-empty strings")
        moment = _parse_timestamp(obj.get("timestamp"), position)
        key = ("turn", obj["turn"]) if "turn" in obj else ("timestamp", moment)

        if lines and key != current_key:
            turns.append(Turn("\n".join(lines), current_time))
            lines = []
        if not lines:
            current_key, current_time = key, moment
        lines.append(f"{speaker} [{moment.isoformat()}]: {text}")

    turns.append(Turn("\n".join(lines), current_time))
    return turns


def episode_from_text(text: str, source: str = "<input>") -> list[Turn]:
    try:
        objects = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidEpisode(f"episode {source} is not valid JSON: {exc}") from exc
    return group_turns(objects)


def load_episode(path: str | os.PathLike[str]) -> list[Turn]:
    try:
        objects = read_json(path)
    except OSError as exc:
        raise InvalidEpisode(f"cannot read episode file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidEpisode(f"episode file {path} is not valid JSON: {exc}") from exc
    try:
        return group_turns(objects)
    except InvalidEpisode as exc:
        raise InvalidEpisode(f"{path}: {exc}") from exc


# ----------------------------------------------------------------------
# トラジェクトリ記録 (JSON Lines)
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class TurnRecord:
    turn: int
    trajectory: Trajectory
    utterance: str = ""
    session_time: datetime | None = None


def trajectory_to_record(record: TurnRecord) -> dict[str, Any]:
    trajectory = record.trajectory
    return {
        "turn": record.turn,
        "utterance": record.utterance,
        "session_time": record.session_time.isoformat() if record.session_time else None,
        "steps": [
            {
                "think": step.think,
                "action": str(step.call.action),
                "arguments": dict(step.call.arguments),
                "observation": step.observation,
                "output": step.raw_output,
            }
            for step in trajectory.steps
        ],
        "terminal": str(trajectory.terminal_action) if trajectory.terminal_action else None,
        "truncated": trajectory.truncated,
        "failure": trajectory.failure,
        "rejected_output": trajectory.rejected_output,
    }


def record_to_trajectory(data: Mapping[str, Any]) -> TurnRecord:
    try:
        turn = data["turn"]
        if isinstance(turn, bool) or not isinstance(turn, int) or turn < 1:
            raise ValueError(f"turn must be a positive integer, got {turn!r}")
        steps = tuple(
            Step(
                think=str(item.get("think", "")),
                call=ToolCall(action=Action(item["action"]), arguments=dict(item.get("arguments") or {})),
                observation=str(item.get("observation", "")),
                output=str(item.get("output") or ""),
            )
            for item in data.get("steps", [])
        )
        terminal = Action(data["terminal"]) if data.get("terminal") else None
        session_time = data.get("session_time")
        trajectory = Trajectory(
            steps=steps,
            terminal_action=terminal,
            truncated=bool(data.get("truncated", False)),
            failure=data.get("failure"),
            rejected_output=data.get("rejected_output"),
        )
        return TurnRecord(
            turn=turn,
            trajectory=trajectory,
            utterance=str(data.get("utterance") or ""),
            session_time=_as_utc(datetime.fromisoformat(session_time)) if session_time else None,
        )
    except InvalidTrajectory:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise InvalidTrajectory(f"malformed trajectory record: {exc}") from exc


def parse_trajectory_records(lines: Iterable[JsonLine], path: str = "<input>") -> list[TurnRecord]:
    records: list[TurnRecord] = []
    for line in lines:
        if line.error is not None:
            raise InvalidTrajectory(f"{path} line {line.line_number}: {line.error}")
        if not isinstance(line.value, Mapping):
            raise InvalidTrajectory(f"{path} line {line.line_number}: expected an object")
        try:
            records.append(record_to_trajectory(line.value))
        except InvalidTrajectory as exc:
            raise InvalidTrajectory(f"{path} line {line.line_number}: {exc}") from exc
    if not records:
        raise InvalidTrajectory(f"{path} contains no trajectory records")
    return records


def read_trajectory_records(path: str | os.PathLike[str]) -> list[TurnRecord]:
    try:
        lines = list(iter_jsonl(path))
    except OSError as exc:
        raise InvalidTrajectory(f"cannot read trajectory file {path}: {exc}") from exc
    return parse_trajectory_records(lines, str(path))


def trajectory_records_from_text(text: str, source: str = "<input>") -> list[TurnRecord]:
    return parse_trajectory_records(iter_jsonl_lines(text.splitlines()), source)


def write_trajectory_records(path: str | os.PathLike[str], records: Iterable[TurnRecord]) -> None:
    write_jsonl(path, (trajectory_to_record(record) for record in records))


def episode_records(result: EpisodeResult) -> list[TurnRecord]:
    return [
        TurnRecord(turn=index, trajectory=trajectory, utterance=turn.utterance, session_time=turn.session_time)
        for index, (trajectory, turn) in enumerate(zip(result.trajectories, result.turns), start=1)
    ]
