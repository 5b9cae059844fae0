"""
場所: memreader/data_pipeline.py
内容: トラジェクトリと教師トレースを ShareGPT 形式の学習サンプルへ変換し、buffer で終わるターンを連結し、品質フィルタを掛ける。
目的: 推論時と同じプロトコル文字列で学習データを作り、壊れたサンプルを理由別に数えて落とす。

ShareGPT ファイル形式 (JSON 配列):

    [{"messages": [{"role": "system", "content": "..."},
                   {"role": "human", "content": "..."},
                   {"role": "function_call", "content": "<think>...</think>\\n<tool_call>...</tool_call>"},
                   {"role": "observation", "content": "..."}]}]
"""

from __future__ import annotations

import logging
import os
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Any, NamedTuple

from memreader.config import ChainConfig
from memreader.decision_engine import Step, Trajectory
from memreader.errors import InvalidTrajectory, MisalignedInputs, TerminalMismatch, TraceParseError
from memreader.files import read_json, write_json
from memreader.react_protocol import (
    TERMINAL_ACTIONS,
    Action,
    FormatReport,
    ParsedStep,
    ToolCall,
    parse_output,
    parse_teacher_trace,
    validate_payload,
)

logger = logging.getLogger(__name__)

DEFAULT_THINK_MAX_CHARS = 2000


class Role(StrEnum):
    SYSTEM = "system"
    HUMAN = "human"
    FUNCTION_CALL = "function_call"
    OBSERVATION = "observation"


@dataclass(frozen=True)
class Message:
    # ファイルから読んだ未知のロールも保持し、フィルタで RoleOrderViolation として数える
    role: str
    content: str

    def to_dict(self) -> dict[str, str]:
        return {"role": str(self.role), "content": self.content}


@dataclass(frozen=True)
class ShareGPTSample:
    messages: tuple[Message, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))

    @property
    def turn_count(self) -> int:
        return sum(1 for message in self.messages if message.role == Role.HUMAN)

    def to_dict(self) -> dict[str, Any]:
        return {"messages": [message.to_dict() for message in self.messages]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ShareGPTSample:
        messages = data.get("messages")
        if not isinstance(messages, list):
            raise InvalidTrajectory("sample must carry a 'messages' list")
        converted = []
        for position, item in enumerate(messages, start=1):
            if not isinstance(item, Mapping) or not isinstance(item.get("role"), str):
                raise InvalidTrajectory(f"message {position} must be an object with a string role")
            converted.append(Message(role=item["role"], content=str(item.get("content", ""))))
        return cls(tuple(converted))


class FilterReason(StrEnum):
    BAD_JSON = "BadJson"
    ILLEGAL_TOOL_LOGIC = "IllegalToolLogic"
    EMPTY_THINK = "EmptyThink"
    THINK_TOO_LONG = "ThinkTooLong"
    ROLE_ORDER_VIOLATION = "RoleOrderViolation"


@dataclass
class FilterReport:
    kept: int = 0
    dropped: int = 0
    reasons: dict[FilterReason, int] = field(default_factory=lambda: {reason: 0 for reason in FilterReason})

    def to_dict(self) -> dict[str, Any]:
        return {
            "kept": self.kept,
            "dropped": self.dropped,
            "reasons": {str(reason): count for reason, count in self.reasons.items()},
        }


# ----------------------------------------------------------------------
# 変換
# ----------------------------------------------------------------------
def to_sharegpt(system_prompt: str, trajectories: Sequence[tuple[str, Trajectory]]) -> list[ShareGPTSample]:
    """1 ターン 1 サンプル。function_call には推論時と同じプロトコル文字列を入れる."""
    if not trajectories:
        raise InvalidTrajectory("no trajectories to convert")
    samples = []
    for position, (utterance, trajectory) in enumerate(trajectories, start=1):
        if not trajectory.steps:
            raise InvalidTrajectory(f"trajectory {position} has no steps")
        messages = [Message(Role.SYSTEM, system_prompt), Message(Role.HUMAN, utterance)]
        for step in trajectory.steps:
            messages.append(Message(Role.FUNCTION_CALL, step.raw_output))
            messages.append(Message(Role.OBSERVATION, step.observation))
        samples.append(ShareGPTSample(tuple(messages)))
    return samples


def function_calls(sample: ShareGPTSample) -> list[ParsedStep | FormatReport]:
    return [parse_output(message.content) for message in sample.messages if message.role == Role.FUNCTION_CALL]


def chain_expand(
    samples: Sequence[ShareGPTSample],
    terminal_actions: Sequence[Action | None],
    config: ChainConfig | None = None,
) -> list[ShareGPTSample]:
    """buffer で終わったターンを次のターンへ連結する。None (打ち切りターン) はチェーンを閉じる."""
    config = config or ChainConfig()
    if len(samples) != len(terminal_actions):
        raise MisalignedInputs(f"{len(samples)} samples but {len(terminal_actions)} terminal actions")

    chains: list[ShareGPTSample] = []
    current: list[Message] = []
    turns = 0
    for sample, terminal in zip(samples, terminal_actions):
        if not current:
            current = list(sample.messages)
        else:
            current.extend(message for message in sample.messages if message.role != Role.SYSTEM)
        turns += 1
        if terminal is not Action.BUFFER or turns >= config.max_chain_len:
            chains.append(ShareGPTSample(tuple(current)))
            current, turns = [], 0
    if current:
        chains.append(ShareGPTSample(tuple(current)))
    return chains


# ----------------------------------------------------------------------
# 品質フィルタ
# ----------------------------------------------------------------------
_NEXT_ROLES: dict[str, frozenset[str]] = {
    Role.SYSTEM: frozenset({Role.HUMAN}),
    Role.HUMAN: frozenset({Role.FUNCTION_CALL}),
    Role.FUNCTION_CALL: frozenset({Role.OBSERVATION}),
    Role.OBSERVATION: frozenset({Role.HUMAN, Role.FUNCTION_CALL}),
}


def _role_order_ok(messages: Sequence[Message]) -> bool:
    if len(messages) < 4 or messages[0].role != Role.SYSTEM:
        return False
    for current, following in zip(messages, messages[1:]):
        if following.role not in _NEXT_ROLES.get(current.role, frozenset()):
            return False
    return messages[-1].role == Role.OBSERVATION


def _tool_logic_ok(messages: Sequence[Message], calls: Sequence[ToolCall]) -> bool:
    """search の後には observation、各ターン最後の呼び出しは終端、add はサンプル最後の呼び出しのみ."""
    fc_positions = [index for index, message in enumerate(messages) if message.role == Role.FUNCTION_CALL]
    for number, (position, call) in enumerate(zip(fc_positions, calls)):
        is_last = number == len(calls) - 1
        following = messages[position + 1 : position + 3]
        ends_turn = is_last or any(message.role == Role.HUMAN for message in following)
        if call.action is Action.SEARCH:
            if not following or following[0].role != Role.OBSERVATION or ends_turn:
                return False
        elif call.action not in TERMINAL_ACTIONS or not ends_turn:
            return False
        if call.action is Action.ADD and not is_last:
            return False
    return bool(calls)


def sample_reasons(sample: ShareGPTSample, think_max_chars: int = DEFAULT_THINK_MAX_CHARS) -> set[FilterReason]:
    reasons: set[FilterReason] = set()
    messages = sample.messages
    if not _role_order_ok(messages):
        reasons.add(FilterReason.ROLE_ORDER_VIOLATION)

    parsed_steps: list[ParsedStep] = []
    bad_json = False
    for result in function_calls(sample):
        if isinstance(result, FormatReport) or not validate_payload(result.call).valid:
            bad_json = True
            continue
        parsed_steps.append(result)
    if bad_json:
        reasons.add(FilterReason.BAD_JSON)
    elif not _tool_logic_ok(messages, [step.call for step in parsed_steps]):
        reasons.add(FilterReason.ILLEGAL_TOOL_LOGIC)

    for step in parsed_steps:
        if not step.think.strip():
            reasons.add(FilterReason.EMPTY_THINK)
        if len(step.think) > think_max_chars:
            reasons.add(FilterReason.THINK_TOO_LONG)
    return reasons


def quality_filter(
    samples: Sequence[ShareGPTSample],
    think_max_chars: int = DEFAULT_THINK_MAX_CHARS,
) -> tuple[list[ShareGPTSample], FilterReport]:
    if think_max_chars < 1:
        raise ValueError(f"think_max_chars must be >= 1, got {think_max_chars}")
    report = FilterReport()
    kept: list[ShareGPTSample] = []
    for index, sample in enumerate(samples):
        reasons = sample_reasons(sample, think_max_chars)
        if reasons:
            report.dropped += 1
            for reason in reasons:
                report.reasons[reason] += 1
            logger.warning("sample %d dropped: %s", index, ", ".join(sorted(reasons)))
            continue
        report.kept += 1
        kept.append(sample)
    return kept, report


# ----------------------------------------------------------------------
# 教師トレース
# ----------------------------------------------------------------------
class TeacherDraft(NamedTuple):
    steps: list[Step]
    terminal: Action

    def to_trajectory(self) -> Trajectory:
        return Trajectory(steps=tuple(self.steps), terminal_action=self.terminal)


_TEACHER_TO_ACTION = {
    "add": Action.ADD,
    "search": Action.SEARCH,
    "buffer": Action.BUFFER,
    "ignore": Action.IGNORE,
}


def _teacher_arguments(name: str, payload: str) -> dict[str, Any]:
    if name == "search":
        return {"query": payload.strip()}
    if name in ("buffer", "ignore"):
        return {"reason": payload.strip()}
    # add[] は内容を持たないので空の下書きになる
    return {}


def teacher_to_trajectory(trace_text: str) -> TeacherDraft:
    parsed = parse_teacher_trace(trace_text)
    finishes = [index for index, step in enumerate(parsed) if step.action_name == "finish"]
    if finishes and finishes[0] != len(parsed) - 1:
        raise TraceParseError(f"finish[] must be the final action, found at step {finishes[0] + 1}")

    body = parsed[:-1] if finishes else parsed
    steps = [
        Step(
            think=item.thought,
            call=ToolCall(_TEACHER_TO_ACTION[item.action_name], _teacher_arguments(item.action_name, item.action_payload)),
            observation=item.observation,
        )
        for item in body
    ]
    last_action = steps[-1].call.action if steps else None

    if finishes:
        finish = parsed[-1]
        terminal = _TEACHER_TO_ACTION[finish.action_payload]
        if last_action is not None and last_action in TERMINAL_ACTIONS and last_action is not terminal:
            raise TerminalMismatch(f"finish[{finish.action_payload}] disagrees with the last action {last_action}")
        if last_action is not terminal:
            # finish 直前が search (または手順なし) なら finish 自体を終端ステップにする
            arguments = _teacher_arguments(finish.action_payload, finish.thought)
            steps.append(Step(think=finish.thought, call=ToolCall(terminal, arguments), observation=finish.observation))
        return TeacherDraft(steps, terminal)

    if last_action is None or last_action not in TERMINAL_ACTIONS:
        raise TraceParseError("trace ends without finish[] or a terminal action")
    return TeacherDraft(steps, last_action)


_BLANK_LINES = re.compile(r"\n[ \t]*\n")
_FINISH = re.compile(r"^Action\s*\[?\d+\]?\s*:\s*finish\[", re.MULTILINE)
_OBSERVATION_START = re.compile(r"^Observation\s*\[?\d+\]?\s*:")
_DIALOGUE = re.compile(r"^Dialogue:\s*(?P<text>.+)$", re.MULTILINE)


def split_teacher_records(text: str) -> list[str]:
    """空行区切りのレコードに分ける。finish[] の後の Observation だけは同じレコードに含める."""
    records: list[str] = []
    current: list[str] = []
    for chunk in _BLANK_LINES.split(text.replace("\r\n", "\n")):
        chunk = chunk.strip()
        if not chunk:
            continue
        finished = bool(current) and bool(_FINISH.search("\n".join(current)))
        if current and finished and not _OBSERVATION_START.match(chunk):
            records.append("\n".join(current))
            current = []
        current.append(chunk)
    if current:
        records.append("\n".join(current))
    return records


def teacher_dialogue(trace_text: str) -> str:
    """レコード内の "Dialogue:" 行の本文。無ければ空文字."""
    match = _DIALOGUE.search(trace_text)
    return match["text"].strip() if match else ""


def read_teacher_traces(path: str | os.PathLike[str]) -> list[str]:
    with open(path, encoding="utf-8") as handle:
        return split_teacher_records(handle.read())


def read_sharegpt(path: str | os.PathLike[str]) -> list[ShareGPTSample]:
    document = read_json(path)
    if not isinstance(document, list):
        raise InvalidTrajectory(f"{path} must contain a JSON list of samples")
    samples = []
    for position, item in enumerate(document, start=1):
        if not isinstance(item, Mapping):
            raise InvalidTrajectory(f"{path} sample {position}: expected an object")
        try:
            samples.append(ShareGPTSample.from_dict(item))
        except InvalidTrajectory as exc:
            raise InvalidTrajectory(f"{path} sample {position}: {exc}") from exc
    return samples


def write_sharegpt(path: str | os.PathLike[str], samples: Sequence[ShareGPTSample]) -> None:
    write_json(path, [sample.to_dict() for sample in samples])
