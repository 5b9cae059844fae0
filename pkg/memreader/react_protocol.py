"""
場所: memreader/react_protocol.py
内容: モデル出力プロトコル (think ブロック + tool_call ブロック) のパーサーとペイロード検証、
      フォーマット報酬、教師モデルの Thought/Action/Observation トレースのパーサー。
目的: 推論時・学習データ生成時・報酬計算時に同じ 1 つのパーサーを使えるようにする。

プロトコル (1 出力につき各ブロック 1 つ、ブロック外は空白のみ):

    <think>
    {reasoning}
    </think>
    <tool_call>
    {"name": "<action>", "arguments": {...}}
    </tool_call>
"""

from __future__ import annotations

import json
import re
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Any, NamedTuple

from pydantic import AliasChoices, BaseModel, ConfigDict, Field, ValidationError

from memreader.errors import TraceParseError
from memreader.memory_core import MemoryDraft, NonBlankStr

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
TOOL_OPEN = "<tool_call>"
TOOL_CLOSE = "</tool_call>"


class Action(StrEnum):
    ADD = "add_memory"
    BUFFER = "buffer_memory"
    SEARCH = "search_memory"
    IGNORE = "ignore_memory"

    @property
    def is_terminal(self) -> bool:
        return self is not Action.SEARCH


TERMINAL_ACTIONS = frozenset({Action.ADD, Action.BUFFER, Action.IGNORE})


class Violation(StrEnum):
    MISSING_THINK = "MissingThink"
    UNCLOSED_TAG = "UnclosedTag"
    MISSING_TOOL_CALL = "MissingToolCall"
    MALFORMED_TOOL_BLOCK = "MalformedToolBlock"
    UNPARSEABLE_ARGUMENTS = "UnparseableArguments"
    UNKNOWN_ACTION = "UnknownAction"
    INVALID_PAYLOAD = "InvalidPayload"


@dataclass(frozen=True)
class ToolCall:
    action: Action
    arguments: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ParsedStep:
    think: str
    call: ToolCall


@dataclass(frozen=True)
class FormatReport:
    violations: tuple[Violation, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.violations

    def merged(self, other: FormatReport) -> FormatReport:
        return FormatReport(_dedupe((*self.violations, *other.violations)))


def _dedupe(violations: tuple[Violation, ...] | list[Violation]) -> tuple[Violation, ...]:
    return tuple(dict.fromkeys(violations))


# ----------------------------------------------------------------------
# 引数スキーマ
# ----------------------------------------------------------------------
class MemoryPayload(BaseModel):
    """add_memory の引数。"memory list" (空白区切り) も受け付けて memory_list に正規化する."""

    model_config = ConfigDict(extra="ignore")

    memory_list: list[MemoryDraft] = Field(
        min_length=1,
        validation_alias=AliasChoices("memory_list", "memory list"),
    )
    summary: NonBlankStr


class ReasonArguments(BaseModel):
    model_config = ConfigDict(extra="ignore")

    reason: NonBlankStr


class QueryArguments(BaseModel):
    model_config = ConfigDict(extra="ignore")

    query: NonBlankStr


_ARGUMENT_SCHEMAS: dict[Action, type[BaseModel]] = {
    Action.ADD: MemoryPayload,
    Action.BUFFER: ReasonArguments,
    Action.IGNORE: ReasonArguments,
    Action.SEARCH: QueryArguments,
}


def parse_arguments(call: ToolCall) -> BaseModel:
    """action ごとのスキーマで引数を検証する。失敗時は pydantic.ValidationError."""
    return _ARGUMENT_SCHEMAS[call.action].model_validate(dict(call.arguments))


def memory_payload(call: ToolCall) -> MemoryPayload:
    payload = parse_arguments(call)
    if not isinstance(payload, MemoryPayload):
        raise ValueError(f"{call.action} carries no memory payload")
    return payload


def validate_payload(call: ToolCall) -> FormatReport:
    try:
        parse_arguments(call)
    except ValidationError:
        return FormatReport((Violation.INVALID_PAYLOAD,))
    return FormatReport()


# ----------------------------------------------------------------------
# モデル出力のパース
# ----------------------------------------------------------------------
class _Block(NamedTuple):
    start: int
    end: int
    content: str


def _locate_block(
    text: str,
    open_tag: str,
    close_tag: str,
    *,
    missing: Violation,
    duplicate: Violation,
    violations: list[Violation],
) -> _Block | None:
    opens = text.count(open_tag)
    closes = text.count(close_tag)
    if opens == 0 and closes == 0:
        violations.append(missing)
        return None
    if opens != closes:
        violations.append(Violation.UNCLOSED_TAG)
        return None
    if opens > 1:
        violations.append(duplicate)
        return None
    start = text.index(open_tag)
    close = text.index(close_tag)
    if close < start:
        violations.append(Violation.UNCLOSED_TAG)
        return None
    return _Block(start, close + len(close_tag), text[start + len(open_tag) : close])


def _decode_tool_block(body: str, violations: list[Violation]) -> ToolCall | None:
    body = body.strip()
    if not body:
        violations.append(Violation.MALFORMED_TOOL_BLOCK)
        return None
    try:
        decoded = json.loads(body)
    except json.JSONDecodeError:
        violations.append(Violation.UNPARSEABLE_ARGUMENTS)
        return None
    if not isinstance(decoded, dict) or not isinstance(decoded.get("name"), str) or "arguments" not in decoded:
        violations.append(Violation.MALFORMED_TOOL_BLOCK)
        return None

    arguments = decoded["arguments"]
    if isinstance(arguments, str):
        # OpenAI 形式 (arguments が JSON 文字列) も受け付ける
        try:
            arguments = json.loads(arguments)
        except json.JSONDecodeError:
            violations.append(Violation.UNPARSEABLE_ARGUMENTS)
            arguments = None
    if arguments is not None and not isinstance(arguments, dict):
        violations.append(Violation.UNPARSEABLE_ARGUMENTS)
        arguments = None

    try:
        action = Action(decoded["name"])
    except ValueError:
        violations.append(Violation.UNKNOWN_ACTION)
        return None
    if arguments is None:
        return None
    return ToolCall(action=action, arguments=arguments)


def _coerce_text(text: Any) -> str:
    if isinstance(text, (bytes, bytearray, memoryview)):
        return bytes(text).decode("utf-8", errors="replace")
    if text is None:
        return ""
    return text if isinstance(text, str) else str(text)


PROTOCOL_TAGS = (THINK_OPEN, THINK_CLOSE, TOOL_OPEN, TOOL_CLOSE)


def _strip_framing(text: str) -> str:
    """タグ直後と直前の改行 1 つずつだけを取り除く."""
    for newline in ("\r\n", "\n"):
        if text.startswith(newline):
            text = text[len(newline) :]
            break
    return text[:-1] if text.endswith("\n") else text


def parse_output(text: str | bytes) -> ParsedStep | FormatReport:
    """検出できた違反をすべて集めて返す。どんな入力でも例外にはしない."""
    text = _coerce_text(text)
    violations: list[Violation] = []

    think = _locate_block(
        text,
        THINK_OPEN,
        THINK_CLOSE,
        missing=Violation.MISSING_THINK,
        duplicate=Violation.UNCLOSED_TAG,
        violations=violations,
    )
    tool = _locate_block(
        text,
        TOOL_OPEN,
        TOOL_CLOSE,
        missing=Violation.MISSING_TOOL_CALL,
        duplicate=Violation.MALFORMED_TOOL_BLOCK,
        violations=violations,
    )

    if think is not None and tool is not None:
        outside = (text[: think.start], text[think.end : tool.start], text[tool.end :])
        if think.end > tool.start or any(part.strip() for part in outside):
            violations.append(Violation.MALFORMED_TOOL_BLOCK)

    call = _decode_tool_block(tool.content, violations) if tool is not None else None

    if violations or think is None or call is None:
        return FormatReport(_dedupe(violations or [Violation.MALFORMED_TOOL_BLOCK]))
    return ParsedStep(think=_strip_framing(think.content), call=call)


def render_step(step: ParsedStep) -> str:
    """ParsedStep を正規形のプロトコル文字列に戻す (parse_output と往復可能).

    JSON 内の < と > は \\u003c / \\u003e で書き出す。think にプロトコルのタグが含まれる場合は ValueError。
    """
    tags = [tag for tag in PROTOCOL_TAGS if tag in step.think]
    if tags:
        raise ValueError(f"think text must not contain protocol tags: {', '.join(tags)}")
    tool_json = json.dumps({"name": str(step.call.action), "arguments": dict(step.call.arguments)}, ensure_ascii=False)
    tool_json = tool_json.replace("<", "\\u003c").replace(">", "\\u003e")
    return f"{THINK_OPEN}\n{step.think}\n{THINK_CLOSE}\n{TOOL_OPEN}\n{tool_json}\n{TOOL_CLOSE}"


def check_output(text: str | bytes) -> FormatReport:
    """構造とペイロードの両方を検査したレポート."""
    parsed = parse_output(text)
    if isinstance(parsed, FormatReport):
        return parsed
    return validate_payload(parsed.call)


def format_reward(text: str | bytes) -> float:
    return 1.0 if check_output(text).valid else 0.0


# ----------------------------------------------------------------------
# 教師トレース (Thought N / Action N / Observation N)
# ----------------------------------------------------------------------
class TeacherStep(NamedTuple):
    thought: str
    action_name: str
    action_payload: str
    observation: str


TEACHER_ACTIONS = ("add", "search", "buffer", "ignore", "finish")
FINISH_KEYWORDS = frozenset({"add", "buffer", "ignore"})

_HEADER = re.compile(r"^(?P<field>Thought|Action|Observation)\s*\[?(?P<number>\d+)\]?\s*:\s?(?P<body>.*)$")
_HEADER_LIKE = re.compile(r"^(?:Thought|Action|Observation)\b")
_ACTION_FORM = re.compile(r"^(?P<name>[A-Za-z_]+)\[(?P<payload>.*)\]$", re.DOTALL)
_FIELD_ORDER = {"thought": 0, "action": 1, "observation": 2}


@dataclass
class _RawStep:
    number: int
    fields: dict[str, str] = field(default_factory=dict)
    lines: dict[str, int] = field(default_factory=dict)


def _parse_action(raw: _RawStep) -> tuple[str, str]:
    line_number = raw.lines["action"]
    match = _ACTION_FORM.match(raw.fields["action"].strip())
    if match is None or match["name"] not in TEACHER_ACTIONS:
        raise TraceParseError(f"unknown action form {raw.fields['action'].strip()!r}", line_number)
    name, payload = match["name"], match["payload"]
    if name == "finish" and payload not in FINISH_KEYWORDS:
        raise TraceParseError(f"finish[] must contain exactly one of add|buffer|ignore, got {payload!r}", line_number)
    if name in ("search", "buffer", "ignore") and not payload.strip():
        raise TraceParseError(f"{name}[] requires non-empty content", line_number)
    return name, payload


def parse_teacher_trace(text: str) -> list[TeacherStep]:
    steps: list[_RawStep] = []
    current_field: str | None = None

    for line_number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line:
            continue
        match = _HEADER.match(line)
        if match is None:
            if _HEADER_LIKE.match(line):
                raise TraceParseError(f"malformed step header {line!r}", line_number)
            if current_field is not None:
                step = steps[-1]
                step.fields[current_field] = f"{step.fields[current_field]}\n{line}"
            # 最初の見出しより前の行 (Dialogue: など) は読み飛ばす
            continue

        name = match["field"].lower()
        number = int(match["number"])
        expected = len(steps)
        if number == expected + 1:
            if name == "observation":
                raise TraceParseError(f"step {number} starts with an observation", line_number)
            steps.append(_RawStep(number))
        elif number != expected:
            raise TraceParseError(f"step {number} out of order (expected {expected} or {expected + 1})", line_number)

        step = steps[-1]
        if name in step.fields:
            raise TraceParseError(f"duplicate {match['field']} {number}", line_number)
        if any(_FIELD_ORDER[seen] > _FIELD_ORDER[name] for seen in step.fields):
            raise TraceParseError(f"{match['field']} {number} appears out of order", line_number)
        step.fields[name] = match["body"].strip()
        step.lines[name] = line_number
        current_field = name

    if not steps:
        raise TraceParseError("trace contains no Thought/Action steps")

    parsed: list[TeacherStep] = []
    for raw in steps:
        if "action" not in raw.fields:
            raise TraceParseError(f"step {raw.number} has no action", min(raw.lines.values()))
        name, payload = _parse_action(raw)
        parsed.append(
            TeacherStep(
                thought=raw.fields.get("thought", ""),
                action_name=name,
                action_payload=payload,
                observation=raw.fields.get("observation", ""),
            )
        )
    return parsed
