"""
場所: memreader/policies.py
内容: 決定エンジンに差し込む方策 (スクリプト再生・参照用ヒューリスティック・外部エンドポイント)。
目的: 記録済みトラジェクトリの再生、LLM なしでの動作確認、外部モデルへの委譲を同じ Policy インターフェースで扱う。
"""

from __future__ import annotations

import json
import logging
import os
import re
from collections.abc import Mapping, Sequence
from datetime import datetime
from functools import lru_cache
from pathlib import Path
from typing import Any, NamedTuple

from memreader.config import HeuristicLexicons, Settings
from memreader.decision_engine import (
    ContextView,
    Policy,
    PolicyBinding,
    PolicyKind,
    TurnRecord,
    read_context,
    read_trajectory_records,
)
from memreader.endpoints import EndpointClient
from memreader.errors import ConfigError, EndpointError, InvalidTrajectory, PolicyUnreachable
from memreader.files import read_json
from memreader.memory_core import MemoryType
from memreader.react_protocol import Action, ParsedStep, ToolCall, render_step
from memreader.text import content_words, normalize_quotes

logger = logging.getLogger(__name__)


# ----------------------------------------------------------------------
# スクリプト再生
# ----------------------------------------------------------------------
class ScriptedPolicy:
    """ターンごとの生出力を順番に返す。台本が尽きたら空文字 (パース失敗として記録される)."""

    kind = PolicyKind.SCRIPTED

    def __init__(self, script: Sequence[Sequence[str]]) -> None:
        self.script = [list(turn) for turn in script]

    @classmethod
    def from_records(cls, records: Sequence[TurnRecord]) -> ScriptedPolicy:
        ordered = sorted(records, key=lambda record: record.turn)
        script = []
        for record in ordered:
            outputs = [step.raw_output for step in record.trajectory.steps]
            if record.trajectory.rejected_output is not None:
                outputs.append(record.trajectory.rejected_output)
            script.append(outputs)
        return cls(script)

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> ScriptedPolicy:
        """JSON の台本 (ターンごとの出力リスト) か、トラジェクトリ記録 (JSON Lines) を読む."""
        try:
            document = read_json(path)
        except json.JSONDecodeError:
            document = None
        except OSError as exc:
            raise ConfigError(f"cannot read script {path}: {exc}") from exc

        if isinstance(document, list) and all(isinstance(turn, list) for turn in document):
            if not all(isinstance(output, str) for turn in document for output in turn):
                raise ConfigError(f"script {path} must contain lists of output strings")
            return cls(document)
        try:
            return cls.from_records(read_trajectory_records(path))
        except InvalidTrajectory as exc:
            raise ConfigError(f"script {path} is neither a JSON script nor a trajectory record file: {exc}") from exc

    def respond(self, context: str, *, turn_index: int, step_index: int) -> str:
        try:
            return self.script[turn_index - 1][step_index - 1]
        except IndexError:
            logger.warning("script has no output for turn %d step %d", turn_index, step_index)
            return ""


# ----------------------------------------------------------------------
# 参照用ヒューリスティック
# ----------------------------------------------------------------------
_SPEAKER_LINE = re.compile(r"^(?P<speaker>[^\[\]\n]+?)\s*\[(?P<stamp>[^\]\n]+)\]:\s*(?P<text>.*)$")
_SENTENCE_BREAK = re.compile(r"(?<=[.!?])\s+")
_YOU = re.compile(r"(?<![\w'])(?:you|your)(?![\w'])")
_DIGIT = re.compile(r"\d")

KEY_WORDS = 6
MAX_TAGS = 4
MAX_QUERY_WORDS = 6


class UtteranceLine(NamedTuple):
    speaker: str | None
    text: str


@lru_cache(maxsize=32)
def _phrase_pattern(phrases: tuple[str, ...]) -> re.Pattern[str]:
    ordered = sorted({phrase.lower() for phrase in phrases if phrase.strip()}, key=len, reverse=True)
    if not ordered:
        return re.compile(r"(?!x)x")
    return re.compile(r"(?<![\w'])(?:" + "|".join(re.escape(phrase) for phrase in ordered) + r")(?![\w'])")


def split_lines(utterance: str) -> list[UtteranceLine]:
    lines = []
    for raw in utterance.splitlines():
        if not raw.strip():
            continue
        match = _SPEAKER_LINE.match(raw.strip())
        if match:
            lines.append(UtteranceLine(match["speaker"].strip(), match["text"].strip()))
        else:
            lines.append(UtteranceLine(None, raw.strip()))
    return lines


def split_sentences(text: str) -> list[str]:
    return [sentence.strip() for sentence in _SENTENCE_BREAK.split(text) if sentence.strip()]


class _Rules:
    def __init__(self, lexicons: HeuristicLexicons) -> None:
        self.small_talk = _phrase_pattern(lexicons.small_talk)
        self.referring = _phrase_pattern(lexicons.referring)
        self.fact_markers = _phrase_pattern(lexicons.fact_markers)
        self.pending_detail = _phrase_pattern(lexicons.pending_detail)

    def is_small_talk(self, sentence: str) -> bool:
        return bool(self.small_talk.search(normalize_quotes(sentence).lower()))

    def is_factual(self, sentence: str) -> bool:
        lowered = normalize_quotes(sentence).lower()
        if self.small_talk.search(lowered):
            return False
        return bool(_DIGIT.search(lowered) or self.fact_markers.search(lowered))


def _date_phrase(moment: datetime | None) -> str:
    if moment is None:
        return "an unspecified date"
    return f"{moment:%B} {moment.day}, {moment.year}"


def _unique(words: Sequence[str]) -> list[str]:
    return list(dict.fromkeys(words))


def _step(think: str, action: Action, arguments: Mapping[str, Any]) -> str:
    return render_step(ParsedStep(think=think, call=ToolCall(action=action, arguments=dict(arguments))))


def _search_step(sentences: Sequence[str], expression: str) -> str:
    words = _unique(content_words(" ".join(sentences)))[:MAX_QUERY_WORDS]
    query = " ".join(words) or " ".join(sentences)[:100]
    think = f'The utterance uses the referring expression "{expression}"; look up stored memories before deciding.'
    return _step(think, Action.SEARCH, {"query": query})


def _pending_question(lines: Sequence[UtteranceLine], rules: _Rules) -> str | None:
    """最後の発話が別の話者から相手への詳細確認の質問なら、その疑問語を返す."""
    if len(lines) < 2:
        return None
    last, first = lines[-1], lines[0]
    if last.speaker is None or first.speaker is None or last.speaker == first.speaker:
        return None
    if not last.text.rstrip().endswith("?"):
        return None
    question = normalize_quotes(split_sentences(last.text)[-1]).lower()
    if not _YOU.search(question):
        return None
    match = rules.pending_detail.search(question)
    return match.group() if match else None


def _add_step(view: ContextView, lines: Sequence[UtteranceLine]) -> str:
    speaker = next((line.speaker for line in lines if line.speaker), None)
    spoken = [line.text for line in lines if line.speaker == speaker] or [view.utterance.strip()]
    statement = " ".join(spoken)
    words = _unique(content_words(statement))
    key_words = words[:KEY_WORDS] or statement.split()[:KEY_WORDS]
    key = " ".join(key_words)
    key = key[:1].upper() + key[1:]
    value = f"On {_date_phrase(view.session_time)}, {speaker or 'the user'} stated: {statement}"
    draft = {
        "key": key,
        "memory_type": str(MemoryType.USER),
        "value": value,
        "tags": words[:MAX_TAGS],
    }
    think = "The utterance carries complete information with long-term value; write it to memory."
    return _step(think, Action.ADD, {"memory_list": [draft], "summary": "Extracted 1 memory entry."})


def heuristic_policy_step(context: str, lexicons: HeuristicLexicons | None = None) -> str:
    """曖昧な参照 → search、雑談のみ → ignore、詳細待ちの質問 → buffer、それ以外は add の順に判定する."""
    rules = _Rules(lexicons or HeuristicLexicons())
    view = read_context(context)
    lines = split_lines(view.utterance)
    sentences = [sentence for line in lines for sentence in split_sentences(line.text)]
    substantive = [sentence for sentence in sentences if not rules.is_small_talk(sentence)]
    factual = [sentence for sentence in sentences if rules.is_factual(sentence)]
    searched = any(call.action is Action.SEARCH for call in view.prior_calls)

    if not searched:
        for sentence in substantive:
            match = rules.referring.search(normalize_quotes(sentence).lower())
            if match:
                return _search_step(substantive, match.group())

    if not factual and len(substantive) < len(sentences):
        reason = "Social pleasantries with no new substantive information."
        return _step("Small talk without any new factual content.", Action.IGNORE, {"reason": reason})

    term = _pending_question(lines, rules)
    if term is not None and factual:
        reason = f'The other speaker asked "{term}" about the new topic; wait for the answer before writing memory.'
        think = "The information is still incomplete; keep it until the detail arrives."
        return _step(think, Action.BUFFER, {"reason": reason})

    return _add_step(view, lines)


class HeuristicPolicy:
    kind = PolicyKind.HEURISTIC

    def __init__(self, lexicons: HeuristicLexicons | None = None) -> None:
        self.lexicons = lexicons or HeuristicLexicons()

    def respond(self, context: str, *, turn_index: int, step_index: int) -> str:
        return heuristic_policy_step(context, self.lexicons)


# ----------------------------------------------------------------------
# 外部エンドポイント
# ----------------------------------------------------------------------
class ExternalPolicy:
    """1 ステップにつき {"context": ...} を POST し、{"output": ...} を受け取る."""

    kind = PolicyKind.EXTERNAL

    def __init__(self, client: EndpointClient) -> None:
        self.client = client

    def close(self) -> None:
        self.client.close()

    def respond(self, context: str, *, turn_index: int, step_index: int) -> str:
        try:
            response = self.client.post({"context": context})
        except EndpointError as exc:
            raise PolicyUnreachable(f"turn {turn_index} step {step_index}: {exc}") from exc
        output = response.get("output")
        if not isinstance(output, str):
            raise PolicyUnreachable(f"turn {turn_index} step {step_index}: response carries no string 'output'")
        return output


def build_policy(binding: PolicyBinding, settings: Settings | None = None, **client_options: Any) -> Policy:
    """PolicyBinding から方策インスタンスを作る。client_options は EndpointClient に渡す."""
    settings = settings or Settings()
    if binding.kind is PolicyKind.HEURISTIC:
        return HeuristicPolicy(settings.lexicons)
    if binding.kind is PolicyKind.SCRIPTED:
        script = binding.configuration.get("script")
        if script is not None:
            return ScriptedPolicy(script)
        return ScriptedPolicy.load(Path(binding.configuration["source"]))
    timeout = float(binding.configuration.get("timeout") or settings.endpoints.timeout)
    return ExternalPolicy(EndpointClient(binding.configuration["endpoint"], timeout, **client_options))
