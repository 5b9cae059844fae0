"""
場所: memreader/errors.py
内容: ライブラリ全体で共有する例外階層。
目的: CLI の終了コードや Dify ツールのエラーメッセージへ一貫して変換できるようにする。
"""

from __future__ import annotations

from typing import Any


class MemReaderError(Exception):
    """Base class for every error raised by the library."""


class ConfigError(MemReaderError):
    """Configuration document or flag could not be loaded or validated."""


# memory-core
class EmptyPayload(MemReaderError):
    pass


class InvalidDraft(MemReaderError):
    pass


class InvalidItem(MemReaderError):
    pass


# react-protocol / data-pipeline
class TraceParseError(MemReaderError):
    def __init__(self, message: str, line_number: int | None = None) -> None:
        self.line_number = line_number
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(f"{prefix}{message}")


class TerminalMismatch(MemReaderError):
    pass


class InvalidTrajectory(MemReaderError):
    pass


class MisalignedInputs(MemReaderError):
    pass


# decision-engine / endpoints
class EndpointError(MemReaderError):
    """Transport-level failure talking to an external endpoint."""


class PolicyFailure(MemReaderError):
    """The policy produced output that cannot be executed."""


class PolicyUnreachable(MemReaderError):
    pass


class JudgeUnreachable(MemReaderError):
    pass


class EpisodeError(MemReaderError):
    def __init__(self, turn_index: int, cause: Exception, partial: Any = None) -> None:
        self.turn_index = turn_index
        self.cause = cause
        # 失敗したターンより前までの EpisodeResult
        self.partial = partial
        super().__init__(f"turn {turn_index}: {cause}")


# reward-suite / grpo-math
class EmptySequence(MemReaderError):
    pass


class GroupTooSmall(MemReaderError):
    pass


class LengthMismatch(MemReaderError):
    pass


class PositiveLogprob(MemReaderError):
    pass


class CorruptStore(MemReaderError):
    """Persisted store document is missing or does not parse."""


class InvalidEpisode(MemReaderError):
    """Episode input file is empty or does not match the turn-object layout."""


class InvalidGold(MemReaderError):
    """Gold-annotation file does not parse."""


class InvalidDump(MemReaderError):
    """One or more groups of a logprob dump failed to load or evaluate."""

    def __init__(self, problems: list[str]) -> None:
        self.problems = problems
        super().__init__("; ".join(problems))
