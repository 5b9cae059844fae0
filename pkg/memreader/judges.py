"""
場所: memreader/judges.py
内容: 抽出メモリーの正確性・網羅性・幻覚回避を 0〜1 で採点するジャッジ (字句一致 / 外部エンドポイント)。
目的: テストでは決定的な字句一致ジャッジを使い、本番では外部ジャッジに差し替えられるようにする。
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, NamedTuple, Protocol

from memreader.endpoints import EndpointClient
from memreader.errors import EndpointError, JudgeUnreachable
from memreader.text import content_words

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class JudgeScores:
    correctness: float
    completeness: float
    hallucination_avoidance: float

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if not (isinstance(value, (int, float)) and math.isfinite(value) and 0.0 <= value <= 1.0):
                raise ValueError(f"{name} must be a real in [0, 1], got {value!r}")

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


class JudgeRequest(NamedTuple):
    request_id: str
    extracted: Mapping[str, Any] | None
    reference: Mapping[str, Any] | None
    dialogue: str


class Judge(Protocol):
    def score(
        self,
        extracted: Mapping[str, Any] | None,
        reference: Mapping[str, Any] | None,
        dialogue: str,
    ) -> JudgeScores: ...


def payload_text(payload: Mapping[str, Any] | None) -> str:
    """memory_list (または "memory list") の value を連結する。単一エントリの形も受け付ける."""
    if not payload:
        return ""
    if isinstance(payload.get("value"), str):
        return payload["value"]
    items = payload.get("memory_list", payload.get("memory list")) or []
    return " ".join(str(item.get("value", "")) for item in items if isinstance(item, Mapping))


class LexicalOverlapJudge:
    """語集合の F1 → correctness、参照語の再現率 → completeness、
    会話にも参照にも無い語の割合の補数 → hallucination_avoidance."""

    def score(
        self,
        extracted: Mapping[str, Any] | None,
        reference: Mapping[str, Any] | None,
        dialogue: str,
    ) -> JudgeScores:
        ext = set(content_words(payload_text(extracted)))
        ref = set(content_words(payload_text(reference)))
        if not ext:
            return JudgeScores(
                correctness=1.0 if not ref else 0.0,
                completeness=1.0 if not ref else 0.0,
                hallucination_avoidance=1.0,
            )

        supported = ref | set(content_words(dialogue))
        hallucination_avoidance = 1.0 - len(ext - supported) / len(ext)
        if not ref:
            return JudgeScores(0.0, 1.0, hallucination_avoidance)

        overlap = len(ext & ref)
        precision = overlap / len(ext)
        recall = overlap / len(ref)
        f1 = 0.0 if overlap == 0 else 2 * precision * recall / (precision + recall)
        return JudgeScores(f1, recall, hallucination_avoidance)


class ExternalJudge:
    """POST {"extracted", "reference", "dialogue"} → {"correctness", "completeness", "hallucination_avoidance"}."""

    def __init__(self, client: EndpointClient) -> None:
        self.client = client

    def close(self) -> None:
        self.client.close()

    def score(
        self,
        extracted: Mapping[str, Any] | None,
        reference: Mapping[str, Any] | None,
        dialogue: str,
    ) -> JudgeScores:
        request = {
            "extracted": dict(extracted) if extracted is not None else None,
            "reference": dict(reference) if reference is not None else None,
            "dialogue": dialogue,
        }
        try:
            response = self.client.post(request)
        except EndpointError as exc:
            raise JudgeUnreachable(str(exc)) from exc
        try:
            return JudgeScores(
                correctness=float(response["correctness"]),
                completeness=float(response["completeness"]),
                hallucination_avoidance=float(response["hallucination_avoidance"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise JudgeUnreachable(f"judge response is missing or has invalid scores: {exc}") from exc


def judge_many(requests: Iterable[JudgeRequest], judge: Judge, workers: int = 4) -> dict[str, JudgeScores]:
    """リクエストを並列に採点し、完了順に関係なく request_id をキーにして返す."""
    pending = list(requests)
    if not pending:
        return {}
    ids = [request.request_id for request in pending]
    if len(set(ids)) != len(ids):
        raise ValueError("judge request ids must be unique")

    def _score(request: JudgeRequest) -> JudgeScores:
        return judge.score(request.extracted, request.reference, request.dialogue)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(_score, pending))
    logger.info("judged %d trajectories with %s", len(results), type(judge).__name__)
    return dict(zip(ids, results))
