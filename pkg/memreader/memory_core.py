"""
場所: memreader/memory_core.py
内容: 長期メモリーストア (キー単位の upsert)、一時バッファ (FIFO)、決定的な埋め込みとコサイン検索。
目的: エージェントの add / buffer / search 操作が同じ入力から常に同じ状態を作れるようにする。
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
import os
import uuid
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from enum import StrEnum
from functools import cached_property, lru_cache
from typing import Annotated, Any, Literal, NamedTuple, Protocol

import numpy as np
import numpy.typing as npt
from pydantic import AfterValidator, BaseModel, ConfigDict, StrictStr, ValidationError

from memreader.errors import CorruptStore, EmptyPayload, InvalidDraft, InvalidItem
from memreader.files import atomic_write_text, dumps

logger = logging.getLogger(__name__)

DEFAULT_EMBEDDING_DIM = 256
# entry_id 生成用の固定名前空間
ENTRY_NAMESPACE = uuid.UUID("6f1c2a4e-8d3b-5e7f-9a0b-1c2d3e4f5a6b")
_TICK = timedelta(microseconds=1)

EmbeddingVector = npt.NDArray[np.float64]


class MemoryType(StrEnum):
    LONG_TERM = "LongTermMemory"
    USER = "UserMemory"


def _require_text(value: str) -> str:
    if not value.strip():
        raise ValueError("must be a non-empty string")
    return value


NonBlankStr = Annotated[StrictStr, AfterValidator(_require_text)]


class MemoryDraft(BaseModel):
    """add_memory ペイロードの 1 要素。id とタイムスタンプはストア側で付与する."""

    model_config = ConfigDict(frozen=True, extra="ignore")

    key: NonBlankStr
    memory_type: Literal["LongTermMemory", "UserMemory"]
    value: NonBlankStr
    tags: list[StrictStr]


@dataclass(frozen=True)
class MemoryEntry:
    entry_id: str
    key: str
    memory_type: MemoryType
    value: str
    tags: tuple[str, ...]
    created_at: datetime
    updated_at: datetime

    def to_dict(self) -> dict[str, Any]:
        return {
            "entry_id": self.entry_id,
            "key": self.key,
            "memory_type": str(self.memory_type),
            "value": self.value,
            "tags": list(self.tags),
            "created_at": self.created_at.isoformat(),
            "updated_at": self.updated_at.isoformat(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> MemoryEntry:
        draft = MemoryDraft.model_validate(data)
        created_at = _as_utc(datetime.fromisoformat(data["created_at"]))
        updated_at = _as_utc(datetime.fromisoformat(data["updated_at"]))
        if updated_at < created_at:
            raise ValueError(f"entry {data['entry_id']}: updated_at precedes created_at")
        return cls(
            entry_id=str(data["entry_id"]),
            key=draft.key,
            memory_type=MemoryType(draft.memory_type),
            value=draft.value,
            tags=tuple(draft.tags),
            created_at=created_at,
            updated_at=updated_at,
        )


@dataclass(frozen=True)
class MemoryState:
    """長期メモリー M。entries は作成順に並ぶ (検索の同点解消に使う)."""

    entries: tuple[MemoryEntry, ...] = ()
    revision: int = 0

    @cached_property
    def by_id(self) -> dict[str, MemoryEntry]:
        return {entry.entry_id: entry for entry in self.entries}

    @cached_property
    def by_key(self) -> dict[str, MemoryEntry]:
        return {entry.key: entry for entry in self.entries}

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class BufferItem:
    reason: str
    raw_text: str
    source_turn: int
    created_at: datetime

    def to_dict(self) -> dict[str, Any]:
        return {
            "reason": self.reason,
            "raw_text": self.raw_text,
            "source_turn": self.source_turn,
            "created_at": self.created_at.isoformat(),
        }


@dataclass(frozen=True)
class BufferState:
    items: tuple[BufferItem, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.items)


class SearchHit(NamedTuple):
    entry: MemoryEntry
    score: float


def _as_utc(moment: datetime) -> datetime:
    if moment.tzinfo is None:
        return moment.replace(tzinfo=timezone.utc)
    return moment.astimezone(timezone.utc)


def _coerce_draft(index: int, draft: MemoryDraft | Mapping[str, Any]) -> MemoryDraft:
    if isinstance(draft, MemoryDraft):
        return draft
    if not isinstance(draft, Mapping):
        raise InvalidDraft(f"draft {index + 1}: expected an object, got {type(draft).__name__}")
    try:
        return MemoryDraft.model_validate(dict(draft))
    except ValidationError as exc:
        fields = ", ".join(".".join(str(p) for p in err["loc"]) for err in exc.errors())
        raise InvalidDraft(f"draft {index + 1}: invalid field(s) {fields}") from exc


# ----------------------------------------------------------------------
# 長期メモリー
# ----------------------------------------------------------------------
def upsert_entries(
    state: MemoryState,
    payload: Sequence[MemoryDraft | Mapping[str, Any]],
    *,
    now: datetime | None = None,
) -> tuple[MemoryState, list[str]]:
    """キー完全一致なら value/tags を置換、無ければ追加する。全件検証してから書く."""
    if not payload:
        raise EmptyPayload("add_memory payload contains no drafts")
    drafts = [_coerce_draft(index, draft) for index, draft in enumerate(payload)]

    moment = _as_utc(now or datetime.now(timezone.utc))
    revision = state.revision + 1
    entries = list(state.entries)
    positions = {entry.key: pos for pos, entry in enumerate(entries)}
    entry_ids: list[str] = []

    for index, draft in enumerate(drafts):
        pos = positions.get(draft.key)
        if pos is not None:
            current = entries[pos]
            entries[pos] = replace(
                current,
                value=draft.value,
                tags=tuple(draft.tags),
                # 同じ時刻の再書き込みでも updated_at は必ず進める
                updated_at=max(moment, current.updated_at + _TICK),
            )
            entry_ids.append(current.entry_id)
            continue

        entry = MemoryEntry(
            entry_id=str(uuid.uuid5(ENTRY_NAMESPACE, f"{revision}:{index}:{draft.key}")),
            key=draft.key,
            memory_type=MemoryType(draft.memory_type),
            value=draft.value,
            tags=tuple(draft.tags),
            created_at=moment,
            updated_at=moment,
        )
        positions[draft.key] = len(entries)
        entries.append(entry)
        entry_ids.append(entry.entry_id)

    logger.debug("upsert revision=%d drafts=%d size=%d", revision, len(drafts), len(entries))
    return MemoryState(entries=tuple(entries), revision=revision), entry_ids


# ----------------------------------------------------------------------
# バッファ
# ----------------------------------------------------------------------
def buffer_push(buffer: BufferState, item: BufferItem) -> BufferState:
    if not isinstance(item.reason, str) or not item.reason.strip():
        raise InvalidItem("buffer item reason must be non-empty")
    if not isinstance(item.raw_text, str) or not item.raw_text.strip():
        raise InvalidItem("buffer item raw_text must be non-empty")
    if isinstance(item.source_turn, bool) or not isinstance(item.source_turn, int) or item.source_turn < 1:
        raise InvalidItem(f"buffer item source_turn must be >= 1, got {item.source_turn!r}")
    return BufferState(items=(*buffer.items, item))


def buffer_drain(buffer: BufferState) -> tuple[list[BufferItem], BufferState]:
    return list(buffer.items), BufferState()


# ----------------------------------------------------------------------
# 埋め込みと検索
# ----------------------------------------------------------------------
class Embedder(Protocol):
    dim: int

    def __call__(self, text: str) -> EmbeddingVector: ...


class HashedTrigramEmbedder:
    """文字 3-gram の出現数を blake2b ハッシュで dim 個のバケットへ畳み込み、L2 正規化する.

    プロセスごとにソルトされる hash() は使わないので、実行間で同じベクトルになる。
    """

    def __init__(self, dim: int = DEFAULT_EMBEDDING_DIM) -> None:
        if dim < 1:
            raise ValueError("embedding dimension must be >= 1")
        self.dim = dim
        self._cached = lru_cache(maxsize=4096)(self._embed)

    def __call__(self, text: str) -> EmbeddingVector:
        return self._cached(text)

    def _bucket(self, gram: str) -> int:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") % self.dim

    def _embed(self, text: str) -> EmbeddingVector:
        vector = np.zeros(self.dim, dtype=np.float64)
        normalized = " ".join(text.lower().split())
        if normalized:
            padded = f" {normalized} "
            for start in range(len(padded) - 2):
                vector[self._bucket(padded[start : start + 3])] += 1.0
            vector /= np.linalg.norm(vector)
        vector.setflags(write=False)
        return vector


_DEFAULT_EMBEDDER = HashedTrigramEmbedder()


def embed(text: str) -> EmbeddingVector:
    return _DEFAULT_EMBEDDER(text)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def entry_text(entry: MemoryEntry) -> str:
    return " ".join((entry.key, entry.value, " ".join(entry.tags)))


def search(
    state: MemoryState,
    query: str,
    k: int,
    *,
    embedder: Embedder | None = None,
) -> list[SearchHit]:
    """スコア降順、同点は作成順。state は読むだけ."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    embed_fn = embedder or _DEFAULT_EMBEDDER
    query_vector = embed_fn(query)
    scored = [
        (cosine(query_vector, embed_fn(entry_text(entry))), position, entry)
        for position, entry in enumerate(state.entries)
    ]
    top = heapq.nsmallest(k, scored, key=lambda item: (-item[0], item[1]))
    return [SearchHit(entry=entry, score=score) for score, _, entry in top]


# ----------------------------------------------------------------------
# 永続化
# ----------------------------------------------------------------------
def state_to_json(state: MemoryState) -> str:
    document = {"revision": state.revision, "entries": [entry.to_dict() for entry in state.entries]}
    return dumps(document, indent=2) + "\n"


def state_from_json(text: str) -> MemoryState:
    try:
        document = json.loads(text)
        revision = document["revision"]
        if isinstance(revision, bool) or not isinstance(revision, int) or revision < 0:
            raise ValueError(f"revision must be a non-negative integer, got {revision!r}")
        entries = tuple(MemoryEntry.from_dict(item) for item in document["entries"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptStore(f"store document does not parse: {exc}") from exc
    if len({entry.key for entry in entries}) != len(entries):
        raise CorruptStore("store document contains duplicate keys")
    return MemoryState(entries=entries, revision=revision)


def load_store(path: str | os.PathLike[str]) -> MemoryState:
    try:
        with open(path, encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise CorruptStore(f"cannot read store {path}: {exc}") from exc
    return state_from_json(text)


def save_store(state: MemoryState, path: str | os.PathLike[str]) -> None:
    atomic_write_text(path, state_to_json(state))
    logger.info("store written to %s (revision %d, %d entries)", path, state.revision, len(state))
