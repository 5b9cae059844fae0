import json
import random
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from generators import random_store
from memreader.errors import CorruptStore, EmptyPayload, InvalidDraft, InvalidItem
from memreader.memory_core import (
    BufferItem,
    BufferState,
    HashedTrigramEmbedder,
    MemoryState,
    MemoryType,
    buffer_drain,
    buffer_push,
    cosine,
    embed,
    entry_text,
    load_store,
    save_store,
    search,
    state_from_json,
    state_to_json,
    upsert_entries,
)

T0 = datetime(2023, 1, 20, 16, 4, tzinfo=timezone.utc)

DANCE = {
    "key": "Dance studio startup plan",
    "memory_type": "UserMemory",
    "value": "On January 20, 2023, Jon informed Gina that he is planning to start a dance studio.",
    "tags": ["business", "dance studio"],
}
WEATHER = {
    "key": "Weekly rainfall log",
    "memory_type": "LongTermMemory",
    "value": "Precipitation totals of 12mm recorded in Oslo.",
    "tags": ["meteorology"],
}


def test_upsert_adds_new_entries_in_order():
    state, ids = upsert_entries(MemoryState(), [DANCE, WEATHER], now=T0)

    assert state.revision == 1
    assert [entry.key for entry in state.entries] == [DANCE["key"], WEATHER["key"]]
    assert ids == [entry.entry_id for entry in state.entries]
    assert state.entries[0].memory_type is MemoryType.USER
    assert state.entries[0].created_at == state.entries[0].updated_at == T0


def test_upsert_replaces_existing_key_and_keeps_identity():
    state, first_ids = upsert_entries(MemoryState(), [DANCE], now=T0)
    later = T0 + timedelta(days=1)
    revised = {**DANCE, "value": "Jon opened the dance studio.", "tags": ["opening"]}

    updated, ids = upsert_entries(state, [revised], now=later)

    assert len(updated) == 1
    assert ids == first_ids
    entry = updated.by_key[DANCE["key"]]
    assert entry.value == "Jon opened the dance studio."
    assert entry.tags == ("opening",)
    assert entry.created_at == T0
    assert entry.updated_at == later


def test_upsert_at_same_moment_still_advances_updated_at():
    state, _ = upsert_entries(MemoryState(), [DANCE], now=T0)
    revised = {**DANCE, "value": "Jon opened the dance studio."}

    once, _ = upsert_entries(state, [revised], now=T0)
    twice, _ = upsert_entries(once, [DANCE], now=T0)

    first = once.by_key[DANCE["key"]]
    second = twice.by_key[DANCE["key"]]
    assert first.created_at == T0
    assert first.updated_at > first.created_at
    assert second.updated_at > first.updated_at


def test_upsert_is_deterministic():
    a, ids_a = upsert_entries(MemoryState(), [DANCE, WEATHER], now=T0)
    b, ids_b = upsert_entries(MemoryState(), [DANCE, WEATHER], now=T0)
    assert ids_a == ids_b
    assert state_to_json(a) == state_to_json(b)


def test_upsert_rejects_empty_payload():
    with pytest.raises(EmptyPayload):
        upsert_entries(MemoryState(), [])


@pytest.mark.parametrize(
    "draft",
    [
        {**DANCE, "key": "   "},
        {**DANCE, "memory_type": "ShortTermMemory"},
        {key: value for key, value in DANCE.items() if key != "tags"},
        "not an object",
    ],
)
def test_upsert_rejects_invalid_drafts_without_writing(draft):
    state, _ = upsert_entries(MemoryState(), [WEATHER], now=T0)
    with pytest.raises(InvalidDraft):
        upsert_entries(state, [DANCE, draft], now=T0)
    assert len(state) == 1
    assert state.revision == 1


def test_buffer_is_fifo_and_drain_empties_it():
    buffer = BufferState()
    first = BufferItem("waiting for the date", "When did you go?", 1, T0)
    second = BufferItem("answer pending", "Which park?", 2, T0)

    buffer = buffer_push(buffer_push(buffer, first), second)
    items, drained = buffer_drain(buffer)

    assert items == [first, second]
    assert len(drained) == 0
    assert len(buffer) == 2


@pytest.mark.parametrize(
    "item",
    [
        BufferItem("", "text", 1, T0),
        BufferItem("reason", "  ", 1, T0),
        BufferItem("reason", "text", 0, T0),
        BufferItem("reason", "text", True, T0),
    ],
)
def test_buffer_push_rejects_invalid_items(item):
    with pytest.raises(InvalidItem):
        buffer_push(BufferState(), item)


def test_embedder_is_normalized_and_stable():
    embedder = HashedTrigramEmbedder(64)
    vector = embedder("Dance studio")
    assert vector.shape == (64,)
    assert np.isclose(np.linalg.norm(vector), 1.0)
    assert np.array_equal(vector, HashedTrigramEmbedder(64)("dance   STUDIO"))
    assert not np.any(embedder(""))


def test_embedder_rejects_zero_dimension():
    with pytest.raises(ValueError):
        HashedTrigramEmbedder(0)


def test_cosine_of_zero_vector_is_zero():
    assert cosine(np.zeros(4), np.ones(4)) == 0.0


def test_search_ranks_related_entry_first():
    state, _ = upsert_entries(MemoryState(), [WEATHER, DANCE], now=T0)
    hits = search(state, "Jon's dancing or business plans", 2)
    assert [hit.entry.key for hit in hits] == [DANCE["key"], WEATHER["key"]]
    assert hits[0].score > hits[1].score


def test_search_breaks_ties_by_creation_order():
    state, _ = upsert_entries(MemoryState(), [WEATHER, DANCE], now=T0)
    hits = search(state, "", 2)
    assert [hit.score for hit in hits] == [0.0, 0.0]
    assert [hit.entry.key for hit in hits] == [WEATHER["key"], DANCE["key"]]


def test_search_on_empty_store_and_small_store():
    assert search(MemoryState(), "anything", 3) == []
    state, _ = upsert_entries(MemoryState(), [DANCE], now=T0)
    assert len(search(state, "dance", 5)) == 1


def test_search_rejects_non_positive_k():
    with pytest.raises(ValueError):
        search(MemoryState(), "dance", 0)




def test_embed_places_near_duplicates_closer():
    anchor = embed("dance studio plan")
    assert np.array_equal(anchor, embed("dance studio plan"))
    assert cosine(anchor, embed("dance studio plans")) > cosine(anchor, embed("tax filing deadline"))


VOCABULARY = ["dance", "studio", "trip", "rockies", "prius", "hiking", "plan", "tax"]


class BagOfWords:
    dim = len(VOCABULARY)

    def __call__(self, text):
        words = text.lower().split()
        return np.array([words.count(word) for word in VOCABULARY], dtype=np.float64)


def _full_sort(state, query, k, embedder):
    query_vector = embedder(query)
    ranked = sorted(
        enumerate(state.entries),
        key=lambda item: (-cosine(query_vector, embedder(entry_text(item[1]))), item[0]),
    )
    return [entry.entry_id for _, entry in ranked[:k]]


@pytest.mark.parametrize("embedder", [HashedTrigramEmbedder(), BagOfWords()], ids=["trigram", "bag-of-words"])
def test_search_matches_full_sort(embedder):
    rng = random.Random(200)
    for _ in range(200):
        state = random_store(rng, VOCABULARY, rng.randint(0, 100), T0)
        query = " ".join(rng.choice(VOCABULARY) for _ in range(rng.randrange(4)))
        k = rng.randint(1, 12)

        hits = search(state, query, k, embedder=embedder)

        assert [hit.entry.entry_id for hit in hits] == _full_sort(state, query, k, embedder)
        assert all(a.score >= b.score for a, b in zip(hits, hits[1:]))
def test_store_roundtrip_through_file(tmp_path):
    state, _ = upsert_entries(MemoryState(), [DANCE, WEATHER], now=T0)
    path = tmp_path / "store.json"
    save_store(state, path)
    restored = load_store(path)
    assert restored == state
    assert path.read_text(encoding="utf-8") == state_to_json(state)


@pytest.mark.parametrize(
    "text",
    [
        "{",
        '{"entries": []}',
        '{"revision": -1, "entries": []}',
        '{"revision": 1, "entries": [{"entry_id": "x"}]}',
    ],
)
def test_corrupt_store_is_reported(text):
    with pytest.raises(CorruptStore):
        state_from_json(text)


def test_duplicate_keys_in_store_are_corrupt():
    state, _ = upsert_entries(MemoryState(), [DANCE], now=T0)
    entry = state.entries[0].to_dict()
    with pytest.raises(CorruptStore):
        state_from_json(json.dumps({"revision": 1, "entries": [entry, entry]}))


def test_missing_store_file_is_corrupt(tmp_path):
    with pytest.raises(CorruptStore):
        load_store(tmp_path / "absent.json")
