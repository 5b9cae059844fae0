"""
場所: tools/memory_search.py
内容: 永続化されたメモリーストア (JSON 文書) をクエリで検索し、スコア順の上位 k 件を返すツール。
目的: Dify のワークフローから、エージェントが書いたメモリーを search_memory と同じ順位付けで参照できるようにする。
"""

from __future__ import annotations

from collections.abc import Generator
from typing import Any

from dify_plugin import Tool
from dify_plugin.entities.tool import ToolInvokeMessage

from memreader.config import Settings
from memreader.decision_engine import render_observation
from memreader.errors import MemReaderError
from memreader.memory_core import HashedTrigramEmbedder, search, state_from_json


class MemorySearchTool(Tool):
    def _invoke(self, tool_parameters: dict[str, Any]) -> Generator[ToolInvokeMessage, None, None]:
        store_json = tool_parameters.get("store_json")
        query = (tool_parameters.get("query") or "").strip()
        if not store_json:
            yield self.create_text_message("store_json parameter is required")
            return
        if not query:
            yield self.create_text_message("query parameter is required")
            return

        settings = Settings()
        try:
            k = int(tool_parameters.get("k") or settings.search_k)
        except (TypeError, ValueError):
            yield self.create_text_message("k must be an integer")
            return
        if k < 1:
            yield self.create_text_message(f"k must be >= 1, got {k}")
            return

        try:
            state = state_from_json(store_json)
            hits = search(state, query, k, embedder=HashedTrigramEmbedder(settings.embedding_dim))
        except MemReaderError as exc:
            yield self.create_text_message(f"Failed to search store: {exc}")
            return

        results = [
            {
                "rank": rank,
                "key": hit.entry.key,
                "value": hit.entry.value,
                "memory_type": str(hit.entry.memory_type),
                "tags": list(hit.entry.tags),
                "score": hit.score,
            }
            for rank, hit in enumerate(hits, start=1)
        ]
        yield self.create_json_message({"query": query, "k": k, "results": results})
        yield self.create_text_message(render_observation(hits))
