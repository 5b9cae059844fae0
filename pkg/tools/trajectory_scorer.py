"""
場所: tools/trajectory_scorer.py
内容: トラジェクトリ記録 (JSON Lines) を正解アクション列と照合し、4 成分の報酬内訳とエピソードリターンを返すツール。
目的: 方策の判断 (add / buffer / search / ignore) を学習時と同じ重みでワークフロー上から採点できるようにする。
"""

from __future__ import annotations

from collections.abc import Generator
from typing import Any

from dify_plugin import Tool
from dify_plugin.entities.tool import ToolInvokeMessage

from memreader.commands import build_judge, gold_from_text, release, score_records
from memreader.decision_engine import trajectory_records_from_text
from memreader.errors import MemReaderError

from provider.utils import endpoint_client_options, resolve_settings


class TrajectoryScorerTool(Tool):
    def _invoke(self, tool_parameters: dict[str, Any]) -> Generator[ToolInvokeMessage, None, None]:
        trajectories_jsonl = tool_parameters.get("trajectories_jsonl")
        gold_jsonl = tool_parameters.get("gold_jsonl")
        if not trajectories_jsonl or not gold_jsonl:
            yield self.create_text_message("trajectories_jsonl and gold_jsonl parameters are required")
            return

        try:
            settings = resolve_settings(self, tool_parameters)
            records = trajectory_records_from_text(trajectories_jsonl, "trajectories_jsonl")
            gold = gold_from_text(gold_jsonl)
            judge = build_judge(settings, **endpoint_client_options(self, tool_parameters))
            try:
                report = score_records(
                    records,
                    gold,
                    settings.weights,
                    judge,
                    seed=int(tool_parameters.get("seed") or 0),
                    workers=settings.workers,
                )
            finally:
                release(judge)
        except (MemReaderError, ValueError) as exc:
            yield self.create_text_message(f"Failed to score trajectories: {exc}")
            return

        yield self.create_json_message(report)
        yield self.create_text_message(
            f"episode_return={report['episode_return']:.6f} over {len(report['per_turn'])} turn(s)"
        )
