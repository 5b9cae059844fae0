"""
場所: tools/sharegpt_converter.py
内容: トラジェクトリ記録を ShareGPT 形式へ変換し、buffer ターンを連結したうえで品質フィルタを掛けるツール。
目的: 方策の実行結果から SFT 用の学習サンプルと除外理由の集計をワークフロー上で作れるようにする。
"""

from __future__ import annotations

from collections.abc import Generator
from typing import Any

from dify_plugin import Tool
from dify_plugin.entities.tool import ToolInvokeMessage

from memreader.commands import convert_records, default_system_prompt
from memreader.config import ChainConfig, Settings
from memreader.decision_engine import trajectory_records_from_text
from memreader.errors import MemReaderError


class ShareGPTConverterTool(Tool):
    def _invoke(self, tool_parameters: dict[str, Any]) -> Generator[ToolInvokeMessage, None, None]:
        trajectories_jsonl = tool_parameters.get("trajectories_jsonl")
        if not trajectories_jsonl:
            yield self.create_text_message("trajectories_jsonl parameter is required")
            return

        settings = Settings()
        try:
            chain = ChainConfig(max_chain_len=int(tool_parameters.get("chain_len") or settings.chain.max_chain_len))
            think_max_chars = int(tool_parameters.get("think_max_chars") or settings.think_max_chars)
            records = trajectory_records_from_text(trajectories_jsonl, "trajectories_jsonl")
            system_prompt = tool_parameters.get("system_prompt") or default_system_prompt(records)
            outcome = convert_records(records, system_prompt, chain, think_max_chars)
        except (MemReaderError, ValueError) as exc:
            yield self.create_text_message(f"Failed to convert trajectories: {exc}")
            return

        yield self.create_json_message(
            {
                "samples": [sample.to_dict() for sample in outcome.samples],
                "report": outcome.report.to_dict(),
                "skipped_turns": outcome.skipped_turns,
            }
        )
        report = outcome.report
        yield self.create_text_message(f"kept {report.kept}, dropped {report.dropped} of {outcome.chained} sample(s)")
