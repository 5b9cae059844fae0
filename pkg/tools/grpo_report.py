"""
場所: tools/grpo_report.py
内容: logprob ダンプ (1 行 1 グループの JSON Lines) から GRPO のアドバンテージ・KL・クリップ付き目的関数を計算するツール。
目的: 学習ジョブの外で取得した logprob を使い、目的関数の値をワークフロー上で検算できるようにする。
"""

from __future__ import annotations

from collections.abc import Generator
from typing import Any

from dify_plugin import Tool
from dify_plugin.entities.tool import ToolInvokeMessage
from pydantic import ValidationError

from memreader.commands import groups_from_text, grpo_report
from memreader.config import GrpoConfig
from memreader.errors import MemReaderError


class GrpoReportTool(Tool):
    def _config(self, tool_parameters: dict[str, Any]) -> GrpoConfig:
        overrides = {
            name: float(tool_parameters[name])
            for name in ("epsilon_clip", "beta")
            if tool_parameters.get(name) not in (None, "")
        }
        return GrpoConfig(**overrides)

    def _invoke(self, tool_parameters: dict[str, Any]) -> Generator[ToolInvokeMessage, None, None]:
        dump_jsonl = tool_parameters.get("dump_jsonl")
        if not dump_jsonl:
            yield self.create_text_message("dump_jsonl parameter is required")
            return

        try:
            config = self._config(tool_parameters)
        except (ValidationError, ValueError) as exc:
            yield self.create_text_message(f"Invalid GRPO settings: {exc}")
            return

        try:
            report = grpo_report(groups_from_text(dump_jsonl), config, workers=1)
        except MemReaderError as exc:
            yield self.create_text_message(f"Failed to evaluate groups: {exc}")
            return

        yield self.create_json_message(report)
        yield self.create_text_message(
            f"{len(report['groups'])} group(s), mean objective {report['mean_objective']:.6f}, "
            f"mean KL {report['mean_kl']:.6f}"
        )
