"""
場所: tools/format_checker.py
内容: モデル出力 1 件が think ブロック + tool_call ブロックの形式と引数スキーマを満たすかを検査するツール。
目的: 方策モデルの出力をワークフロー上で即座に検証し、フォーマット報酬 (0/1) と違反の種類を確認できるようにする。
"""

from __future__ import annotations

from collections.abc import Generator
from typing import Any

from dify_plugin import Tool
from dify_plugin.entities.tool import ToolInvokeMessage

from memreader.react_protocol import FormatReport, check_output, parse_output


class FormatCheckerTool(Tool):
    def _invoke(self, tool_parameters: dict[str, Any]) -> Generator[ToolInvokeMessage, None, None]:
        output = tool_parameters.get("output")
        if output is None:
            yield self.create_text_message("output parameter is required")
            return

        report = check_output(output)
        result: dict[str, Any] = {
            "valid": report.valid,
            "format_reward": 1.0 if report.valid else 0.0,
            "violations": [str(violation) for violation in report.violations],
        }
        parsed = parse_output(output)
        if not isinstance(parsed, FormatReport):
            result["action"] = str(parsed.call.action)
            result["arguments"] = dict(parsed.call.arguments)
            result["think_chars"] = len(parsed.think)

        yield self.create_json_message(result)
        if report.valid:
            yield self.create_text_message(f"valid ({result['action']})")
        else:
            yield self.create_text_message("invalid: " + ", ".join(result["violations"]))
