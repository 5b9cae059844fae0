"""
場所: tools/episode_runner.py
内容: 会話エピソード (ターンオブジェクトの JSON 配列) を方策で 1 ターンずつ処理し、トラジェクトリと最終ストアを返すツール。
目的: Dify 上でヒューリスティック・台本再生・外部モデルの各方策を同じ実行ループで試せるようにする。
"""

from __future__ import annotations

import json
from collections.abc import Generator
from typing import Any

from dify_plugin import Tool
from dify_plugin.entities.tool import ToolInvokeMessage

from memreader.commands import run_turns
from memreader.decision_engine import PolicyBinding, PolicyKind, episode_from_text, trajectory_to_record
from memreader.errors import MemReaderError
from memreader.memory_core import state_to_json

from provider.utils import endpoint_client_options, resolve_settings


class EpisodeRunnerTool(Tool):
    def _binding(self, tool_parameters: dict[str, Any], policy_endpoint: str | None) -> PolicyBinding:
        kind = PolicyKind(tool_parameters.get("policy") or PolicyKind.HEURISTIC)
        if kind is PolicyKind.SCRIPTED:
            script_json = tool_parameters.get("script_json")
            script = json.loads(script_json) if script_json else None
            if script is not None and not (isinstance(script, list) and all(isinstance(turn, list) for turn in script)):
                raise ValueError("script_json must be a list of output lists, one per turn")
            return PolicyBinding(kind, {"script": script})
        if kind is PolicyKind.EXTERNAL:
            return PolicyBinding(kind, {"endpoint": policy_endpoint})
        return PolicyBinding(kind)

    def _invoke(self, tool_parameters: dict[str, Any]) -> Generator[ToolInvokeMessage, None, None]:
        episode_json = tool_parameters.get("episode_json")
        if not episode_json:
            yield self.create_text_message("episode_json parameter is required")
            return

        try:
            settings = resolve_settings(self, tool_parameters)
            if tool_parameters.get("max_steps"):
                settings = settings.model_copy(update={"max_steps": int(tool_parameters["max_steps"])})
            binding = self._binding(tool_parameters, settings.endpoints.policy_endpoint)
            turns = episode_from_text(episode_json)
            outcome = run_turns(turns, binding, settings, **endpoint_client_options(self, tool_parameters))
        except json.JSONDecodeError as exc:
            yield self.create_text_message(f"script_json must be valid JSON: {exc}")
            return
        except (MemReaderError, ValueError) as exc:
            yield self.create_text_message(f"Failed to run episode: {exc}")
            return

        result = {
            "trajectories": [trajectory_to_record(record) for record in outcome.records],
            "store": json.loads(state_to_json(outcome.memory)),
            "run": outcome.info,
            "error": str(outcome.error) if outcome.error else None,
        }
        yield self.create_json_message(result)

        summary = ", ".join(
            f"turn {record.turn}: {record.trajectory.terminal_action or 'truncated'}" for record in outcome.records
        )
        yield self.create_text_message(summary if not outcome.error else f"{summary} (stopped: {outcome.error})")
