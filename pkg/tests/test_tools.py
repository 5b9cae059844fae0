import json
from types import SimpleNamespace

import pytest

from case_study import CASE_STUDY_SCRIPT
from memreader.config import JUDGE_ENDPOINT_ENV, POLICY_ENDPOINT_ENV
from tools.episode_runner import EpisodeRunnerTool
from tools.trajectory_scorer import TrajectoryScorerTool

GOLD = "\n".join(
    [
        json.dumps({"turn": 1, "gold_actions": ["search_memory", "add_memory"]}),
        json.dumps({"turn": 2, "gold_actions": ["search_memory", "buffer_memory"]}),
        json.dumps({"turn": 3, "gold_actions": ["search_memory", "ignore_memory"]}),
    ]
)


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for name in (POLICY_ENDPOINT_ENV, JUDGE_ENDPOINT_ENV, "MEMREADER_ENDPOINT_TIMEOUT"):
        monkeypatch.delenv(name, raising=False)


def _fake(tool_class):
    fake = SimpleNamespace(
        runtime=SimpleNamespace(credentials={}),
        create_text_message=lambda text: ("text", text),
        create_json_message=lambda document: ("json", document),
    )
    if tool_class is EpisodeRunnerTool:
        fake._binding = lambda parameters, endpoint: EpisodeRunnerTool._binding(fake, parameters, endpoint)
    return fake


def _invoke(tool_class, parameters):
    return list(tool_class._invoke(_fake(tool_class), parameters))


def test_episode_runner_replays_a_script(episode_path):
    messages = _invoke(
        EpisodeRunnerTool,
        {
            "episode_json": episode_path.read_text(encoding="utf-8"),
            "policy": "scripted",
            "script_json": json.dumps(CASE_STUDY_SCRIPT),
        },
    )

    (kind, result), (_, summary) = messages
    assert kind == "json"
    assert [record["terminal"] for record in result["trajectories"]] == [
        "add_memory",
        "buffer_memory",
        "ignore_memory",
    ]
    assert [entry["key"] for entry in result["store"]["entries"]] == ["Dance studio startup plan"]
    assert result["error"] is None
    assert summary.startswith("turn 1: add_memory")


@pytest.mark.parametrize(
    "parameters, message",
    [
        ({}, "episode_json parameter is required"),
        ({"episode_json": "[]", "policy": "scripted", "script_json": "{"}, "script_json must be valid JSON"),
        ({"episode_json": "[]", "policy": "scripted", "script_json": '{"a": 1}'}, "Failed to run episode"),
    ],
)
def test_episode_runner_reports_bad_parameters(parameters, message):
    [(kind, text)] = _invoke(EpisodeRunnerTool, parameters)
    assert kind == "text"
    assert text.startswith(message)


def test_scorer_scores_runner_output(episode_path):
    [(_, result), _] = _invoke(
        EpisodeRunnerTool,
        {
            "episode_json": episode_path.read_text(encoding="utf-8"),
            "policy": "scripted",
            "script_json": json.dumps(CASE_STUDY_SCRIPT),
        },
    )
    trajectories = "\n".join(json.dumps(record) for record in result["trajectories"])

    (kind, report), (_, summary) = _invoke(
        TrajectoryScorerTool, {"trajectories_jsonl": trajectories, "gold_jsonl": GOLD}
    )

    assert kind == "json"
    assert len(report["per_turn"]) == 3
    assert summary.startswith("episode_return=")
