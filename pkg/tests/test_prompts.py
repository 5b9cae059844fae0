import json

import pytest

from case_study import DANCE_PAYLOAD
from memreader.errors import InvalidDraft
from memreader.prompts import parse_extraction_output, render_extraction_prompt, render_system_prompt


def test_system_prompt_fills_state_once():
    prompt = render_system_prompt("1. mentions {session_time}", "2023-01-20T16:04:00+00:00")
    assert "- Buffer: 1. mentions {session_time}" in prompt
    assert prompt.rstrip().endswith("- Session Time: 2023-01-20T16:04:00+00:00")
    assert '"memory_list"' in prompt


def test_extraction_prompt_embeds_conversation():
    prompt = render_extraction_prompt("Jon: I lost my job.")
    assert "Conversation:\nJon: I lost my job.\n" in prompt
    assert "${conversation}" not in prompt


def test_system_prompt_wording():
    prompt = render_system_prompt("(empty)", "2023-10-15T15:00:00+00:00")
    assert prompt.startswith(
        "You are a memory extraction expert. Analyze conversations and decide whether to extract memories.\n\n## Task\n"
    )
    assert "- Only buffer when search cannot resolve AND user hasn't finished speaking\n" in prompt
    assert "- Do NOT buffer out of laziness\n" in prompt
    assert '      "memory_type": "LongTermMemory/UserMemory",\n' in prompt
    assert prompt.endswith("## Current State\n- Buffer: (empty)\n- Session Time: 2023-10-15T15:00:00+00:00")


def test_extraction_prompt_wording():
    prompt = render_extraction_prompt("user: hi")
    assert prompt.startswith(
        "You are a memory extraction expert.\nYour task is to extract memories from the perspective of user,\n"
    )
    assert '  "memory list": [\n' in prompt
    assert "- Keep `memory_type` in English.\n\nAlways respond in the same language as the conversation.\n" in prompt
    assert prompt.endswith("Conversation:\nuser: hi\n\nYour Output:")


@pytest.mark.parametrize("fenced", [False, True])
def test_parse_extraction_output(fenced):
    answer = json.dumps({"memory list": DANCE_PAYLOAD["memory_list"], "summary": "Jon plans a studio."})
    if fenced:
        answer = f"```json\n{answer}\n```"
    payload = parse_extraction_output(answer)
    assert payload.memory_list[0].key == "Dance studio startup plan"
    assert payload.summary == "Jon plans a studio."


@pytest.mark.parametrize(
    "answer",
    [
        "I think the user likes dancing.",
        json.dumps({"memory_list": [], "summary": "nothing"}),
        json.dumps({"memory_list": [{"key": "k", "memory_type": "Episodic", "value": "v", "tags": []}], "summary": "s"}),
    ],
)
def test_parse_extraction_output_rejects(answer):
    with pytest.raises(InvalidDraft):
        parse_extraction_output(answer)
