import json
import random
import re

import pytest

from generators import random_step
from memreader.errors import TraceParseError
from memreader.react_protocol import (
    TERMINAL_ACTIONS,
    Action,
    FormatReport,
    ParsedStep,
    TeacherStep,
    ToolCall,
    Violation,
    check_output,
    format_reward,
    memory_payload,
    parse_output,
    parse_teacher_trace,
    render_step,
    validate_payload,
)

ADD_ARGUMENTS = {
    "memory_list": [
        {
            "key": "Dance studio startup plan",
            "memory_type": "UserMemory",
            "value": "Jon is planning to start a dance studio.",
            "tags": ["business"],
        }
    ],
    "summary": "Extracted 1 memories.",
}


def _tool(name, arguments):
    return json.dumps({"name": name, "arguments": arguments})


def test_terminal_actions():
    assert TERMINAL_ACTIONS == {Action.ADD, Action.BUFFER, Action.IGNORE}
    assert not Action.SEARCH.is_terminal


def test_parse_well_formed_output():
    text = f"<think>\nrecall first\n</think>\n<tool_call>\n{_tool('search_memory', {'query': 'dance'})}\n</tool_call>"
    parsed = parse_output(text)
    assert parsed == ParsedStep(think="recall first", call=ToolCall(Action.SEARCH, {"query": "dance"}))


def test_render_then_parse_is_identity():
    step = ParsedStep(think="Jon's plan has lasting value.", call=ToolCall(Action.ADD, ADD_ARGUMENTS))
    assert parse_output(render_step(step)) == step
    assert format_reward(render_step(step)) == 1.0


@pytest.mark.parametrize(
    "step",
    [
        ParsedStep(" padded think ", ToolCall(Action.SEARCH, {"query": "<tool_call>x</think></tool_call>"})),
        ParsedStep("\nleading and trailing newline\n", ToolCall(Action.IGNORE, {"reason": "a > b < c"})),
        ParsedStep("", ToolCall(Action.BUFFER, {"reason": "empty think"})),
        ParsedStep("crlf\r\nline", ToolCall(Action.BUFFER, {"reason": "<think>"})),
    ],
)
def test_render_then_parse_keeps_edge_cases(step):
    assert parse_output(render_step(step)) == step


def test_render_then_parse_round_trips_random_steps():
    rng = random.Random(2024)
    for _ in range(1000):
        step = random_step(rng)
        rendered = render_step(step)
        assert parse_output(rendered) == step
        assert format_reward(rendered) == 1.0


@pytest.mark.parametrize("tag", ["<think>", "</think>", "<tool_call>", "</tool_call>"])
def test_render_rejects_protocol_tags_in_think(tag):
    with pytest.raises(ValueError, match="protocol tags"):
        render_step(ParsedStep(f"before {tag} after", ToolCall(Action.IGNORE, {"reason": "x"})))


def _tool_part(text, edit):
    split = text.index("<tool_call>")
    return text[:split] + edit(text[split:])


CORRUPTIONS = [
    (lambda text: text.replace("</think>", "", 1), (Violation.UNCLOSED_TAG,)),
    (lambda text: text.replace("}\n</tool_call>", "\n</tool_call>"), (Violation.UNPARSEABLE_ARGUMENTS,)),
    (lambda text: text + "\n" + text[text.index("<tool_call>") :], (Violation.MALFORMED_TOOL_BLOCK,)),
    (
        lambda text: _tool_part(text, lambda tool: re.sub(r'"name": "\w+"', '"name": "forget_memory"', tool, 1)),
        (Violation.UNKNOWN_ACTION,),
    ),
    (lambda text: text[text.index("<tool_call>") :], (Violation.MISSING_THINK,)),
    (lambda text: text[: text.index("<tool_call>")], (Violation.MISSING_TOOL_CALL,)),
]


def test_generated_corpus_scores_by_violation():
    rng = random.Random(50)
    valid = [render_step(random_step(rng)) for _ in range(50)]
    assert all(check_output(text).valid for text in valid)
    assert [format_reward(text) for text in valid] == [1.0] * 50

    corrupted = []
    for index, text in enumerate(valid):
        corrupt, expected = CORRUPTIONS[index % len(CORRUPTIONS)]
        corrupted.append((corrupt(text), expected))
    for _ in range(10):
        step = random_step(rng)
        emptied = ParsedStep(step.think, ToolCall(step.call.action, {}))
        corrupted.append((render_step(emptied), (Violation.INVALID_PAYLOAD,)))

    assert len(corrupted) >= 50
    for text, expected in corrupted:
        assert check_output(text).violations == expected
        assert format_reward(text) == 0.0


def test_arguments_may_be_a_json_string():
    text = f"<think>x</think><tool_call>{_tool('ignore_memory', json.dumps({'reason': 'small talk'}))}</tool_call>"
    parsed = parse_output(text)
    assert isinstance(parsed, ParsedStep)
    assert parsed.call.arguments == {"reason": "small talk"}


def test_memory_list_alias_with_space():
    call = ToolCall(Action.ADD, {"memory list": ADD_ARGUMENTS["memory_list"], "summary": "one"})
    assert len(memory_payload(call).memory_list) == 1


@pytest.mark.parametrize(
    ("text", "expected"),
    [
        ('<tool_call>{"name": "ignore_memory", "arguments": {"reason": "x"}}</tool_call>', Violation.MISSING_THINK),
        ("<think>only thinking</think>", Violation.MISSING_TOOL_CALL),
        ('<think>x<tool_call>{"name": "ignore_memory", "arguments": {}}</tool_call>', Violation.UNCLOSED_TAG),
        ("<think>x</think><tool_call>{not json}</tool_call>", Violation.UNPARSEABLE_ARGUMENTS),
        ('<think>x</think><tool_call>{"name": "forget_memory", "arguments": {}}</tool_call>', Violation.UNKNOWN_ACTION),
        ('<think>x</think><tool_call>{"arguments": {}}</tool_call>', Violation.MALFORMED_TOOL_BLOCK),
        ("<think>x</think><tool_call>  </tool_call>", Violation.MALFORMED_TOOL_BLOCK),
        (
            'preamble <think>x</think><tool_call>{"name": "ignore_memory", "arguments": {"reason": "x"}}</tool_call>',
            Violation.MALFORMED_TOOL_BLOCK,
        ),
        (
            '<think>a</think><think>b</think><tool_call>{"name": "ignore_memory", "arguments": {}}</tool_call>',
            Violation.UNCLOSED_TAG,
        ),
    ],
)
def test_structural_violations(text, expected):
    report = parse_output(text)
    assert isinstance(report, FormatReport)
    assert expected in report.violations
    assert format_reward(text) == 0.0


def test_all_violations_are_collected():
    report = parse_output("no tags at all")
    assert isinstance(report, FormatReport)
    assert set(report.violations) == {Violation.MISSING_THINK, Violation.MISSING_TOOL_CALL}


@pytest.mark.parametrize(
    "call",
    [
        ToolCall(Action.ADD, {"memory_list": [], "summary": "none"}),
        ToolCall(Action.ADD, {"memory_list": ADD_ARGUMENTS["memory_list"]}),
        ToolCall(Action.ADD, {**ADD_ARGUMENTS, "memory_list": [{"key": "k", "value": "v"}]}),
        ToolCall(Action.SEARCH, {"query": "  "}),
        ToolCall(Action.BUFFER, {}),
        ToolCall(Action.IGNORE, {"reason": 3}),
    ],
)
def test_payload_violations(call):
    assert validate_payload(call).violations == (Violation.INVALID_PAYLOAD,)
    assert check_output(render_step(ParsedStep("t", call))).violations == (Violation.INVALID_PAYLOAD,)


def test_parser_never_raises_on_garbage():
    rng = random.Random(7)
    alphabet = "<>/{}[]\":, thinkool_cal\n"
    for _ in range(300):
        text = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 60)))
        result = parse_output(text)
        assert isinstance(result, (ParsedStep, FormatReport))
    assert isinstance(parse_output(b"\xff\xfe<think>"), FormatReport)
    assert isinstance(parse_output(None), FormatReport)


def test_parse_teacher_trace():
    trace = "\n".join(
        [
            "Dialogue: Evan: my prius broke down",
            "Thought 1: It refers to something earlier.",
            "Action 1: search[Evan's car]",
            "Observation 1: nothing found",
            "Thought 2: wait for the answer",
            "and keep the question.",
            "Action 2: finish[buffer]",
        ]
    )
    steps = parse_teacher_trace(trace)
    assert [step.action_name for step in steps] == ["search", "finish"]
    assert steps[0].action_payload == "Evan's car"
    assert steps[0].observation == "nothing found"
    assert steps[1].thought == "wait for the answer\nand keep the question."
    assert steps[1].action_payload == "buffer"


def test_parse_teacher_trace_examples(teacher_traces_path):
    first, second = teacher_traces_path.read_text(encoding="utf-8").split("\n\n")

    (direct,) = parse_teacher_trace(first)
    assert direct == TeacherStep(
        thought=(
            "The user shared an important achievement, and the information is complete "
            "(event, time, data, emotion), so it can be extracted directly."
        ),
        action_name="finish",
        action_payload="add",
        observation="Ready to extract.",
    )

    search, finish = parse_teacher_trace(second)
    assert (search.action_name, search.action_payload) == ("search", "user's project plan")
    assert search.observation == (
        'Search Result: User previously mentioned a "New Product Plan" containing Option A, '
        "Option B (steady progress), and Option C."
    )
    assert (finish.action_name, finish.action_payload, finish.observation) == ("finish", "add", "")


@pytest.mark.parametrize(
    ("trace", "line"),
    [
        ("Thought 1: a\nAction 1: finish[search]", 2),
        ("Thought 1: a\nAction 1: remember[x]", 2),
        ("Thought 1: a\nAction 1: search[]", 2),
        ("Thought 1: a\nAction 1: finish[add]\nThought 3: b", 3),
        ("Thought 1: a\nThought 1: b", 2),
        ("Action 1: finish[add]\nThought 1: late", 2),
        ("Observation 1: x", 1),
        ("Thought 1: a", 1),
        ("Thought 1: a\nThought two: loose header", 2),
    ],
)
def test_teacher_trace_errors_carry_line_numbers(trace, line):
    with pytest.raises(TraceParseError) as excinfo:
        parse_teacher_trace(trace)
    assert excinfo.value.line_number == line


def test_teacher_trace_requires_steps():
    with pytest.raises(TraceParseError):
        parse_teacher_trace("Dialogue only\n")
