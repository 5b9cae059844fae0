"""シード付きのランダムなステップ・トラジェクトリ・ストアの生成器."""

import random
from datetime import datetime

from memreader.decision_engine import Step, Trajectory
from memreader.memory_core import MemoryState, upsert_entries
from memreader.react_protocol import PROTOCOL_TAGS, Action, ParsedStep, ToolCall, render_step

ACTIONS = tuple(Action)
TERMINALS = tuple(action for action in Action if action.is_terminal)
_LETTERS = "abcdefghijklmnopqrstuvwxyzABCXYZ"
_EXTRA = ' 0123456789\n\t<>/{}[]"\\:,éü記憶💃'


def random_text(rng: random.Random, max_length: int = 40) -> str:
    """先頭は英字 (空白だけの文字列にしない)。プロトコルのタグは含まない."""
    while True:
        tail = "".join(rng.choice(_LETTERS + _EXTRA) for _ in range(rng.randrange(max_length)))
        text = rng.choice(_LETTERS) + tail
        if not any(tag in text for tag in PROTOCOL_TAGS):
            return text


def random_draft(rng: random.Random) -> dict:
    return {
        "key": random_text(rng, 12),
        "memory_type": rng.choice(["LongTermMemory", "UserMemory"]),
        "value": random_text(rng),
        "tags": [random_text(rng, 8) for _ in range(rng.randrange(4))],
    }


def random_call(rng: random.Random, action: Action | None = None) -> ToolCall:
    action = action or rng.choice(ACTIONS)
    if action is Action.ADD:
        drafts = [random_draft(rng) for _ in range(rng.randint(1, 3))]
        arguments = {"memory_list": drafts, "summary": f"Extracted {len(drafts)} memories."}
    elif action is Action.SEARCH:
        arguments = {"query": random_text(rng)}
    else:
        arguments = {"reason": random_text(rng)}
    return ToolCall(action=action, arguments=arguments)


def random_step(rng: random.Random, action: Action | None = None) -> ParsedStep:
    return ParsedStep(think=random_text(rng, 120), call=random_call(rng, action))


def random_actions(rng: random.Random, max_searches: int = 3) -> list[Action]:
    """0 回以上の search の後に終端アクション 1 つ."""
    return [Action.SEARCH] * rng.randint(0, max_searches) + [rng.choice(TERMINALS)]


def random_trajectory(rng: random.Random) -> Trajectory:
    steps = []
    for action in random_actions(rng):
        parsed = random_step(rng, action)
        steps.append(Step(parsed.think, parsed.call, random_text(rng), render_step(parsed)))
    return Trajectory(steps=tuple(steps), terminal_action=steps[-1].call.action)


def random_store(rng: random.Random, vocabulary: list[str], size: int, now: datetime) -> MemoryState:
    """キーは一意。値とタグは小さな語彙から作るので同点のスコアが頻繁に出る."""
    if size == 0:
        return MemoryState()
    drafts = [
        {
            "key": f"entry {index}",
            "memory_type": "UserMemory",
            "value": " ".join(rng.choice(vocabulary) for _ in range(rng.randint(1, 4))),
            "tags": [rng.choice(vocabulary) for _ in range(rng.randrange(3))],
        }
        for index in range(size)
    ]
    state, _ = upsert_entries(MemoryState(), drafts, now=now)
    return state
