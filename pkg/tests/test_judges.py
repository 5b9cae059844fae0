import json

import httpx
import pytest

from memreader.endpoints import EndpointClient
from memreader.errors import JudgeUnreachable
from memreader.judges import ExternalJudge, JudgeRequest, JudgeScores, LexicalOverlapJudge, judge_many, payload_text

DIALOGUE = "Jon: I'm starting a dance studio because I love dancing."


def _payload(value):
    return {"memory_list": [{"key": "k", "memory_type": "UserMemory", "value": value, "tags": []}], "summary": "s"}


def test_payload_text_accepts_both_list_spellings():
    assert payload_text(_payload("a b")) == "a b"
    assert payload_text({"memory list": [{"value": "x"}, {"value": "y"}]}) == "x y"
    assert payload_text({"value": "single"}) == "single"
    assert payload_text(None) == ""


def test_identical_extraction_scores_perfectly():
    scores = LexicalOverlapJudge().score(_payload("Jon starting dance studio"), _payload("Jon starting dance studio"), "")
    assert scores == JudgeScores(1.0, 1.0, 1.0)


def test_partial_extraction():
    scores = LexicalOverlapJudge().score(
        _payload("Jon dance studio Paris"),
        _payload("Jon dance studio passion"),
        DIALOGUE,
    )
    assert scores.correctness == pytest.approx(0.75)
    assert scores.completeness == pytest.approx(0.75)
    assert scores.hallucination_avoidance == pytest.approx(0.75)


def test_empty_extraction():
    assert LexicalOverlapJudge().score(None, None, DIALOGUE) == JudgeScores(1.0, 1.0, 1.0)
    assert LexicalOverlapJudge().score(None, _payload("dance studio"), DIALOGUE) == JudgeScores(0.0, 0.0, 1.0)


def test_extraction_without_reference():
    scores = LexicalOverlapJudge().score(_payload("dance studio"), None, DIALOGUE)
    assert scores == JudgeScores(0.0, 1.0, 1.0)


@pytest.mark.parametrize("value", [-0.1, 1.5, float("nan"), "0.5"])
def test_scores_must_be_in_unit_interval(value):
    with pytest.raises(ValueError):
        JudgeScores(value, 0.5, 0.5)


def test_external_judge_round_trip():
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        return httpx.Response(200, json={"correctness": 0.9, "completeness": 0.8, "hallucination_avoidance": 1})

    judge = ExternalJudge(EndpointClient("http://judge.test", transport=httpx.MockTransport(handler)))
    assert judge.score(_payload("x"), None, "d") == JudgeScores(0.9, 0.8, 1.0)
    assert seen[0]["reference"] is None
    assert seen[0]["dialogue"] == "d"


@pytest.mark.parametrize(
    "response",
    [
        httpx.Response(500),
        httpx.Response(200, json={"correctness": 0.9}),
        httpx.Response(200, json={"correctness": 2, "completeness": 0, "hallucination_avoidance": 0}),
    ],
)
def test_external_judge_failures(response):
    judge = ExternalJudge(EndpointClient("http://judge.test", transport=httpx.MockTransport(lambda r: response)))
    with pytest.raises(JudgeUnreachable):
        judge.score(None, None, "")


def test_judge_many_keys_results_by_request_id():
    requests = [JudgeRequest(str(n), _payload(f"dance {n}"), _payload("dance"), "") for n in range(1, 6)]
    results = judge_many(reversed(requests), LexicalOverlapJudge(), workers=3)
    assert sorted(results) == ["1", "2", "3", "4", "5"]
    assert results["1"].completeness == 1.0


def test_judge_many_rejects_duplicate_ids():
    request = JudgeRequest("1", None, None, "")
    with pytest.raises(ValueError):
        judge_many([request, request], LexicalOverlapJudge())
    assert judge_many([], LexicalOverlapJudge()) == {}
