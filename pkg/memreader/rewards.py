"""
場所: memreader/rewards.py
内容: フォーマット・行動整合・ジャッジ・効率の 4 報酬成分、その重み付き合計、割引エピソードリターン。
目的: トラジェクトリ単位の報酬を設定可能な重みで再現性よく計算する。
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import asdict, dataclass
from typing import Any, NamedTuple

from memreader.config import RewardWeights
from memreader.decision_engine import Trajectory
from memreader.errors import EmptySequence
from memreader.judges import JudgeScores
from memreader.react_protocol import Action, check_output

ActionLabel = Action

# ステップ単位の一致表: 誤った add が最も重く、未解決の search が最も軽い
TURN_MATCH = 1.0
TURN_WRONG_ADD = -1.0
TURN_WRONG_SEARCH = -0.25
TURN_OTHER_MISMATCH = -0.5

FINAL_MATCH = 1.0
FINAL_WRONG_ADD = -1.5
FINAL_OTHER_MISMATCH = -0.75


@dataclass(frozen=True)
class RewardBreakdown:
    fmt: float
    align: float
    judge: float
    eff: float
    total: float
    judge_applied: bool

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class AlignTerms(NamedTuple):
    turn: float
    final: float
    dist: float


def turn_alignment(gold: Action, pred: Action) -> float:
    if gold is pred:
        return TURN_MATCH
    if pred is Action.ADD:
        return TURN_WRONG_ADD
    if pred is Action.SEARCH:
        return TURN_WRONG_SEARCH
    return TURN_OTHER_MISMATCH


def final_alignment(gold: Action, pred: Action) -> float:
    if gold is pred:
        return FINAL_MATCH
    if pred is Action.ADD:
        return FINAL_WRONG_ADD
    return FINAL_OTHER_MISMATCH


def distribution_penalty(pred: Sequence[Action], gold: Sequence[Action], weights: RewardWeights) -> float:
    """add と search の回数差だけを罰する (buffer / ignore の回数は使わない)."""
    add_gap = abs(gold.count(Action.ADD) - pred.count(Action.ADD))
    search_gap = abs(gold.count(Action.SEARCH) - pred.count(Action.SEARCH))
    return -weights.eta_add * add_gap - weights.eta_search * search_gap


def align_terms(pred: Sequence[Action], gold: Sequence[Action], weights: RewardWeights) -> AlignTerms:
    if not pred or not gold:
        raise EmptySequence("action_align_reward needs non-empty predicted and gold sequences")
    pred = [Action(label) for label in pred]
    gold = [Action(label) for label in gold]
    overlap = min(len(pred), len(gold))
    turn = sum(turn_alignment(gold[i], pred[i]) for i in range(overlap)) / overlap
    return AlignTerms(
        turn=turn,
        final=final_alignment(gold[-1], pred[-1]),
        dist=distribution_penalty(pred, gold, weights),
    )


def action_align_reward(pred: Sequence[Action], gold: Sequence[Action], weights: RewardWeights) -> float:
    terms = align_terms(pred, gold, weights)
    return weights.w_turn * terms.turn + weights.w_final * terms.final + weights.w_dist * terms.dist


def failed_turn_align(gold: Sequence[Action], weights: RewardWeights) -> float:
    """1 ステップも実行できなかったターンの整合報酬 (ステップ・最終判断とも最悪値)."""
    if not gold:
        raise EmptySequence("gold action sequence is empty")
    dist = distribution_penalty([], [Action(label) for label in gold], weights)
    return weights.w_turn * TURN_WRONG_ADD + weights.w_final * FINAL_WRONG_ADD + weights.w_dist * dist


def judge_reward(
    scores: JudgeScores,
    weights: RewardWeights,
    trajectory_has_add_payload: bool,
) -> tuple[float, bool]:
    if not trajectory_has_add_payload:
        return 0.0, False
    value = (
        weights.alpha_cor * scores.correctness
        + weights.alpha_comp * scores.completeness
        + weights.alpha_hall * scores.hallucination_avoidance
    )
    return value, True


def efficiency_reward(length: int, weights: RewardWeights) -> float:
    if length < 0:
        raise ValueError(f"output length must be >= 0, got {length}")
    if length <= weights.l_max:
        return 1.0 - length / weights.l_max
    return -weights.delta


def total_reward(
    fmt: float,
    align: float,
    judge: tuple[float, bool],
    eff: float,
    weights: RewardWeights,
) -> RewardBreakdown:
    judge_value, applied = judge
    total = (
        weights.lambda_fmt * fmt
        + weights.lambda_align * align
        + (weights.lambda_judge * judge_value if applied else 0.0)
        + weights.lambda_eff * eff
    )
    return RewardBreakdown(
        fmt=fmt,
        align=align,
        judge=judge_value if applied else 0.0,
        eff=eff,
        total=total,
        judge_applied=applied,
    )


def episode_return(rewards: Sequence[float], gamma: float) -> float:
    if not rewards:
        raise EmptySequence("episode_return needs at least one reward")
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    total = 0.0
    discount = 1.0
    for reward in rewards:
        total += discount * reward
        discount *= gamma
    return total


def measure_output_length(raw_output: str) -> int:
    # Python の str は Unicode スカラー値の列
    return len(raw_output)


def trajectory_format_reward(trajectory: Trajectory) -> float:
    """ターン内の全出力が形式を満たし、失敗も無いときだけ 1."""
    if trajectory.failure is not None or not trajectory.steps:
        return 0.0
    return 1.0 if all(check_output(output).valid for output in trajectory.outputs) else 0.0


def turn_output_length(trajectory: Trajectory) -> int:
    return sum(measure_output_length(output) for output in trajectory.outputs)
