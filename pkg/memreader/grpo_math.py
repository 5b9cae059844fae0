"""
場所: memreader/grpo_math.py
内容: グループ相対アドバンテージ、トークン単位の重要度比、クリップ付き代理目的関数、k3 KL 推定、SFT の負の対数尤度。
目的: 外部で取得した logprob ダンプから GRPO の各量を 64bit 浮動小数点で検算・報告する (学習はしない)。
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
import numpy.typing as npt

from memreader.config import GrpoConfig
from memreader.errors import EmptySequence, GroupTooSmall, LengthMismatch, PositiveLogprob

FloatArray = npt.NDArray[np.float64]


def _as_logprobs(values: Sequence[float] | FloatArray, name: str) -> FloatArray:
    array = np.asarray(values, dtype=np.float64)
    if array.ndim != 1:
        raise LengthMismatch(f"{name} must be a flat list of numbers")
    if array.size == 0:
        raise EmptySequence(f"{name} is empty")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite values")
    if np.any(array > 0.0):
        raise PositiveLogprob(f"{name} contains a positive log-probability")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class TokenSequence:
    logprob_new: FloatArray
    logprob_old: FloatArray
    logprob_ref: FloatArray
    reward: float

    def __post_init__(self) -> None:
        arrays = {
            name: _as_logprobs(getattr(self, name), name) for name in ("logprob_new", "logprob_old", "logprob_ref")
        }
        lengths = {array.size for array in arrays.values()}
        if len(lengths) != 1:
            sizes = ", ".join(f"{name}={array.size}" for name, array in arrays.items())
            raise LengthMismatch(f"logprob lists differ in length ({sizes})")
        for name, array in arrays.items():
            object.__setattr__(self, name, array)
        object.__setattr__(self, "reward", float(self.reward))

    @property
    def length(self) -> int:
        return int(self.logprob_new.size)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TokenSequence:
        return cls(
            logprob_new=data["logprob_new"],
            logprob_old=data["logprob_old"],
            logprob_ref=data["logprob_ref"],
            reward=data["reward"],
        )


@dataclass(frozen=True)
class Group:
    sequences: tuple[TokenSequence, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "sequences", tuple(self.sequences))
        if len(self.sequences) < 2:
            raise GroupTooSmall(f"a group needs at least 2 sequences, got {len(self.sequences)}")

    @property
    def rewards(self) -> FloatArray:
        return np.array([seq.reward for seq in self.sequences], dtype=np.float64)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Group:
        return cls(tuple(TokenSequence.from_dict(item) for item in data["sequences"]))


@dataclass(frozen=True)
class GroupReport:
    rewards: list[float]
    advantages: list[float]
    kl: list[float]
    objective: float
    clip_fraction: float
    mean_nll: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "rewards": self.rewards,
            "advantages": self.advantages,
            "kl": self.kl,
            "objective": self.objective,
            "clip_fraction": self.clip_fraction,
            "mean_nll": self.mean_nll,
        }


def group_advantages(rewards: Sequence[float] | FloatArray, epsilon: float = 1e-8) -> FloatArray:
    values = np.asarray(rewards, dtype=np.float64)
    if values.size < 2:
        raise GroupTooSmall(f"group-relative advantages need at least 2 rewards, got {values.size}")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    # 母標準偏差 (ddof=0)
    return (values - values.mean()) / (values.std() + epsilon)


def importance_ratios(seq: TokenSequence) -> FloatArray:
    return np.exp(seq.logprob_new - seq.logprob_old)


def kl_penalty(seq: TokenSequence) -> float:
    """k3 推定量 exp(d) - d - 1 (d = ref - new) のトークン平均。常に 0 以上."""
    log_ratio = seq.logprob_ref - seq.logprob_new
    per_token = np.maximum(np.expm1(log_ratio) - log_ratio, 0.0)
    return float(per_token.mean())


def surrogate_terms(seq: TokenSequence, advantage: float, epsilon_clip: float) -> FloatArray:
    ratios = importance_ratios(seq)
    clipped = np.clip(ratios, 1.0 - epsilon_clip, 1.0 + epsilon_clip)
    return np.minimum(ratios * advantage, clipped * advantage)


def clipped_objective(
    group: Group,
    advantages: Sequence[float] | FloatArray,
    config: GrpoConfig | None = None,
) -> float:
    config = config or GrpoConfig()
    advantages = np.asarray(advantages, dtype=np.float64)
    if advantages.size != len(group.sequences):
        raise LengthMismatch(f"{advantages.size} advantages for a group of {len(group.sequences)}")
    surrogate = np.mean(
        [surrogate_terms(seq, float(adv), config.epsilon_clip).mean() for seq, adv in zip(group.sequences, advantages)]
    )
    kl = np.mean([kl_penalty(seq) for seq in group.sequences])
    return float(surrogate - config.beta * kl)


def sft_nll(target_logprobs: Sequence[float] | FloatArray) -> float:
    values = _as_logprobs(target_logprobs, "target_logprobs")
    # -0.0 を 0.0 に揃える
    return float(-values.sum()) + 0.0


def evaluate_group(group: Group, config: GrpoConfig | None = None) -> GroupReport:
    config = config or GrpoConfig()
    advantages = group_advantages(group.rewards, config.epsilon)
    ratios = np.concatenate([importance_ratios(seq) for seq in group.sequences])
    outside = (ratios < 1.0 - config.epsilon_clip) | (ratios > 1.0 + config.epsilon_clip)
    return GroupReport(
        rewards=group.rewards.tolist(),
        advantages=advantages.tolist(),
        kl=[kl_penalty(seq) for seq in group.sequences],
        objective=clipped_objective(group, advantages, config),
        clip_fraction=float(outside.mean()),
        mean_nll=float(np.mean([sft_nll(seq.logprob_new) for seq in group.sequences])),
    )
