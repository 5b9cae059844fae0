"""
場所: memreader/config.py
内容: 設定ドキュメント (YAML) のスキーマと読み込み、エンドポイント設定の優先順位解決。
目的: 報酬重み・GRPO 定数・チェーン長・ヒューリスティック語彙・エンドポイントを 1 つの文書で管理する。

優先順位 (エンドポイントとタイムアウトのみ): フラグ / ツール引数 > 環境変数 > 設定ファイル > 既定値
"""

from __future__ import annotations

import logging
import os
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import yaml
from pydantic import AliasChoices, BaseModel, ConfigDict, Field, ValidationError, model_validator

from memreader.errors import ConfigError

logger = logging.getLogger(__name__)

POLICY_ENDPOINT_ENV = "MEMREADER_POLICY_ENDPOINT"
JUDGE_ENDPOINT_ENV = "MEMREADER_JUDGE_ENDPOINT"
ENDPOINT_TIMEOUT_ENV = "MEMREADER_ENDPOINT_TIMEOUT"

_STRICT = ConfigDict(extra="forbid", frozen=True)


class RewardWeights(BaseModel):
    """報酬 4 成分の係数と各成分内部の重み."""

    model_config = _STRICT

    lambda_fmt: float = Field(0.2, ge=0)
    lambda_align: float = Field(0.4, ge=0)
    lambda_judge: float = Field(0.3, ge=0)
    lambda_eff: float = Field(0.1, ge=0)

    w_turn: float = Field(0.25, ge=0)
    w_final: float = Field(0.5, ge=0)
    w_dist: float = Field(0.25, ge=0)

    eta_add: float = Field(0.2, ge=0)
    eta_search: float = Field(0.1, ge=0)

    alpha_cor: float = Field(0.4, ge=0)
    alpha_comp: float = Field(0.3, ge=0)
    alpha_hall: float = Field(0.3, ge=0)

    delta: float = Field(0.5, gt=0)
    # 文字数 (Unicode スカラー値) 単位の出力長上限
    l_max: int = Field(768, gt=0, validation_alias=AliasChoices("l_max", "L_max"))
    gamma: float = Field(1.0, gt=0, le=1)

    @model_validator(mode="after")
    def _check_mixture(self) -> RewardWeights:
        alpha_sum = self.alpha_cor + self.alpha_comp + self.alpha_hall
        if abs(alpha_sum - 1.0) > 1e-9:
            raise ValueError(f"alpha_cor + alpha_comp + alpha_hall must equal 1, got {alpha_sum}")
        w_sum = self.w_turn + self.w_final + self.w_dist
        if w_sum <= 0:
            raise ValueError("w_turn + w_final + w_dist must be positive")
        share = self.w_final / w_sum
        if not 0.4 <= share <= 0.6:
            raise ValueError(f"w_final must contribute 40-60% of the align weights, got {share:.3f}")
        return self


class GrpoConfig(BaseModel):
    model_config = _STRICT

    epsilon: float = Field(1e-8, gt=0)
    epsilon_clip: float = Field(0.2, gt=0, lt=1)
    beta: float = Field(0.01, ge=0)


class ChainConfig(BaseModel):
    model_config = _STRICT

    max_chain_len: int = Field(10, ge=1)


class HeuristicLexicons(BaseModel):
    """参照用ヒューリスティック方策の語彙。小文字で比較する."""

    model_config = _STRICT

    referring: tuple[str, ...] = ("he", "she", "it", "that thing", "that plan", "last time")
    small_talk: tuple[str, ...] = (
        "thanks",
        "thank you",
        "no problem",
        "cool",
        "hi",
        "hello",
        "hey",
        "bye",
        "good night",
        "have fun",
        "let me know",
        "sounds good",
        "you're welcome",
    )
    fact_markers: tuple[str, ...] = (
        "i'm",
        "i am",
        "i have",
        "i've",
        "i just",
        "i decided",
        "i will",
        "i'll",
        "i went",
        "i got",
        "my",
        "we went",
        "we have",
        "decided",
    )
    pending_detail: tuple[str, ...] = (
        "when",
        "where",
        "what time",
        "how long",
        "how much",
        "how many",
        "which",
    )


class EndpointSettings(BaseModel):
    model_config = _STRICT

    policy_endpoint: str | None = None
    judge_endpoint: str | None = None
    timeout: float = Field(30.0, gt=0)


class Settings(BaseModel):
    model_config = _STRICT

    weights: RewardWeights = RewardWeights()
    grpo: GrpoConfig = GrpoConfig()
    chain: ChainConfig = ChainConfig()
    lexicons: HeuristicLexicons = HeuristicLexicons()
    endpoints: EndpointSettings = EndpointSettings()

    search_k: int = Field(5, ge=1)
    max_steps: int = Field(16, ge=1)
    embedding_dim: int = Field(256, ge=1)
    think_max_chars: int = Field(2000, ge=1)
    workers: int = Field(4, ge=1)


def _describe(exc: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()
    )


def _read_document(path: str | os.PathLike[str]) -> Mapping[str, Any]:
    try:
        with open(path, encoding="utf-8") as handle:
            document = yaml.safe_load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"configuration {path} is not valid YAML: {exc}") from exc
    if document is None:
        return {}
    if not isinstance(document, Mapping):
        raise ConfigError(f"configuration {path} must be a mapping, got {type(document).__name__}")
    return document


def load_settings(path: str | os.PathLike[str] | None = None) -> Settings:
    if path is None:
        return Settings()
    try:
        settings = Settings.model_validate(dict(_read_document(path)))
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration {path}: {_describe(exc)}") from exc
    logger.info("configuration loaded from %s", Path(path))
    return settings


def load_weights(path: str | os.PathLike[str]) -> RewardWeights:
    """重みだけの文書、または weights セクションを含む設定文書から RewardWeights を読む."""
    return weights_from_document(_read_document(path), str(path))


def weights_from_document(document: Any, source: str = "<input>") -> RewardWeights:
    if not isinstance(document, Mapping):
        raise ConfigError(f"reward weights in {source} must be a mapping")
    section = document.get("weights", document)
    try:
        return RewardWeights.model_validate(dict(section))
    except (ValidationError, TypeError, ValueError) as exc:
        detail = _describe(exc) if isinstance(exc, ValidationError) else str(exc)
        raise ConfigError(f"invalid reward weights in {source}: {detail}") from exc


def resolve_endpoints(
    settings: Settings,
    *,
    policy_endpoint: str | None = None,
    judge_endpoint: str | None = None,
    timeout: float | None = None,
    environ: Mapping[str, str] | None = None,
) -> Settings:
    """フラグ > 環境変数 > 設定ファイルの順でエンドポイント設定を上書きした Settings を返す."""
    env = os.environ if environ is None else environ
    current = settings.endpoints

    env_timeout: float | None = None
    raw_timeout = env.get(ENDPOINT_TIMEOUT_ENV)
    if raw_timeout:
        try:
            env_timeout = float(raw_timeout)
        except ValueError as exc:
            raise ConfigError(f"{ENDPOINT_TIMEOUT_ENV} must be a number, got {raw_timeout!r}") from exc

    merged = {
        "policy_endpoint": policy_endpoint or env.get(POLICY_ENDPOINT_ENV) or current.policy_endpoint,
        "judge_endpoint": judge_endpoint or env.get(JUDGE_ENDPOINT_ENV) or current.judge_endpoint,
        "timeout": timeout if timeout is not None else (env_timeout if env_timeout is not None else current.timeout),
    }
    try:
        endpoints = EndpointSettings.model_validate(merged)
    except ValidationError as exc:
        raise ConfigError(f"invalid endpoint settings: {_describe(exc)}") from exc
    return settings.model_copy(update={"endpoints": endpoints})


def with_weights(settings: Settings, weights: RewardWeights | None) -> Settings:
    return settings if weights is None else settings.model_copy(update={"weights": weights})
