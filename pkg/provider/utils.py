"""
場所: provider/utils.py
内容: ツール引数とプロバイダー資格情報をマージして、memreader の Settings と boto3 クライアント引数を作る補助関数。
目的: 各ツールで「ツール引数 > プロバイダー設定 > 環境変数 > 既定値」の優先順位を同じ書き方で扱う。
"""

from __future__ import annotations

import json
from typing import Any, Optional

from memreader.config import Settings, resolve_endpoints, weights_from_document, with_weights
from memreader.errors import ConfigError


def resolve_aws_credentials(tool: Any, tool_parameters: dict[str, Any]) -> dict[str, Optional[str]]:
    """Merge provider-level credentials with tool parameters, preferring tool-specific inputs."""
    runtime_credentials = getattr(getattr(tool, "runtime", None), "credentials", {}) or {}

    return {
        "aws_access_key_id": tool_parameters.get("aws_access_key_id")
        or runtime_credentials.get("aws_access_key_id"),
        "aws_secret_access_key": tool_parameters.get("aws_secret_access_key")
        or runtime_credentials.get("aws_secret_access_key"),
        "aws_region": tool_parameters.get("aws_region") or runtime_credentials.get("aws_region") or "us-east-1",
    }


def build_boto3_client_kwargs(credentials: dict[str, Optional[str]]) -> dict[str, Any]:
    """Construct boto3 client kwargs from merged credentials."""
    kwargs: dict[str, Any] = {}
    if credentials.get("aws_region"):
        kwargs["region_name"] = credentials["aws_region"]
    if credentials.get("aws_access_key_id") and credentials.get("aws_secret_access_key"):
        kwargs["aws_access_key_id"] = credentials["aws_access_key_id"]
        kwargs["aws_secret_access_key"] = credentials["aws_secret_access_key"]
    return kwargs


def endpoint_client_options(tool: Any, tool_parameters: dict[str, Any]) -> dict[str, Any]:
    """EndpointClient に渡す追加引数 (lambda: / sagemaker: ロケーター用の boto3 設定)."""
    return {"client_kwargs": build_boto3_client_kwargs(resolve_aws_credentials(tool, tool_parameters))}


def _optional_float(value: Any, name: str) -> float | None:
    if value in (None, ""):
        return None
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a number, got {value!r}") from exc


def resolve_settings(tool: Any, tool_parameters: dict[str, Any]) -> Settings:
    """ツール引数 > プロバイダー資格情報 > 環境変数 > 既定値の順で Settings を組み立てる.

    weights_json が渡された場合は報酬重みを置き換える (weights セクション付きの文書も可)。
    """
    runtime_credentials = getattr(getattr(tool, "runtime", None), "credentials", {}) or {}
    settings = Settings()

    provider_level = resolve_endpoints(
        settings,
        policy_endpoint=runtime_credentials.get("policy_endpoint") or None,
        judge_endpoint=runtime_credentials.get("judge_endpoint") or None,
        timeout=_optional_float(runtime_credentials.get("endpoint_timeout"), "endpoint_timeout"),
    )
    settings = resolve_endpoints(
        provider_level,
        policy_endpoint=tool_parameters.get("policy_endpoint") or provider_level.endpoints.policy_endpoint,
        judge_endpoint=tool_parameters.get("judge_endpoint") or provider_level.endpoints.judge_endpoint,
        timeout=_optional_float(tool_parameters.get("endpoint_timeout"), "endpoint_timeout")
        or provider_level.endpoints.timeout,
    )

    weights_json = tool_parameters.get("weights_json")
    if weights_json:
        try:
            document = json.loads(weights_json)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"weights_json is not valid JSON: {exc}") from exc
        settings = with_weights(settings, weights_from_document(document, "weights_json"))
    return settings
