"""
場所: memreader/endpoints.py
内容: 外部方策・外部ジャッジへ JSON を 1 件送って JSON を 1 件受け取るクライアント。
目的: HTTP / AWS Lambda / SageMaker エンドポイントを同じ呼び出し方で扱えるようにする。

ロケーター形式:
    http://... / https://...   HTTP POST (httpx)
    lambda:<function-name>     Lambda 同期呼び出し (boto3)
    sagemaker:<endpoint-name>  SageMaker runtime invoke_endpoint (boto3)
"""

from __future__ import annotations

import json
import logging
import threading
from collections.abc import Mapping
from typing import Any, NamedTuple

import boto3
import httpx
from botocore.config import Config as BotoConfig
from botocore.exceptions import BotoCoreError, ClientError

from memreader.errors import ConfigError, EndpointError

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0


class Locator(NamedTuple):
    scheme: str
    target: str


def parse_locator(locator: str) -> Locator:
    locator = (locator or "").strip()
    if locator.startswith(("http://", "https://")):
        return Locator("http", locator)
    for scheme in ("lambda", "sagemaker"):
        prefix = f"{scheme}:"
        if locator.startswith(prefix):
            target = locator[len(prefix) :].strip()
            if not target:
                raise ConfigError(f"endpoint locator {locator!r} names no {scheme} target")
            return Locator(scheme, target)
    raise ConfigError(f"unsupported endpoint locator {locator!r} (expected http(s)://, lambda: or sagemaker:)")


def _decode_object(raw: bytes | str, source: str) -> dict[str, Any]:
    text = raw.decode("utf-8", errors="replace") if isinstance(raw, bytes) else raw
    try:
        decoded = json.loads(text)
    except json.JSONDecodeError as exc:
        raise EndpointError(f"{source} returned a non-JSON body: {exc}") from exc
    if not isinstance(decoded, dict):
        raise EndpointError(f"{source} returned {type(decoded).__name__}, expected an object")
    return decoded


class EndpointClient:
    """1 リクエスト 1 レスポンスのエンドポイントクライアント。下位クライアントの生成はロックで 1 回に限る."""

    def __init__(
        self,
        locator: str,
        timeout: float = DEFAULT_TIMEOUT,
        *,
        transport: httpx.BaseTransport | None = None,
        boto_client: Any | None = None,
        client_kwargs: Mapping[str, Any] | None = None,
    ) -> None:
        if timeout <= 0:
            raise ConfigError(f"endpoint timeout must be positive, got {timeout}")
        self.locator = parse_locator(locator)
        self.timeout = timeout
        self._transport = transport
        self._http: httpx.Client | None = None
        self._boto_client = boto_client
        self._client_kwargs = dict(client_kwargs or {})
        self._lock = threading.Lock()

    def __enter__(self) -> EndpointClient:
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    def close(self) -> None:
        if self._http is not None:
            self._http.close()
            self._http = None

    def _ensure_boto_client(self, service: str) -> Any:
        with self._lock:
            if self._boto_client is None:
                config = BotoConfig(
                    connect_timeout=self.timeout,
                    read_timeout=self.timeout,
                    retries={"max_attempts": 1},
                )
                self._boto_client = boto3.client(service, config=config, **self._client_kwargs)
        return self._boto_client

    def post(self, payload: Mapping[str, Any]) -> dict[str, Any]:
        body = json.dumps(dict(payload), ensure_ascii=False)
        scheme, target = self.locator
        try:
            if scheme == "http":
                return self._post_http(target, body)
            if scheme == "lambda":
                return self._invoke_lambda(target, body)
            return self._invoke_sagemaker(target, body)
        except EndpointError:
            logger.error("endpoint %s:%s failed", scheme, target, exc_info=True)
            raise

    def _post_http(self, url: str, body: str) -> dict[str, Any]:
        with self._lock:
            if self._http is None:
                self._http = httpx.Client(timeout=self.timeout, transport=self._transport)
        try:
            response = self._http.post(url, content=body.encode("utf-8"), headers={"Content-Type": "application/json"})
            response.raise_for_status()
        except httpx.TimeoutException as exc:
            raise EndpointError(f"{url} timed out after {self.timeout}s") from exc
        except httpx.HTTPStatusError as exc:
            raise EndpointError(f"{url} answered HTTP {exc.response.status_code}") from exc
        except httpx.HTTPError as exc:
            raise EndpointError(f"{url} request failed: {exc}") from exc
        return _decode_object(response.content, url)

    def _invoke_lambda(self, function_name: str, body: str) -> dict[str, Any]:
        client = self._ensure_boto_client("lambda")
        try:
            response = client.invoke(
                FunctionName=function_name,
                InvocationType="RequestResponse",
                Payload=body.encode("utf-8"),
            )
        except (BotoCoreError, ClientError) as exc:
            message = getattr(exc, "response", {}).get("Error", {}).get("Message", str(exc))
            raise EndpointError(f"Lambda {function_name} invoke failed: {message}") from exc
        payload_stream = response.get("Payload")
        raw = payload_stream.read() if payload_stream else b""
        if response.get("FunctionError"):
            raise EndpointError(f"Lambda {function_name} raised {response['FunctionError']}: {raw[:200]!r}")
        return _decode_object(raw, f"Lambda {function_name}")

    def _invoke_sagemaker(self, endpoint_name: str, body: str) -> dict[str, Any]:
        client = self._ensure_boto_client("sagemaker-runtime")
        try:
            response = client.invoke_endpoint(
                EndpointName=endpoint_name,
                Body=body.encode("utf-8"),
                ContentType="application/json",
                Accept="application/json",
            )
        except (BotoCoreError, ClientError) as exc:
            message = getattr(exc, "response", {}).get("Error", {}).get("Message", str(exc))
            raise EndpointError(f"SageMaker endpoint {endpoint_name} failed: {message}") from exc
        return _decode_object(response["Body"].read(), f"SageMaker endpoint {endpoint_name}")
