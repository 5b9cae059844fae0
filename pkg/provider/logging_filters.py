"""
場所: provider/logging_filters.py
内容: ログ出力から AWS 資格情報・エンドポイントの API キーや URL 埋め込みパスワードをマスクするフィルター。
目的: エンドポイントロケーターや例外メッセージをそのままログへ出しても秘密情報が平文で残らないようにする。
"""

from __future__ import annotations

import logging
import re
from collections.abc import Iterable, Mapping
from typing import Any

from dify_plugin.config.logger_format import plugin_logger_handler

MASK_TOKEN = "***REDACTED***"
SENSITIVE_FIELD_NAMES = (
    "aws_access_key_id",
    "aws_secret_access_key",
    "aws_session_token",
    "access_key_id",
    "secret_access_key",
    "api_key",
    "x-api-key",
    "authorization",
    "token",
)
_SENSITIVE_FIELD_SET = {name.lower() for name in SENSITIVE_FIELD_NAMES}
_FIELD_PATTERN = "|".join(re.escape(name) for name in SENSITIVE_FIELD_NAMES)

_QUOTED_FIELD_PATTERN = re.compile(
    rf"(?P<prefix>[\"']?(?<![\w-])(?:{_FIELD_PATTERN})[\"']?\s*[:=]\s*)(?P<quote>[\"'])(?P<value>[^\"']+?)(?P=quote)",
    flags=re.IGNORECASE,
)
_UNQUOTED_FIELD_PATTERN = re.compile(
    rf"(?P<prefix>(?<![\w-])(?:{_FIELD_PATTERN})\s*[:=]\s*)(?P<value>(?:Bearer\s+)?[^\s,}}\"']+)",
    flags=re.IGNORECASE,
)
_URL_CREDENTIALS_PATTERN = re.compile(r"(?P<scheme>\bhttps?://)[^/\s:@]+:[^/\s@]+@", flags=re.IGNORECASE)
_ACCESS_KEY_VALUE_PATTERN = re.compile(r"\b(AKIA|ASIA|AIDA|AGPA)[0-9A-Z]{16}\b")


def mask_sensitive_text(message: str) -> str:
    if not message:
        return message

    def _quoted(match: re.Match[str]) -> str:
        if match.group("value") == MASK_TOKEN:
            return match.group(0)
        quote = match.group("quote")
        return f"{match.group('prefix')}{quote}{MASK_TOKEN}{quote}"

    masked = _QUOTED_FIELD_PATTERN.sub(_quoted, message)
    masked = _UNQUOTED_FIELD_PATTERN.sub(
        lambda m: m.group(0) if m.group("value") == MASK_TOKEN else f"{m.group('prefix')}{MASK_TOKEN}",
        masked,
    )
    masked = _URL_CREDENTIALS_PATTERN.sub(lambda m: f"{m.group('scheme')}{MASK_TOKEN}@", masked)
    return _ACCESS_KEY_VALUE_PATTERN.sub(MASK_TOKEN, masked)


def scrub_sensitive_data(data: Any) -> Any:
    """辞書やリストを再帰的に走査し、機密キーと機密文字列だけをマスクしたコピーを返す."""
    if isinstance(data, Mapping):
        return {
            key: MASK_TOKEN
            if isinstance(key, str) and key.lower() in _SENSITIVE_FIELD_SET
            else scrub_sensitive_data(value)
            for key, value in data.items()
        }
    if isinstance(data, tuple):
        return tuple(scrub_sensitive_data(item) for item in data)
    if isinstance(data, list):
        return [scrub_sensitive_data(item) for item in data]
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="ignore")
    if isinstance(data, str):
        return mask_sensitive_text(data)
    return data


class SensitiveDataFilter(logging.Filter):
    def filter(self, record: logging.LogRecord) -> bool:
        record.msg = scrub_sensitive_data(record.msg)
        if record.args:
            record.args = scrub_sensitive_data(record.args)
        if record.exc_info and record.exc_info[1] is not None and not record.exc_text:
            # 例外メッセージにロケーターが含まれるので整形済みテキストを先に作ってマスクする
            record.exc_text = mask_sensitive_text(logging.Formatter().formatException(record.exc_info))
        return True


_FILTER_INSTANCE: SensitiveDataFilter | None = None


def install_sensitive_data_filter(handlers: Iterable[logging.Handler] = ()) -> SensitiveDataFilter:
    """プラグインのハンドラ、ルートロガーのハンドラ、追加で渡されたハンドラにフィルターを付ける.

    何度呼んでもフィルターは 1 つで、まだ付いていないハンドラにだけ追加する。
    """
    global _FILTER_INSTANCE
    if _FILTER_INSTANCE is None:
        _FILTER_INSTANCE = SensitiveDataFilter()

    targets = [plugin_logger_handler, *logging.getLogger().handlers, *handlers]
    for handler in targets:
        if _FILTER_INSTANCE not in handler.filters:
            handler.addFilter(_FILTER_INSTANCE)
    return _FILTER_INSTANCE
