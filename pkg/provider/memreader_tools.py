"""
場所: provider/memreader_tools.py
内容: memreader ツール群のプロバイダー。資格情報として渡されたエンドポイントロケーターとタイムアウトを検証する。
目的: 不正なロケーター (未知のスキームや対象名なし) をツール実行前に弾く。
"""

from typing import Any

from dify_plugin import ToolProvider
from dify_plugin.errors.tool import ToolProviderCredentialValidationError

from memreader.endpoints import parse_locator
from memreader.errors import ConfigError


class MemReaderToolsProvider(ToolProvider):
    def _validate_credentials(self, credentials: dict[str, Any]) -> None:
        try:
            for name in ("policy_endpoint", "judge_endpoint"):
                if credentials.get(name):
                    parse_locator(credentials[name])
            timeout = credentials.get("endpoint_timeout")
            if timeout not in (None, "") and float(timeout) <= 0:
                raise ConfigError(f"endpoint_timeout must be positive, got {timeout}")
        except (ConfigError, TypeError, ValueError) as e:
            raise ToolProviderCredentialValidationError(str(e))
