"""
場所: main.py
内容: Dify プラグインの起動ポイントとロギングフィルター初期化。
目的: プロセス開始時にエンドポイントの秘密情報マスクを有効にしてから memreader ツール群を提供する。
"""

from dify_plugin import DifyPluginEnv, Plugin

from provider.logging_filters import install_sensitive_data_filter

install_sensitive_data_filter()

# 外部方策は 1 ステップごとにエンドポイントを呼ぶのでエピソード全体の上限を長めに取る
plugin = Plugin(DifyPluginEnv(MAX_REQUEST_TIMEOUT=600))

if __name__ == "__main__":
    plugin.run()
