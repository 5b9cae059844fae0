"""
場所: memreader/__init__.py
内容: 会話ターンごとに add / buffer / search / ignore を判断するメモリー管理ランタイムと評価ハーネス。
目的: Dify ツールと CLI の双方から同じライブラリ関数を呼べるようにする。
"""

__version__ = "0.3.0"
