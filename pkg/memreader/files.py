"""
場所: memreader/files.py
内容: JSON / JSON Lines の読み書きと、一時ファイル経由のアトミック書き込み。
目的: CLI の出力が途中で壊れず、同じ入力から常に同じバイト列が書かれるようにする。
"""

from __future__ import annotations

import json
import os
import tempfile
from collections.abc import Iterable, Iterator
from pathlib import Path
from typing import Any, NamedTuple


def dumps(obj: Any, *, indent: int | None = None) -> str:
    """ensure_ascii=False で JSON 文字列化する (挿入順を保持)."""
    return json.dumps(obj, ensure_ascii=False, indent=indent)


def atomic_write_text(path: str | os.PathLike[str], text: str) -> Path:
    """同じディレクトリに一時ファイルを書き、rename で置き換える."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return target


def write_json(path: str | os.PathLike[str], obj: Any) -> Path:
    return atomic_write_text(path, dumps(obj, indent=2) + "\n")


def write_jsonl(path: str | os.PathLike[str], rows: Iterable[Any]) -> Path:
    return atomic_write_text(path, jsonl_text(rows))


def read_json(path: str | os.PathLike[str]) -> Any:
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


class JsonLine(NamedTuple):
    line_number: int
    value: Any
    error: str | None


def iter_jsonl_lines(lines: Iterable[str]) -> Iterator[JsonLine]:
    """1 行ずつデコードする。空行は読み飛ばし、壊れた行は error 付きで返す."""
    for line_number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            yield JsonLine(line_number, json.loads(line), None)
        except json.JSONDecodeError as exc:
            yield JsonLine(line_number, None, str(exc))


def iter_jsonl(path: str | os.PathLike[str]) -> Iterator[JsonLine]:
    with open(path, encoding="utf-8") as handle:
        yield from iter_jsonl_lines(handle)


def jsonl_text(rows: Iterable[Any]) -> str:
    return "".join(dumps(row) + "\n" for row in rows)
