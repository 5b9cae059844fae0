"""
場所: memreader/text.py
内容: 英語 (nltk の正規表現トークナイザー) と中国語 (jieba) を混在させたテキストの単語分割。
目的: 字句一致ジャッジとヒューリスティック方策が同じトークン列を見るようにする。
"""

from __future__ import annotations

import logging
import re
from functools import lru_cache

import jieba
from nltk.tokenize import RegexpTokenizer

jieba.setLogLevel(logging.WARNING)

_LATIN = RegexpTokenizer(r"[a-z0-9]+(?:'[a-z]+)?")
_CJK_RUN = re.compile(r"[\u3400-\u4dbf\u4e00-\u9fff\uf900-\ufaff]+")

STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are as at be because been before being below between
    both but by can could did do does doing down during each few for from further had has have having he her here
    hers herself him himself his how i if in into is it its itself just let me more most my myself no nor not now
    of off on once only or other our ours ourselves out over own same she should so some such than that the their
    theirs them themselves then there these they this those through to too under until up very was we were what
    when where which while who whom why will with would you your yours yourself yourselves i'm i've i'll i'd it's
    that's there's what's let's don't didn't doesn't can't won't isn't aren't wasn't weren't you're we're they're
    it'd that'd he's she's 'cause cause gonna wanna got get go going went really also yes yeah oh wow ok okay
    """.split()
)


def normalize_quotes(text: str) -> str:
    return text.replace("’", "'").replace("‘", "'")


@lru_cache(maxsize=2048)
def _tokenize(text: str) -> tuple[str, ...]:
    lowered = normalize_quotes(text).lower()
    tokens: list[str] = []
    cursor = 0
    for run in _CJK_RUN.finditer(lowered):
        tokens.extend(_LATIN.tokenize(lowered[cursor : run.start()]))
        tokens.extend(word for word in jieba.lcut(run.group()) if word.strip())
        cursor = run.end()
    tokens.extend(_LATIN.tokenize(lowered[cursor:]))
    return tuple(tokens)


def tokenize(text: str) -> list[str]:
    """小文字化したトークン列。中国語の連続部分は jieba で分割する."""
    return list(_tokenize(text))


def content_words(text: str) -> list[str]:
    """ストップワードと 1 文字の英数字を除いた語を出現順に返す (重複は残す)."""
    return [token for token in _tokenize(text) if token not in STOPWORDS and not (len(token) == 1 and token.isascii())]
