"""Small text utilities shared across modules."""
from __future__ import annotations

import re
from typing import Any

_WORD = re.compile(r"[a-z0-9]+")
_SENTENCE_END = re.compile(r"(?<=[.!?])\s+|\n+")

STOPWORDS = frozenset(
    "a an and are as at be by for from has have in into is it its of on or that the their this "
    "to was were which with".split()
)


def tokens(text: str) -> list[str]:
    """Lowercased alphanumeric tokens; punctuation is dropped."""
    return _WORD.findall(text.lower())


def token_set(text: str) -> set[str]:
    return set(tokens(text))


def content_tokens(text: str, extra_stop: frozenset[str] = frozenset()) -> list[str]:
    return [t for t in tokens(text) if t not in STOPWORDS and t not in extra_stop]


def stem(token: str) -> str:
    # crude prefix stemmer; good enough for keyword overlap
    return token[:6] if len(token) > 6 else token


def split_sentences(text: str, pattern: re.Pattern | str | None = None) -> list[str]:
    """Split on terminal punctuation followed by whitespace, and on newlines."""
    rx = _SENTENCE_END if pattern is None else re.compile(pattern)
    return [s.strip() for s in rx.split(text) if s and s.strip()]


def snake(words: list[str]) -> str:
    return "_".join(words)


def as_text(value: Any, sep: str = " and ") -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    return sep.join(str(v) for v in value)


def render_condition(tree: Any) -> str:
    """Flatten a condition tree into legal-style prose."""
    if tree is None:
        return ""
    if isinstance(tree, str):
        return tree
    if "not" in tree:
        return f"not ({render_condition(tree['not'])})"
    (joiner, items), = tree.items()
    word = "or" if joiner == "any" else "and"
    parts = [render_condition(i) for i in items]
    if len(parts) == 1:
        return parts[0]
    labelled = [f"({chr(97 + i)}) {p}" for i, p in enumerate(parts)]
    return "; ".join(labelled[:-1]) + f"; {word} " + labelled[-1]
