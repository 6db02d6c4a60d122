"""Explicit cross-reference extraction.

Tokens: ``A<n>`` for an article, ``A<n>.<m>`` for paragraph ``m`` of
article ``n``.
"""
from __future__ import annotations

import re

TOKEN = re.compile(r"^A(\d+)(?:\.(\d+))?$")

_NUM = r"\d+(?:\s*\(\d+\))?(?:\s*\([a-z]\))*"
_SEP = r"\s*(?:,\s*(?:and|or)?|and|or|to|\u2013|\u2014|-)\s*"
_MENTION = re.compile(
    rf"\b(?:Articles?|Arts?\.)\s*(?P<list>{_NUM}(?:{_SEP}{_NUM})*)",
    re.I,
)
_FOREIGN = re.compile(r"\s*of\s+(?:Directive|Regulation|Decision)\b", re.I)
_ITEM = re.compile(r"(\d+)(?:\s*\((\d+)\))?(?:\s*\([a-z]\))*")
_RANGE = re.compile(r"^\s*(?:to|\u2013|\u2014|-)\s*$")


def _tokens_from_list(span: str) -> list[str]:
    out: list[str] = []
    items = list(_ITEM.finditer(span))
    prev = None
    for item in items:
        art, par = item.group(1), item.group(2)
        if prev is not None and _RANGE.match(span[prev.end():item.start()]):
            lo, hi = int(prev.group(1)), int(art)
            if lo < hi:
                out.extend(f"A{n}" for n in range(lo + 1, hi))
            out.append(f"A{art}")
        else:
            out.append(f"A{art}.{par}" if par else f"A{art}")
        prev = item
    return out


def explicit_refs(text: str) -> list[str]:
    """Canonical tokens for explicit article mentions, deduplicated, in text order.

    >>> explicit_refs("special categories of data (Art. 9) and offences (Art. 10)")
    ['A9', 'A10']
    >>> explicit_refs("Articles 44 to 49 shall apply")
    ['A44', 'A45', 'A46', 'A47', 'A48', 'A49']
    """
    seen: dict[str, None] = {}
    for m in _MENTION.finditer(text):
        if _FOREIGN.match(text, m.end()):
            continue
        for tok in _tokens_from_list(m.group("list")):
            seen.setdefault(tok, None)
    return list(seen)


def parse_token(token: str) -> tuple[str, str | None]:
    """Split ``A37.1`` into ``("37", "1")``; raise ValueError on bad tokens."""
    m = TOKEN.match(token)
    if not m:
        raise ValueError(f"bad reference token {token!r}")
    return m.group(1), m.group(2)


def is_token(token: str) -> bool:
    return bool(TOKEN.match(token))
