"""Pull predicted destination ids out of free-form completion text."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Container

EXACT = "exact-template"
FALLBACK = "fallback-integer"
UNPARSEABLE = "unparseable"

_QUOTES = "`'\"‘’“”*"
TEMPLATE = re.compile(
    rf"Destination\s+Node[{_QUOTES}]*\s*(?:is|:|=)\s*[{_QUOTES}(\[]*\s*(\d+)(?![\d.]\d)",
    re.IGNORECASE,
)
INTEGER = re.compile(r"(?<![\w.])\d+(?!\.\d)(?!\w)")


@dataclass
class ParsedPrediction:
    query_id: int
    ranked: list[int] = field(default_factory=list)
    parse_status: str = UNPARSEABLE


def _collect(matches, valid_ids: Container[int] | None) -> list[int]:
    out: list[int] = []
    for raw in matches:
        v = int(raw)
        if (valid_ids is None or v in valid_ids) and v not in out:
            out.append(v)
    return out


def parse_prediction(
    text: str, valid_ids: Container[int] | None = None, query_id: int = -1
) -> ParsedPrediction:
    """Rank the node ids a completion names.

    Answers in the ``Destination Node' is <id>`` form come first, in order
    of appearance.  Without one, every in-range integer in the text is
    taken in order of appearance.  ``valid_ids`` is usually a ``range``
    over the destination partition; it keeps timestamps and out-of-range
    numbers out of the ranking.
    """
    text = text or ""
    templated = _collect(TEMPLATE.findall(text), valid_ids)
    if templated:
        return ParsedPrediction(query_id, templated, EXACT)
    loose = _collect(INTEGER.findall(text), valid_ids)
    if loose:
        return ParsedPrediction(query_id, loose, FALLBACK)
    return ParsedPrediction(query_id, [], UNPARSEABLE)
