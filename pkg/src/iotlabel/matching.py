"""Label string matching over alphanumerically folded text.

Text and labels are lowercased and stripped of every non-alphanumeric
character before comparison, so "TP-Link", "tp link" and "TPLINK" all match
the label "tplink". Labels of at most ``SHORT_LABEL_MAX`` folded characters
must additionally start and end on token boundaries of the original text,
which keeps "lg" from matching inside "analog".
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

SHORT_LABEL_MAX = 3
EXCERPT_CONTEXT = 60


@dataclass(frozen=True)
class FoldedText:
    text: str
    folded: str
    # folded index -> index of the originating character in ``text``
    origin: tuple[int, ...]
    bounds: frozenset[int]


def fold(text: str) -> FoldedText:
    chars: list[str] = []
    origin: list[int] = []
    for i, ch in enumerate(text):
        if ch.isalnum():
            for c in ch.lower():
                chars.append(c)
                origin.append(i)
    n = len(chars)
    bounds = {0, n}
    for j in range(1, n):
        if origin[j] - origin[j - 1] > 1:
            bounds.add(j)
    return FoldedText(text, "".join(chars), tuple(origin), frozenset(bounds))


@lru_cache(maxsize=4096)
def fold_label(label: str) -> str:
    return fold(label).folded


def find_spans(labels: Sequence[str], ft: FoldedText) -> list[tuple[int, int]]:
    """Non-overlapping matches, scanning left to right, longest label first at each position."""
    needles = [s for s in dict.fromkeys(fold_label(lbl) for lbl in labels) if s]
    cands: list[tuple[int, int]] = []
    hay = ft.folded
    for s in needles:
        if s not in hay:
            continue
        short = len(s) <= SHORT_LABEL_MAX
        start = hay.find(s)
        while start != -1:
            end = start + len(s)
            if not short or (start in ft.bounds and end in ft.bounds):
                cands.append((start, end))
            start = hay.find(s, start + 1)
    cands.sort(key=lambda span: (span[0], -span[1]))
    spans = []
    cursor = 0
    for a, b in cands:
        if a >= cursor:
            spans.append((a, b))
            cursor = b
    return spans


def match_count(labels: Iterable[str], text: str) -> int:
    """Occurrences of any of ``labels`` in ``text``; overlapping hits count once."""
    if not text:
        return 0
    return len(find_spans(tuple(labels), fold(text)))


def excerpt(ft: FoldedText, span: tuple[int, int], context: int = EXCERPT_CONTEXT) -> str:
    """Verbatim slice of the original text around a folded-text span."""
    a = ft.origin[span[0]]
    b = ft.origin[span[1] - 1] + 1
    lo = max(0, a - context)
    hi = min(len(ft.text), b + context)
    return ft.text[lo:hi].strip()
