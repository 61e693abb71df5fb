"""Word-level saliency policies shared by every backend.

A backend scores sub-word pieces; this module owns what happens above that
level so the rules cannot drift between the stub and the transformer: pieces
merge into words by mean saliency, a day pools repeated words by max, and
the top-n survivors are picked with a deterministic tie-break. The policies
mirror the consuming engine's own keyword extraction, so files produced here
rank words the way the engine would have.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

STOPWORDS = frozenset(
    """a an and are as at be been being but by can could did do does for from
    had has have he her here his how i if in is it its no not of on or our
    over she so than that the their them then there these they this those to
    under was we were what when where which who whom why will with would you
    your""".split()
)

_WORDLIKE_RE = re.compile(r"[a-z0-9]")


@dataclass(frozen=True)
class ScoredPiece:
    """One scored sub-word unit.

    word_index groups pieces belonging to the same source word; word is that
    word's lowercased surface form (already merged across its pieces).
    """

    text: str
    word: str
    word_index: int
    saliency: float


def merge_pieces(pieces: list[ScoredPiece]) -> list[tuple[str, float]]:
    """Mean piece saliency per word, text order kept, noise words dropped."""
    order: list[int] = []
    groups: dict[int, list[ScoredPiece]] = {}
    for piece in pieces:
        if piece.word_index not in groups:
            order.append(piece.word_index)
        groups.setdefault(piece.word_index, []).append(piece)
    words = []
    for index in order:
        group = groups[index]
        word = group[0].word
        if word in STOPWORDS or not _WORDLIKE_RE.search(word):
            continue
        words.append((word, sum(p.saliency for p in group) / len(group)))
    return words


def select_top(word_scores: list[tuple[str, float]], n: int) -> list[tuple[str, float]]:
    """Top-n of a day: max saliency per word, then (-saliency, word) order.

    Returns fewer than n entries when the day's vocabulary runs short; the
    consuming engine zero-pads such records and keeps the true count.
    """
    pooled: dict[str, float] = {}
    for word, s in word_scores:
        if word not in pooled or s > pooled[word]:
            pooled[word] = s
    ranked = sorted(pooled.items(), key=lambda t: (-t[1], t[0]))
    return ranked[:n]
