"""Gradient-saliency keyword extraction over a pluggable sentiment classifier.

The pipeline: tokenize an article into sub-word pieces, embed them, run the
classifier's differentiable scorer, backpropagate from the predicted class's
logit only, and take the L2 norm of each piece-embedding gradient as that
piece's saliency. Pieces merge back into words (mean saliency), stop-words
and bare punctuation drop out, per-word scores pool across the day's
articles, and the top n words are re-embedded in isolation.

A self-contained lexicon-trained classifier ships with the package so the
whole path runs without any external model weights.
"""

from __future__ import annotations

import csv
import os
import re
import zlib
from dataclasses import dataclass, field
from importlib import resources
from typing import Protocol, Sequence

import numpy as np

from .errors import NumericError, ValidationError
from .nn import AdamState, LinearLayer, adam_step, affine
from .tensor import (
    Tape,
    Tensor,
    add,
    matmul,
    mul,
    pick,
    relu,
    reshape,
    rng_stream,
    scale,
    sum_all,
    transpose,
)

CLASS_NAMES = ("positive", "negative", "neutral")

STOPWORDS = frozenset(
    """a an and are as at be been being but by can could did do does for from
    had has have he her here his how i if in is it its no not of on or our
    over she so than that the their them then there these they this those to
    under was we were what when where which who whom why will with would you
    your""".split()
)

_TOKEN_RE = re.compile(r"[a-z0-9']+|[^a-z0-9'\s]+")
_WORDLIKE_RE = re.compile(r"[a-z0-9]")


@dataclass(frozen=True)
class Piece:
    """One sub-word unit; continuation pieces carry the ## prefix."""

    text: str
    word_index: int

    @property
    def is_continuation(self) -> bool:
        return self.text.startswith("##")

    @property
    def core(self) -> str:
        return self.text[2:] if self.is_continuation else self.text


class SentimentClassifier(Protocol):
    dim: int

    def tokenize(self, text: str) -> list[Piece]: ...

    def embed(self, piece_text: str) -> np.ndarray: ...

    def logits(self, embeddings: Tensor) -> Tensor: ...


@dataclass
class KeywordSet:
    """Fixed-width keyword block: count real entries, zero rows after them."""

    words: list[str]
    saliencies: np.ndarray  # (n,)
    embeddings: np.ndarray  # (n, d)
    count: int

    def __post_init__(self):
        n = len(self.words)
        self.saliencies = np.asarray(self.saliencies, dtype=np.float64)
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.saliencies.shape != (n,) or self.embeddings.ndim != 2:
            raise ValidationError("keyword arrays do not line up with words")
        if self.embeddings.shape[0] != n:
            raise ValidationError("keyword embedding rows != words")
        if not 0 <= self.count <= n:
            raise ValidationError(f"keyword count {self.count} outside 0..{n}")
        if not np.isfinite(self.embeddings).all() or not np.isfinite(self.saliencies).all():
            raise ValidationError("non-finite keyword data")
        if (self.saliencies < 0).any():
            raise ValidationError("negative saliency")
        head = self.saliencies[: self.count]
        if head.size > 1 and (np.diff(head) > 1e-12).any():
            raise ValidationError("keyword entries not sorted by saliency")
        if self.count < n:
            if (self.saliencies[self.count :] != 0).any() or (
                self.embeddings[self.count :] != 0
            ).any():
                raise ValidationError("padding rows must be zero")

    @property
    def n(self) -> int:
        return len(self.words)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @classmethod
    def zero(cls, n: int, dim: int) -> "KeywordSet":
        return cls(
            words=[""] * n,
            saliencies=np.zeros(n),
            embeddings=np.zeros((n, dim)),
            count=0,
        )


def token_saliency(text: str, clf: SentimentClassifier) -> list[tuple[Piece, float]]:
    """Per-piece saliency: L2 norm of the predicted logit's embedding gradient.

    Returns [] for text with no tokens.
    """
    pieces = clf.tokenize(text)
    if not pieces:
        return []
    stacked = np.stack([clf.embed(p.text) for p in pieces])
    x = Tensor(stacked, requires_grad=True)
    with Tape() as tape:
        logits = clf.logits(x)
        predicted = int(np.argmax(logits.data))
        target = pick(logits, predicted)
    tape.backward(target)
    # a scorer that never reads x leaves no gradient on it
    grad = x.grad if x.grad is not None else np.zeros_like(stacked)
    norms = np.sqrt(np.sum(np.square(grad), axis=1))
    return list(zip(pieces, norms.tolist()))


def merge_subwords(
    scored_pieces: Sequence[tuple[Piece, float]]
) -> list[tuple[str, float]]:
    """Mean piece saliency per word, text order kept, noise words dropped."""
    words: list[tuple[str, float]] = []
    by_word: dict[int, list[tuple[Piece, float]]] = {}
    order: list[int] = []
    for piece, s in scored_pieces:
        if piece.word_index not in by_word:
            order.append(piece.word_index)
        by_word.setdefault(piece.word_index, []).append((piece, s))
    for idx in order:
        group = by_word[idx]
        word = "".join(p.core for p, _ in group)
        if word in STOPWORDS or not _WORDLIKE_RE.search(word):
            continue
        words.append((word, sum(s for _, s in group) / len(group)))
    return words


def extract_keywords(
    texts: Sequence[str],
    clf: SentimentClassifier,
    n: int = 17,
    pool: str = "max",
) -> KeywordSet:
    """Top-n daily keywords, re-embedded in isolation; zero-padded to n."""
    if n < 1:
        raise ValidationError(f"keyword count must be >= 1, got {n}")
    if pool not in ("max", "mean"):
        raise ValidationError(f"unknown pooling {pool!r}")
    pooled: dict[str, list[float]] = {}
    for text in texts:
        for word, s in merge_subwords(token_saliency(text, clf)):
            pooled.setdefault(word, []).append(s)
    scored = [
        (max(ss) if pool == "max" else sum(ss) / len(ss), word)
        for word, ss in pooled.items()
    ]
    scored.sort(key=lambda t: (-t[0], t[1]))
    top = scored[:n]
    words = [w for _, w in top]
    saliencies = np.zeros(n)
    embeddings = np.zeros((n, clf.dim))
    for i, (s, word) in enumerate(top):
        saliencies[i] = s
        embeddings[i] = embed_word(word, clf)
    return KeywordSet(
        words=words + [""] * (n - len(top)),
        saliencies=saliencies,
        embeddings=embeddings,
        count=len(top),
    )


def embed_word(word: str, clf: SentimentClassifier) -> np.ndarray:
    """A word on its own: mean of its piece embeddings."""
    pieces = clf.tokenize(word)
    if not pieces:
        raise ValidationError(f"word {word!r} produced no pieces")
    return np.mean([clf.embed(p.text) for p in pieces], axis=0)


# ---------------------------------------------------------------------------
# lexicon-trained stand-in classifier


def default_lexicon_path() -> str:
    return str(resources.files("iknet").joinpath("data/lexicon.csv"))


def load_lexicon(path: str | os.PathLike) -> dict[str, str]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["word", "polarity"]:
            raise ValidationError(f"unexpected lexicon header: {header}")
        lex = {}
        for row in reader:
            if not row:
                continue
            word, polarity = row[0].strip().lower(), row[1].strip()
            if polarity not in ("pos", "neg", "neu"):
                raise ValidationError(f"bad polarity {polarity!r} for {word!r}")
            lex[word] = polarity
    if not lex:
        raise ValidationError(f"empty lexicon: {path}")
    return lex


_POLARITY_CLASS = {"pos": 0, "neg": 1, "neu": 2}
_CHUNK = 3
_TABLE_SIZE = 65536


@dataclass
class ToyClassifier:
    """Hash-embedding tokenizer + tiny frozen MLP trained on the lexicon.

    The scorer averages per-piece class logits, so each piece keeps its own
    gradient path and saliency stays discriminative.
    """

    lexicon: dict[str, str]
    dim: int = 32
    hidden: int = 64
    seed: int = 0
    table: np.ndarray = field(init=False, repr=False)
    layer1: LinearLayer = field(init=False, repr=False)
    layer2: LinearLayer = field(init=False, repr=False)

    def __post_init__(self):
        if not self.lexicon:
            raise ValidationError("empty lexicon")
        rng = rng_stream(self.seed, "toy-embed")
        self.table = rng.normal(0.0, 1.0, (_TABLE_SIZE, self.dim)) / np.sqrt(self.dim)
        init_rng = rng_stream(self.seed, "toy-mlp")
        self.layer1 = LinearLayer.init(init_rng, self.dim, self.hidden)
        self.layer2 = LinearLayer.init(init_rng, self.hidden, len(CLASS_NAMES))
        self._pretrain()
        for _, t in self.parameters():
            t.requires_grad = False

    @classmethod
    def from_csv(cls, path: str | os.PathLike | None = None, **kw) -> "ToyClassifier":
        return cls(lexicon=load_lexicon(path or default_lexicon_path()), **kw)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return self.layer1.named("scorer.layer1") + self.layer2.named("scorer.layer2")

    def tokenize(self, text: str) -> list[Piece]:
        pieces = []
        for word_index, token in enumerate(_TOKEN_RE.findall(text.lower())):
            if not _WORDLIKE_RE.search(token) or token in self.lexicon:
                pieces.append(Piece(token, word_index))
                continue
            for start in range(0, len(token), _CHUNK):
                chunk = token[start : start + _CHUNK]
                pieces.append(Piece(chunk if start == 0 else "##" + chunk, word_index))
        return pieces

    def embed(self, piece_text: str) -> np.ndarray:
        row = zlib.crc32(piece_text.encode("utf-8")) % _TABLE_SIZE
        return self.table[row]

    def logits(self, embeddings: Tensor) -> Tensor:
        """(n, d) piece embeddings -> (3,) text logits, mean over pieces."""
        per_piece = self._piece_logits(embeddings)
        n = embeddings.data.shape[0]
        ones = Tensor(np.ones((1, n)))
        return reshape(scale(matmul(ones, per_piece), 1.0 / n), (len(CLASS_NAMES),))

    def _piece_logits(self, embeddings: Tensor) -> Tensor:
        h = relu(affine(embeddings, transpose(self.layer1.weight), self.layer1.bias))
        return affine(h, transpose(self.layer2.weight), self.layer2.bias)

    def _pretrain(self):
        words = sorted(self.lexicon)
        inputs = Tensor(np.stack([self.embed(w) for w in words]))
        targets = -np.ones((len(words), len(CLASS_NAMES)))
        for i, w in enumerate(words):
            targets[i, _POLARITY_CLASS[self.lexicon[w]]] = 1.0
        target_t = Tensor(targets)
        params = [t for _, t in self.parameters()]
        state = AdamState.for_params(params, lr=0.02)
        denom = 1.0 / targets.size
        for epoch in range(600):
            for p in params:
                p.zero_grad()
            with Tape() as tape:
                out = self._piece_logits(inputs)
                diff = add(out, scale(target_t, -1.0))
                loss = scale(sum_all(mul(diff, diff)), denom)
            tape.backward(loss)
            adam_step(params, state)
            if epoch % 25 == 24 and self._min_margin(inputs.data, targets) > 0.25:
                break
        if self._min_margin(inputs.data, targets) <= 0.0:
            raise NumericError("toy classifier failed to separate its lexicon")

    def _min_margin(self, inputs: np.ndarray, targets: np.ndarray) -> float:
        h = np.maximum(inputs @ self.layer1.weight.data.T + self.layer1.bias.data, 0.0)
        out = h @ self.layer2.weight.data.T + self.layer2.bias.data
        margins = []
        for row, tgt in zip(out, targets):
            cls = int(np.argmax(tgt))
            rest = np.delete(row, cls)
            margins.append(row[cls] - rest.max())
        return float(min(margins))
