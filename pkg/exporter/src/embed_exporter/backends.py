"""Scoring backends: a real transformer and a deterministic linear stub.

A backend owns everything model-specific and exposes four things: piece
saliencies for an article (gradient of the predicted class logit with
respect to the input embeddings, L2 norm per piece), isolated word
re-encoding with mean-over-token pooling, the embedding dim, and identity
metadata for the manifest. Everything above the piece level lives in
saliency.py so both backends rank words under identical rules.
"""

from __future__ import annotations

import hashlib
import math
import re

import numpy as np

from .errors import InvalidInput, MissingInput
from .saliency import ScoredPiece, _WORDLIKE_RE

POOLING = "mean-over-tokens"

_TOKEN_RE = re.compile(r"[a-z0-9']+|[^a-z0-9'\s]+")
_CHUNK = 3


def backend_for(model_id: str, revision: str | None = None):
    """Build the backend a model id names.

    "stub:SEED" or "stub:SEED:DIM" selects the offline linear stub; anything
    else is treated as a transformer checkpoint reference.
    """
    if model_id.startswith("stub:"):
        parts = model_id.split(":")
        try:
            seed = int(parts[1])
            dim = int(parts[2]) if len(parts) > 2 else 24
        except (IndexError, ValueError) as exc:
            raise InvalidInput(
                f"stub model id must look like stub:SEED[:DIM], got {model_id!r}"
            ) from exc
        return LinearStubBackend(dim=dim, seed=seed)
    return TransformerBackend(model_id, revision=revision)


class LinearStubBackend:
    """Linear scorer over hashed embeddings; exact closed-form saliencies.

    Tokenization mirrors the consuming engine's toy scorer: lowercased runs
    of [a-z0-9'] or punctuation clusters, with wordlike tokens split into
    3-character chunks carrying ## continuation markers. The text score is
    the mean of per-piece affine logits, so the predicted-class gradient at
    every piece is W[c] / n_pieces and its norm needs no autodiff.
    """

    def __init__(self, dim: int = 24, n_classes: int = 3, seed: int = 0):
        if dim < 1 or n_classes < 2:
            raise InvalidInput(f"stub needs dim >= 1 and n_classes >= 2, got {dim}/{n_classes}")
        self.dim = dim
        self.n_classes = n_classes
        self.seed = seed
        rng = np.random.default_rng([seed, 0xE5B0])
        self.weight = rng.normal(0.0, 1.0 / math.sqrt(dim), size=(n_classes, dim))
        self.bias = rng.normal(0.0, 0.1, size=n_classes)
        self.model_id = f"stub:{seed}:{dim}"
        self.pooling = POOLING
        self.tokenizer_version = f"chunk{_CHUNK}-wordpiece/1"
        digest = hashlib.sha256()
        digest.update(self.weight.tobytes())
        digest.update(self.bias.tobytes())
        self.revision = "sha256:" + digest.hexdigest()
        self._embeddings: dict[str, np.ndarray] = {}

    def tokenize(self, text: str) -> list[tuple[str, int]]:
        """(piece_text, word_index) pairs; continuations carry ##."""
        pieces = []
        for word_index, token in enumerate(_TOKEN_RE.findall(text.lower())):
            if not _WORDLIKE_RE.search(token):
                pieces.append((token, word_index))
                continue
            for start in range(0, len(token), _CHUNK):
                chunk = token[start : start + _CHUNK]
                pieces.append((chunk if start == 0 else "##" + chunk, word_index))
        return pieces

    def embedding(self, piece_text: str) -> np.ndarray:
        cached = self._embeddings.get(piece_text)
        if cached is None:
            digest = hashlib.sha256(piece_text.encode("utf-8")).digest()
            rng = np.random.default_rng([self.seed, int.from_bytes(digest[:8], "big")])
            cached = rng.normal(0.0, 1.0 / math.sqrt(self.dim), size=self.dim)
            self._embeddings[piece_text] = cached
        return cached

    def logits(self, stacked: np.ndarray) -> np.ndarray:
        return (stacked @ self.weight.T + self.bias).mean(axis=0)

    def score_pieces(self, text: str) -> list[ScoredPiece]:
        pieces = self.tokenize(text)
        if not pieces:
            return []
        stacked = np.stack([self.embedding(p) for p, _ in pieces])
        predicted = int(np.argmax(self.logits(stacked)))
        saliency = float(np.linalg.norm(self.weight[predicted])) / len(pieces)
        words: dict[int, str] = {}
        for piece_text, index in pieces:
            core = piece_text[2:] if piece_text.startswith("##") else piece_text
            words[index] = words.get(index, "") + core
        return [
            ScoredPiece(text=p, word=words[i], word_index=i, saliency=saliency)
            for p, i in pieces
        ]

    def encode_word(self, word: str) -> np.ndarray:
        pieces = self.tokenize(word)
        if not pieces:
            raise InvalidInput(f"word {word!r} produced no pieces")
        return np.mean([self.embedding(p) for p, _ in pieces], axis=0)


class TransformerBackend:
    """Sequence-classification transformer scored through inputs_embeds.

    Saliency: embed the token ids, require grad, run the classifier, and
    take the L2 norm of the predicted logit's gradient at each position.
    Re-encoding runs the bare encoder over the word alone and mean-pools the
    hidden states of its real tokens (specials excluded).
    """

    def __init__(self, model_id: str, revision: str | None = None):
        torch, transformers = _import_ml()
        try:
            tokenizer = transformers.AutoTokenizer.from_pretrained(
                model_id, revision=revision
            )
            model = transformers.AutoModelForSequenceClassification.from_pretrained(
                model_id, revision=revision
            )
        except Exception as exc:
            raise MissingInput(f"cannot load model {model_id!r}: {exc}") from exc
        self._init_from(model, tokenizer, model_id, revision)

    @classmethod
    def from_loaded(cls, model, tokenizer, model_id: str = "local"):
        """Wrap an already-constructed model/tokenizer pair (tests, scripts)."""
        self = cls.__new__(cls)
        self._init_from(model, tokenizer, model_id, None)
        return self

    def _init_from(self, model, tokenizer, model_id, revision):
        torch, transformers = _import_ml()
        if not getattr(tokenizer, "is_fast", False):
            raise InvalidInput(
                f"model {model_id!r} needs a fast tokenizer (word alignment required)"
            )
        self._torch = torch
        self.model = model.eval()
        self.tokenizer = tokenizer
        self.model_id = model_id
        self.dim = int(model.config.hidden_size)
        self.pooling = POOLING
        self.tokenizer_version = (
            f"{type(tokenizer).__name__}/{transformers.__version__}"
            f"/vocab{len(tokenizer)}"
        )
        self.revision = revision if revision else "sha256:" + self._weights_digest()
        limit = getattr(tokenizer, "model_max_length", 512)
        self.max_tokens = int(limit) if 0 < limit <= 4096 else 512

    def _weights_digest(self) -> str:
        digest = hashlib.sha256()
        state = self.model.state_dict()
        for name in sorted(state):
            digest.update(name.encode("utf-8"))
            digest.update(state[name].cpu().numpy().tobytes())
        return digest.hexdigest()

    def score_pieces(self, text: str) -> list[ScoredPiece]:
        torch = self._torch
        enc = self.tokenizer(
            text, return_tensors="pt", truncation=True, max_length=self.max_tokens,
            return_offsets_mapping=True,
        )
        offsets = enc.pop("offset_mapping")[0].tolist()
        word_ids = enc.word_ids(0)
        ids = enc["input_ids"][0]
        if all(w is None for w in word_ids):
            return []
        embeds = self.model.get_input_embeddings()(enc["input_ids"]).detach()
        embeds.requires_grad_(True)
        logits = self.model(
            inputs_embeds=embeds, attention_mask=enc.get("attention_mask")
        ).logits[0]
        predicted = int(torch.argmax(logits))
        (grad,) = torch.autograd.grad(logits[predicted], embeds)
        norms = torch.linalg.vector_norm(grad[0], dim=-1)

        spans: dict[int, list[int]] = {}
        for position, word in enumerate(word_ids):
            if word is not None:
                spans.setdefault(word, []).append(position)
        surfaces = {
            word: text[
                min(offsets[p][0] for p in positions) : max(offsets[p][1] for p in positions)
            ].lower()
            for word, positions in spans.items()
        }
        tokens = self.tokenizer.convert_ids_to_tokens(ids)
        return [
            ScoredPiece(
                text=tokens[position],
                word=surfaces[word],
                word_index=word,
                saliency=float(norms[position]),
            )
            for position, word in enumerate(word_ids)
            if word is not None
        ]

    def encode_word(self, word: str) -> np.ndarray:
        torch = self._torch
        enc = self.tokenizer(
            word, return_tensors="pt", truncation=True, max_length=self.max_tokens
        )
        word_ids = enc.word_ids(0)
        rows = [i for i, w in enumerate(word_ids) if w is not None]
        if not rows:
            raise InvalidInput(f"word {word!r} produced no tokens")
        base = getattr(self.model, self.model.base_model_prefix)
        with torch.no_grad():
            hidden = base(**enc).last_hidden_state[0]
        return hidden[rows].mean(dim=0).double().cpu().numpy()


def _import_ml():
    try:
        import torch
        import transformers
    except ImportError as exc:
        raise MissingInput(
            "transformer backend needs the [transformer] extra (torch + transformers)"
        ) from exc
    return torch, transformers
