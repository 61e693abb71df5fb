"""Batch export: texts per day in, keyword JSONL plus manifest out.

Record schema matches the consuming engine's loader: one JSON object per
line with "date", "articles" (unique texts that day), and "keywords" as a
list of {word, saliency, embedding} objects, saliencies non-increasing.
Short days emit their real entries only; the engine pads to its configured
width at load time and keeps the true count. A day with no rankable words
emits a zero-keyword record.

Both output files are written to a temp sibling and renamed into place, so
a crash never leaves a half-written file where a consumer might read it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from datetime import date as _date

import numpy as np

from .backends import backend_for
from .errors import InvalidInput
from .saliency import merge_pieces, select_top


@dataclasses.dataclass(frozen=True)
class ExportManifest:
    model_id: str
    revision: str
    dim: int
    pooling: str
    tokenizer: str
    date_start: str
    date_end: str
    records: int
    keywords_per_day: int
    file_sha256: str

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"


@dataclasses.dataclass(frozen=True)
class ExportResult:
    jsonl_path: str
    manifest_path: str
    manifest: ExportManifest


def export(
    texts_by_date: dict[_date, list[str]],
    model_id: str | None = None,
    n: int = 17,
    out_path: str | os.PathLike = "keywords.jsonl",
    backend=None,
) -> ExportResult:
    """Score every day's articles and write the JSONL + manifest pair.

    Duplicate article texts within a day are hashed out before scoring, so
    a wire-service reprint contributes once and "articles" counts unique
    texts. Word embeddings are cached across days; the same word always
    re-encodes to the same vector.
    """
    if n < 1:
        raise InvalidInput(f"n must be >= 1, got {n}")
    if not texts_by_date:
        raise InvalidInput("no days to export")
    for day in texts_by_date:
        if not isinstance(day, _date):
            raise InvalidInput(f"texts_by_date keys must be dates, got {day!r}")
    if backend is None:
        if model_id is None:
            raise InvalidInput("either model_id or backend is required")
        backend = backend_for(model_id)

    word_vectors: dict[str, list[float]] = {}
    lines = []
    for day in sorted(texts_by_date):
        seen: set[str] = set()
        word_scores: list[tuple[str, float]] = []
        for text in texts_by_date[day]:
            key = hashlib.sha256(text.encode("utf-8")).hexdigest()
            if key in seen:
                continue
            seen.add(key)
            word_scores.extend(merge_pieces(backend.score_pieces(text)))
        entries = []
        for word, saliency in select_top(word_scores, n):
            vector = word_vectors.get(word)
            if vector is None:
                vector = [float(v) for v in np.asarray(backend.encode_word(word))]
                word_vectors[word] = vector
            entries.append({"word": word, "saliency": saliency, "embedding": vector})
        obj = {"date": day.isoformat(), "articles": len(seen), "keywords": entries}
        lines.append(json.dumps(obj, allow_nan=False, separators=(",", ":")) + "\n")

    payload = "".join(lines).encode("utf-8")
    out_path = os.fspath(out_path)
    _atomic_write(out_path, payload)
    days = sorted(texts_by_date)
    manifest = ExportManifest(
        model_id=backend.model_id,
        revision=backend.revision,
        dim=backend.dim,
        pooling=backend.pooling,
        tokenizer=backend.tokenizer_version,
        date_start=days[0].isoformat(),
        date_end=days[-1].isoformat(),
        records=len(lines),
        keywords_per_day=n,
        file_sha256=hashlib.sha256(payload).hexdigest(),
    )
    manifest_path = out_path + ".manifest.json"
    _atomic_write(manifest_path, manifest.to_json().encode("utf-8"))
    return ExportResult(jsonl_path=out_path, manifest_path=manifest_path, manifest=manifest)


def _atomic_write(path: str, payload: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)
