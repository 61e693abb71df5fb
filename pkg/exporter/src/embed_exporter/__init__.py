"""Keyword exporter: transformer saliencies and embeddings to JSONL."""

from .backends import LinearStubBackend, TransformerBackend, backend_for
from .errors import ExportError, InvalidInput, MissingInput
from .export import ExportManifest, ExportResult, export
from .saliency import ScoredPiece, merge_pieces, select_top

__all__ = [
    "ExportError",
    "ExportManifest",
    "ExportResult",
    "InvalidInput",
    "LinearStubBackend",
    "MissingInput",
    "ScoredPiece",
    "TransformerBackend",
    "backend_for",
    "export",
    "merge_pieces",
    "select_top",
]
