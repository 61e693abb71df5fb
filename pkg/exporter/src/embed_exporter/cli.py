"""Command line entry point.

Reads a directory of daily article files (YYYY-MM-DD.txt, one article per
nonblank line), scores them with the requested model, and writes the
keyword JSONL next to its manifest. Exit codes: 0 ok, 2 missing input or
model, 3 invalid input.
"""

from __future__ import annotations

import argparse
import os
import sys
from datetime import date

from .errors import ExportError, InvalidInput, MissingInput
from .export import export


def read_texts_dir(path: str) -> dict[date, list[str]]:
    if not os.path.isdir(path):
        raise MissingInput(f"texts directory not found: {path}")
    texts: dict[date, list[str]] = {}
    for name in sorted(os.listdir(path)):
        if not name.endswith(".txt"):
            continue
        try:
            day = date.fromisoformat(name[:-4])
        except ValueError as exc:
            raise InvalidInput(
                f"text file names must look like YYYY-MM-DD.txt, got {name!r}"
            ) from exc
        with open(os.path.join(path, name), encoding="utf-8") as fh:
            texts[day] = [line.strip() for line in fh if line.strip()]
    if not texts:
        raise InvalidInput(f"no .txt files under {path}")
    return texts


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="embed-export",
        description="Score daily news with a sentiment model and emit keyword JSONL.",
    )
    parser.add_argument("--texts", required=True, help="directory of YYYY-MM-DD.txt files")
    parser.add_argument("--out", required=True, help="output JSONL path")
    parser.add_argument(
        "--model-id",
        required=True,
        help="transformer checkpoint reference, or stub:SEED[:DIM] for the offline stub",
    )
    parser.add_argument("--revision", default=None, help="pin a checkpoint revision")
    parser.add_argument("--n", type=int, default=17, help="keywords per day (default 17)")
    args = parser.parse_args(argv)

    try:
        texts = read_texts_dir(args.texts)
        from .backends import backend_for

        backend = backend_for(args.model_id, revision=args.revision)
        result = export(texts, n=args.n, out_path=args.out, backend=backend)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, MissingInput) else 3
    print(
        f"wrote {result.manifest.records} records to {result.jsonl_path} "
        f"(model {result.manifest.model_id}, dim {result.manifest.dim}); "
        f"manifest at {result.manifest_path}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
