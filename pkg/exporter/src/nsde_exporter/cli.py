"""Command line: nsde-export export --corpus F --encoder NAME --out F.nsde"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence

from . import __version__
from .encoder import LAYERS, POOLINGS
from .errors import ExporterError
from .export import ExportJob, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nsde-export",
        description="export contextual token embeddings as NSDE",
    )
    parser.add_argument("--version", action="version", version=f"nsde-exporter {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="embed a corpus and write an NSDE file")
    p.add_argument("--corpus", required=True, help="two-column token/tag file")
    p.add_argument("--encoder", required=True, help="hub id or local checkpoint directory")
    p.add_argument("--pooling", default="mean", choices=POOLINGS)
    p.add_argument("--layers", default="last", choices=LAYERS)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--out", required=True)
    p.add_argument("--no-deterministic", action="store_true",
                   help="allow multi-threaded inference (outputs may vary)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    job = ExportJob(
        corpus=args.corpus,
        encoder=args.encoder,
        out=args.out,
        pooling=args.pooling,
        layers=args.layers,
        batch_size=args.batch_size,
        deterministic=not args.no_deterministic,
    )
    try:
        meta = export(job)
    except (ExporterError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(json.dumps(meta, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
