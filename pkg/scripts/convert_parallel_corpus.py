#!/usr/bin/env python3
"""Convert parallel seq.in/seq.out slot-filling files to two-column CoNLL.

The widely used Snips/ATIS distributions ship each split as two aligned
files: seq.in (space-separated tokens) and seq.out (space-separated BIO
tags). This writes the "token tag" one-pair-per-line format used by the
toolkit, with a blank line between utterances.

Usage:
    python scripts/convert_parallel_corpus.py SRC_DIR OUT_DIR

SRC_DIR must contain train/ valid/ test/ subdirectories, each with
seq.in and seq.out.
"""

import argparse
import sys
from pathlib import Path


def convert_split(split_dir: Path, out_file: Path) -> int:
    tokens_lines = (split_dir / "seq.in").read_text(encoding="utf-8").splitlines()
    tags_lines = (split_dir / "seq.out").read_text(encoding="utf-8").splitlines()
    if len(tokens_lines) != len(tags_lines):
        sys.exit(f"{split_dir}: seq.in has {len(tokens_lines)} lines, seq.out {len(tags_lines)}")
    blocks = []
    for i, (tok_line, tag_line) in enumerate(zip(tokens_lines, tags_lines), 1):
        toks, tags = tok_line.split(), tag_line.split()
        if len(toks) != len(tags):
            sys.exit(f"{split_dir} line {i}: {len(toks)} tokens vs {len(tags)} tags")
        blocks.append("\n".join(f"{t} {g}" for t, g in zip(toks, tags)))
    out_file.write_text("\n\n".join(blocks) + "\n", encoding="utf-8")
    return len(blocks)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("src", type=Path, help="directory with train/ valid/ test/ splits")
    ap.add_argument("out", type=Path, help="output directory for .conll files")
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "valid", "test"):
        n = convert_split(args.src / split, args.out / f"{split}.conll")
        print(f"{split}: {n} utterances")


if __name__ == "__main__":
    main()
