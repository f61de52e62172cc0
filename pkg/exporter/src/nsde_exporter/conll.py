"""Minimal reader for the two-column token/tag corpus format."""

from __future__ import annotations

from pathlib import Path


def read_corpus(path: str | Path) -> list[list[str]]:
    """Token sequences from a 'token tag' per line, blank-line separated file."""
    utterances: list[list[str]] = []
    current: list[str] = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        fields = line.split()
        if not fields:
            if current:
                utterances.append(current)
                current = []
            continue
        if len(fields) != 2:
            raise ValueError(f"{path}:{line_no}: expected 'token tag', got {line!r}")
        current.append(fields[0])
    if current:
        utterances.append(current)
    if not utterances:
        raise ValueError(f"{path}: empty corpus")
    return utterances
