"""Parsing, validation, and statistics for CoNLL-style slot-filling corpora.

The on-disk format is UTF-8 text with one "token tag" pair per nonempty
line (any run of spaces or tabs separates the two fields) and one or more
blank lines between utterances.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, NamedTuple

TAG_RE = re.compile(r"^(?:O|NS|[BI]-\S+)$")

SplitName = Literal["train", "val", "test"]


class CorpusError(Exception):
    """Base class for corpus-format errors."""


class MalformedLine(CorpusError):
    def __init__(self, line_no: int, line: str):
        super().__init__(f"line {line_no}: expected 'token tag', got {line!r}")
        self.line_no = line_no


class IllegalTag(CorpusError):
    def __init__(self, line_no: int, tag: str):
        super().__init__(f"line {line_no}: tag {tag!r} is not O, NS, B-<type> or I-<type>")
        self.line_no = line_no
        self.tag = tag


class EmptyCorpus(CorpusError):
    def __init__(self, what: str = "corpus"):
        super().__init__(f"{what} contains no utterances")


@dataclass(frozen=True)
class LabeledUtterance:
    """A tokenized utterance with one BIO (or NS) tag per token."""

    tokens: tuple[str, ...]
    tags: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.tags) or not self.tokens:
            raise ValueError(
                f"need equal, nonzero token/tag counts, got {len(self.tokens)}/{len(self.tags)}"
            )
        for tok in self.tokens:
            if not tok or any(c.isspace() for c in tok):
                raise ValueError(f"token {tok!r} is empty or contains whitespace")
        for tag in self.tags:
            if not TAG_RE.match(tag):
                raise ValueError(f"tag {tag!r} is not O, NS, B-<type> or I-<type>")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class SlotSchema:
    """The in-domain slot inventory and its derived BIO tag vocabulary."""

    slot_types: tuple[str, ...]
    tag_vocab: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        if len(set(self.slot_types)) != len(self.slot_types):
            raise ValueError("duplicate slot types")
        if "NS" in self.slot_types:
            raise ValueError("'NS' is reserved and cannot be a slot type")
        vocab = ("O",) + tuple(
            f"{prefix}-{t}" for t in self.slot_types for prefix in ("B", "I")
        )
        object.__setattr__(self, "tag_vocab", vocab)

    def without(self, removed: Iterable[str]) -> "SlotSchema":
        removed = set(removed)
        return SlotSchema(tuple(t for t in self.slot_types if t not in removed))


@dataclass(frozen=True)
class CorpusSplit:
    name: SplitName
    utterances: tuple[LabeledUtterance, ...]

    def __post_init__(self):
        if self.name not in ("train", "val", "test"):
            raise ValueError(f"split name must be train/val/test, got {self.name!r}")

    def __len__(self) -> int:
        return len(self.utterances)


@dataclass(frozen=True)
class CorpusStats:
    vocabulary_size: int
    oov_word_percentage: float
    num_slots: int
    split_sizes: dict[str, int]


class BioWarning(NamedTuple):
    index: int
    message: str


def parse_conll(text: str, *, lowercase: bool = True) -> list[LabeledUtterance]:
    """Parse two-column CoNLL text into utterances.

    Tokens are taken verbatim apart from optional lowercasing (on by
    default, matching uncased downstream encoders). Tags are never
    case-folded.
    """
    utterances: list[LabeledUtterance] = []
    tokens: list[str] = []
    tags: list[str] = []

    def flush():
        if tokens:
            utterances.append(LabeledUtterance(tuple(tokens), tuple(tags)))
            tokens.clear()
            tags.clear()

    for line_no, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            flush()
            continue
        if len(fields) != 2:
            raise MalformedLine(line_no, line)
        token, tag = fields
        if not TAG_RE.match(tag):
            raise IllegalTag(line_no, tag)
        tokens.append(token.lower() if lowercase else token)
        tags.append(tag)
    flush()

    if not utterances:
        raise EmptyCorpus()
    return utterances


def parse_conll_file(path: str | Path, *, lowercase: bool = True) -> list[LabeledUtterance]:
    return parse_conll(Path(path).read_text(encoding="utf-8"), lowercase=lowercase)


def serialize_conll(utterances: Iterable[LabeledUtterance]) -> str:
    """Render utterances in canonical form: single-space separator, one
    blank line between utterances, trailing newline."""
    blocks = [
        "\n".join(f"{tok} {tag}" for tok, tag in zip(u.tokens, u.tags))
        for u in utterances
    ]
    return "\n\n".join(blocks) + "\n"


def load_split(path: str | Path, name: SplitName, *, lowercase: bool = True) -> CorpusSplit:
    return CorpusSplit(name, tuple(parse_conll_file(path, lowercase=lowercase)))


def derive_schema(train: CorpusSplit) -> SlotSchema:
    """Slot types appearing in B-/I- tags of the train split, sorted."""
    if not train.utterances:
        raise EmptyCorpus("train split")
    types = {
        tag[2:]
        for utt in train.utterances
        for tag in utt.tags
        if tag.startswith(("B-", "I-"))
    }
    return SlotSchema(tuple(sorted(types)))


def _count_word(word: str, fold_digits: bool) -> str:
    return "0" if fold_digits and word.isdigit() else word


def vocabulary(split: CorpusSplit, *, fold_digits: bool = True) -> set[str]:
    return {
        _count_word(tok, fold_digits) for utt in split.utterances for tok in utt.tokens
    }


def compute_stats(
    train: CorpusSplit,
    val: CorpusSplit,
    test: CorpusSplit,
    *,
    fold_digits: bool = True,
) -> CorpusStats:
    """Vocabulary, OOV rate, and split sizes.

    The vocabulary contains train words only; the OOV percentage is the
    share of test word tokens absent from it. With fold_digits (default),
    all-digit tokens count as a single "0" entry, the counting policy under
    which the published Snips/ATIS vocabulary sizes (11,241 and 722) are
    reproduced exactly.
    """
    vocab = vocabulary(train, fold_digits=fold_digits)
    test_words = [
        _count_word(tok, fold_digits) for utt in test.utterances for tok in utt.tokens
    ]
    oov = sum(1 for w in test_words if w not in vocab)
    return CorpusStats(
        vocabulary_size=len(vocab),
        oov_word_percentage=100.0 * oov / len(test_words) if test_words else 0.0,
        num_slots=len(derive_schema(train).slot_types),
        split_sizes={
            "train": len(train.utterances),
            "val": len(val.utterances),
            "test": len(test.utterances),
        },
    )


def validate_bio(utt: LabeledUtterance) -> list[BioWarning]:
    """Flag orphan I- tags: I-X at sequence start, after O or NS, or after
    a different type. These stay legal; span extraction treats them as
    span starts."""
    warnings = []
    prev = "O"
    for i, tag in enumerate(utt.tags):
        if tag.startswith("I-"):
            if not (prev.startswith(("B-", "I-")) and prev[2:] == tag[2:]):
                warnings.append(
                    BioWarning(i, f"index {i}: {tag} does not continue a {tag[2:]} span")
                )
        prev = tag
    return warnings
