"""Novel-slot-detection benchmark construction.

A benchmark fixes a set of unknown slot types, transforms the train split
so those types cannot be learned (Replace / Mask / Remove), and relabels
every unknown-type token in val/test with the unified "NS" tag while
keeping in-domain labels byte-identical. The train/val/test boundaries
themselves never change.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import (
    CorpusSplit,
    LabeledUtterance,
    SlotSchema,
    load_split,
    serialize_conll,
    vocabulary,
)
from .metrics import extract_spans

STRATEGIES = ("replace", "mask", "remove")
MASK_TOKEN = "MASK"


class BenchmarkError(Exception):
    pass


class DegenerateSchema(BenchmarkError):
    pass


class AllTrainRemoved(BenchmarkError):
    pass


class MaskCollision(BenchmarkError):
    pass


WEIGHTINGS = ("uniform", "spans")


@dataclass(frozen=True)
class NsdConfig:
    """Exactly one of proportion / explicit_unknown selects the unknown set.

    weighting "uniform" draws unknown types equiprobably; "spans" draws
    them with probability proportional to their train span counts (for
    sensitivity analysis; it skews the unknown set toward frequent types).
    """

    strategy: str
    seed: int = 0
    proportion: float | None = None
    explicit_unknown: tuple[str, ...] | None = None
    weighting: str = "uniform"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if (self.proportion is None) == (self.explicit_unknown is None):
            raise ValueError("set exactly one of proportion / explicit_unknown")
        if self.proportion is not None and not 0 < self.proportion < 1:
            raise ValueError(f"proportion must be in (0, 1), got {self.proportion}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "proportion": self.proportion,
            "explicit_unknown": list(self.explicit_unknown)
            if self.explicit_unknown is not None
            else None,
            "weighting": self.weighting,
        }


@dataclass(frozen=True)
class NsdBenchmark:
    train: CorpusSplit
    val: CorpusSplit
    test: CorpusSplit
    unknown_types: tuple[str, ...]
    in_domain_schema: SlotSchema
    config: NsdConfig
    # original (untransformed) splits; shared references, kept so that
    # statistics can count unknown slot values before NS unification.
    original_train: CorpusSplit | None = None
    original_val: CorpusSplit | None = None
    original_test: CorpusSplit | None = None


@dataclass(frozen=True)
class SplitStats:
    in_domain_slot_types: int
    unknown_slot_types: int
    queries: int
    queries_with_unknown: int
    slot_values: int
    unknown_slot_values: int


@dataclass(frozen=True)
class BenchmarkStats:
    per_split: dict[str, SplitStats]
    oov_word_percentage: float
    removed_train_fraction: float

    def to_dict(self) -> dict:
        return {
            "per_split": {name: vars(s).copy() for name, s in self.per_split.items()},
            "oov_word_percentage": self.oov_word_percentage,
            "removed_train_fraction": self.removed_train_fraction,
        }


def _tag_type(tag: str) -> str | None:
    return tag[2:] if tag.startswith(("B-", "I-")) else None


def type_span_counts(split: CorpusSplit) -> dict[str, int]:
    """Gold span (slot value) count per slot type."""
    counts: dict[str, int] = {}
    for utt in split.utterances:
        for span in extract_spans(utt.tags):
            counts[span.type] = counts.get(span.type, 0) + 1
    return counts


def select_unknown_types(
    schema: SlotSchema,
    train: CorpusSplit,
    proportion: float,
    rng: np.random.Generator | int,
    weighting: str = "uniform",
) -> set[str]:
    """Draw round(proportion * |types|) distinct types, at least one,
    without replacement; deterministic given the seed.

    The default uniform draw reproduces the published Snips-NSD-15%
    statistics (removed-query fraction, unknown slot-value share, OOV
    growth) in expectation; "spans" weights each draw by the type's train
    span count instead.
    """
    if not schema.slot_types:
        raise DegenerateSchema("cannot sample unknown types from an empty slot set")
    if not 0 < proportion < 1:
        raise ValueError(f"proportion must be in (0, 1), got {proportion}")
    if weighting not in WEIGHTINGS:
        raise ValueError(f"weighting must be one of {WEIGHTINGS}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)

    k = max(1, int(np.floor(proportion * len(schema.slot_types) + 0.5)))
    remaining = list(schema.slot_types)
    if weighting == "spans":
        counts = type_span_counts(train)
        weights = np.array([counts.get(t, 0) for t in remaining], dtype=float)
        if weights.sum() <= 0:
            weights[:] = 1.0
    else:
        weights = np.ones(len(remaining))

    chosen: set[str] = set()
    for _ in range(k):
        probs = weights / weights.sum()
        idx = int(rng.choice(len(remaining), p=probs))
        chosen.add(remaining.pop(idx))
        weights = np.delete(weights, idx)
    return chosen


def apply_train_strategy(
    train: CorpusSplit, unknown: set[str], strategy: str
) -> CorpusSplit:
    """Replace: unknown-span tags become O. Mask: additionally substitute
    the MASK token. Remove: drop every utterance touching an unknown type."""
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    if strategy == "mask":
        for utt in train.utterances:
            if MASK_TOKEN in utt.tokens:
                raise MaskCollision(
                    f"train split already contains the reserved token {MASK_TOKEN!r}"
                )

    out: list[LabeledUtterance] = []
    for utt in train.utterances:
        hit = [_tag_type(tag) in unknown for tag in utt.tags]
        if not any(hit):
            out.append(utt)
            continue
        if strategy == "remove":
            continue
        tags = tuple("O" if h else tag for h, tag in zip(hit, utt.tags))
        if strategy == "mask":
            tokens = tuple(MASK_TOKEN if h else tok for h, tok in zip(hit, utt.tokens))
        else:
            tokens = utt.tokens
        out.append(LabeledUtterance(tokens, tags))
    return CorpusSplit(train.name, tuple(out))


def relabel_eval_split(split: CorpusSplit, unknown: set[str]) -> CorpusSplit:
    """Unify every unknown-type token as "NS"; in-domain tags unchanged."""
    out = []
    for utt in split.utterances:
        if any(_tag_type(tag) in unknown for tag in utt.tags):
            tags = tuple(
                "NS" if _tag_type(tag) in unknown else tag for tag in utt.tags
            )
            out.append(LabeledUtterance(utt.tokens, tags))
        else:
            out.append(utt)
    return CorpusSplit(split.name, tuple(out))


def build_benchmark(
    train: CorpusSplit,
    val: CorpusSplit,
    test: CorpusSplit,
    schema: SlotSchema,
    config: NsdConfig,
) -> NsdBenchmark:
    if config.explicit_unknown is not None:
        bad = set(config.explicit_unknown) - set(schema.slot_types)
        if bad:
            raise ValueError(f"explicit unknown types not in schema: {sorted(bad)}")
        unknown = set(config.explicit_unknown)
    else:
        unknown = select_unknown_types(
            schema, train, config.proportion,
            np.random.default_rng(config.seed), config.weighting,
        )

    new_train = apply_train_strategy(train, unknown, config.strategy)
    if not new_train.utterances:
        raise AllTrainRemoved(
            f"strategy {config.strategy!r} removed all {len(train.utterances)} train utterances"
        )
    return NsdBenchmark(
        train=new_train,
        val=relabel_eval_split(val, unknown),
        test=relabel_eval_split(test, unknown),
        unknown_types=tuple(sorted(unknown)),
        in_domain_schema=schema.without(unknown),
        config=config,
        original_train=train,
        original_val=val,
        original_test=test,
    )


def _split_stats(
    current: CorpusSplit,
    original: CorpusSplit | None,
    unknown: set[str],
    n_in_domain: int,
) -> SplitStats:
    queries = len(current.utterances)
    with_unknown = sum(
        1 for utt in current.utterances if any(t == "NS" for t in utt.tags)
    )
    if original is not None and current.name != "train":
        # count unknown slot values on the original tags, before adjacent
        # unknown spans were merged by NS unification
        unknown_values = sum(
            1
            for utt in original.utterances
            for span in extract_spans(utt.tags)
            if span.type in unknown
        )
        in_domain_values = sum(
            1
            for utt in current.utterances
            for span in extract_spans(utt.tags)
            if span.type != "NS"
        )
        slot_values = in_domain_values + unknown_values
    else:
        unknown_values = 0
        slot_values = sum(
            len(extract_spans(utt.tags)) for utt in current.utterances
        )
    return SplitStats(
        in_domain_slot_types=n_in_domain,
        unknown_slot_types=len(unknown),
        queries=queries,
        queries_with_unknown=with_unknown,
        slot_values=slot_values,
        unknown_slot_values=unknown_values,
    )


def benchmark_stats(b: NsdBenchmark, *, fold_digits: bool = True) -> BenchmarkStats:
    if b.original_val is None or b.original_test is None or b.original_train is None:
        raise ValueError("benchmark was loaded without its original splits")
    unknown = set(b.unknown_types)
    n_ind = len(b.in_domain_schema.slot_types)
    vocab = vocabulary(b.train, fold_digits=fold_digits)
    test_words = [
        ("0" if fold_digits and tok.isdigit() else tok)
        for utt in b.test.utterances
        for tok in utt.tokens
    ]
    oov = sum(1 for w in test_words if w not in vocab)
    removed = (
        1.0 - len(b.train.utterances) / len(b.original_train.utterances)
        if b.config.strategy == "remove"
        else 0.0
    )
    return BenchmarkStats(
        per_split={
            "train": _split_stats(b.train, b.original_train, unknown, n_ind),
            "val": _split_stats(b.val, b.original_val, unknown, n_ind),
            "test": _split_stats(b.test, b.original_test, unknown, n_ind),
        },
        oov_word_percentage=100.0 * oov / len(test_words) if test_words else 0.0,
        removed_train_fraction=removed,
    )


def write_benchmark(b: NsdBenchmark, out_dir: str | Path, *, force: bool = False) -> None:
    """Write train/val/test CoNLL files plus benchmark.json."""
    out = Path(out_dir)
    marker = out / "benchmark.json"
    if marker.exists() and not force:
        raise FileExistsError(f"{marker} exists; pass force=True to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    for split in (b.train, b.val, b.test):
        (out / f"{split.name}.conll").write_text(
            serialize_conll(split.utterances), encoding="utf-8"
        )
    payload = {
        "config": b.config.to_dict(),
        "unknown_types": list(b.unknown_types),
        "in_domain_slot_types": list(b.in_domain_schema.slot_types),
        "stats": benchmark_stats(b).to_dict(),
    }
    marker.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_benchmark(bench_dir: str | Path) -> NsdBenchmark:
    """Load a written benchmark. The files are already canonical (any
    lowercasing happened when the original corpus was parsed, and the MASK
    sentinel must survive verbatim), so tokens are read back unchanged.
    Original splits are not recoverable, so benchmark_stats() is
    unavailable on the result (stats live in benchmark.json)."""
    bench = Path(bench_dir)
    payload = json.loads((bench / "benchmark.json").read_text(encoding="utf-8"))
    cfg = payload["config"]
    config = NsdConfig(
        strategy=cfg["strategy"],
        seed=cfg["seed"],
        proportion=cfg["proportion"],
        explicit_unknown=tuple(cfg["explicit_unknown"])
        if cfg["explicit_unknown"] is not None
        else None,
        weighting=cfg.get("weighting", "uniform"),
    )
    return NsdBenchmark(
        train=load_split(bench / "train.conll", "train", lowercase=False),
        val=load_split(bench / "val.conll", "val", lowercase=False),
        test=load_split(bench / "test.conll", "test", lowercase=False),
        unknown_types=tuple(payload["unknown_types"]),
        in_domain_schema=SlotSchema(tuple(payload["in_domain_slot_types"])),
        config=config,
    )
