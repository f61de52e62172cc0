import json

import numpy as np
import pytest

from nsdkit.benchmark import (
    AllTrainRemoved,
    DegenerateSchema,
    MaskCollision,
    NsdConfig,
    apply_train_strategy,
    benchmark_stats,
    build_benchmark,
    load_benchmark,
    relabel_eval_split,
    select_unknown_types,
    type_span_counts,
    write_benchmark,
)
from nsdkit.corpus import LabeledUtterance, SlotSchema, derive_schema

from conftest import split_of, utt


def tiny_world():
    train = split_of(
        "train",
        utt("play is this my world by leo arnaud",
            "O B-album I-album I-album I-album O B-artist I-artist"),
        utt("rate the book five", "O O B-object_name B-rating"),
        utt("play something", "O O"),
        utt("leo arnaud albums", "B-artist I-artist O"),
    )
    val = split_of(
        "val",
        utt("play is this my world by leo arnaud",
            "O B-album I-album I-album I-album O B-artist I-artist"),
    )
    test = split_of(
        "test",
        utt("play my world by leo", "O B-album I-album O B-artist"),
        utt("rate it", "O O"),
    )
    return train, val, test, derive_schema(train)


class TestConfig:
    def test_exactly_one_selector(self):
        with pytest.raises(ValueError):
            NsdConfig(strategy="remove")
        with pytest.raises(ValueError):
            NsdConfig(strategy="remove", proportion=0.1, explicit_unknown=("a",))

    def test_proportion_range(self):
        for bad in (0.0, 1.0, -0.2, 7):
            with pytest.raises(ValueError):
                NsdConfig(strategy="remove", proportion=bad)

    def test_strategy_names(self):
        with pytest.raises(ValueError):
            NsdConfig(strategy="drop", proportion=0.1)


class TestSelectUnknownTypes:
    def test_clamp_to_one(self):
        train = split_of("train", utt("x", "B-a"))
        schema = SlotSchema(("a",))
        assert select_unknown_types(schema, train, 0.5, 0) == {"a"}

    def test_degenerate_schema(self):
        with pytest.raises(DegenerateSchema):
            select_unknown_types(SlotSchema(()), split_of("train", utt("x", "O")), 0.5, 0)

    def test_count_rule(self):
        train = split_of("train", utt("a b c d", "B-t0 B-t1 B-t2 B-t3"))
        schema = derive_schema(train)
        for prop, expected in ((0.25, 1), (0.3, 1), (0.5, 2), (0.7, 3), (0.9, 4)):
            got = select_unknown_types(schema, train, prop, 0)
            assert len(got) == max(1, int(np.floor(prop * 4 + 0.5))) == expected

    def test_deterministic_given_seed(self):
        train = split_of("train", utt("a b c d", "B-t0 B-t1 B-t2 B-t3"))
        schema = derive_schema(train)
        assert select_unknown_types(schema, train, 0.5, 42) == select_unknown_types(
            schema, train, 0.5, 42
        )

    def test_span_weighted_monte_carlo(self):
        # type a has 90 train spans, type b has 10: under span weighting a
        # single draw picks a ~90% of the time
        utts = [utt("x", "B-a") for _ in range(90)] + [utt("x", "B-b") for _ in range(10)]
        train = split_of("train", *utts)
        schema = derive_schema(train)
        assert type_span_counts(train) == {"a": 90, "b": 10}
        rng = np.random.default_rng(123)
        hits = sum(
            select_unknown_types(schema, train, 0.5, rng, weighting="spans") == {"a"}
            for _ in range(10_000)
        )
        assert abs(hits / 10_000 - 0.9) < 0.03

    def test_uniform_is_unweighted(self):
        utts = [utt("x", "B-a") for _ in range(90)] + [utt("x", "B-b") for _ in range(10)]
        train = split_of("train", *utts)
        schema = derive_schema(train)
        rng = np.random.default_rng(321)
        hits = sum(
            select_unknown_types(schema, train, 0.5, rng) == {"a"} for _ in range(10_000)
        )
        assert abs(hits / 10_000 - 0.5) < 0.03


class TestTrainStrategies:
    def test_replace(self, table_example):
        out = apply_train_strategy(split_of("train", table_example), {"album"}, "replace")
        assert out.utterances[0].tokens == table_example.tokens
        assert out.utterances[0].tags == (
            "O", "O", "O", "O", "O", "O", "B-artist", "I-artist",
        )

    def test_mask(self, table_example):
        out = apply_train_strategy(split_of("train", table_example), {"album"}, "mask")
        assert out.utterances[0].tokens == (
            "play", "MASK", "MASK", "MASK", "MASK", "by", "leo", "arnaud",
        )
        assert out.utterances[0].tags == (
            "O", "O", "O", "O", "O", "O", "B-artist", "I-artist",
        )

    def test_remove(self, table_example):
        keep = utt("rate it", "O O")
        out = apply_train_strategy(split_of("train", table_example, keep), {"album"}, "remove")
        assert out.utterances == (keep,)

    def test_untouched_utterances_shared(self, table_example):
        keep = utt("rate it", "O O")
        out = apply_train_strategy(split_of("train", table_example, keep), {"album"}, "replace")
        assert out.utterances[1] is keep

    def test_mask_collision(self):
        bad = split_of("train", LabeledUtterance(("MASK",), ("O",)))
        with pytest.raises(MaskCollision):
            apply_train_strategy(bad, {"a"}, "mask")
        # other strategies tolerate the token
        apply_train_strategy(bad, {"a"}, "replace")

    def test_mask_iff_unknown_property(self):
        train, *_ = tiny_world()
        out = apply_train_strategy(train, {"album", "artist"}, "mask")
        for orig, new in zip(train.utterances, out.utterances):
            for tok, tag, new_tok in zip(orig.tokens, orig.tags, new.tokens):
                is_unknown = tag.startswith(("B-", "I-")) and tag[2:] in {"album", "artist"}
                assert (new_tok == "MASK") == is_unknown


class TestRelabel:
    def test_table1_relabeling(self, table_example):
        out = relabel_eval_split(split_of("val", table_example), {"album"})
        assert out.utterances[0].tags == (
            "O", "NS", "NS", "NS", "NS", "O", "B-artist", "I-artist",
        )
        assert out.utterances[0].tokens == table_example.tokens

    def test_empty_unknown_is_identity(self, table_example):
        split = split_of("val", table_example)
        assert relabel_eval_split(split, set()).utterances[0] is table_example

    def test_full_relabel(self):
        out = relabel_eval_split(split_of("val", utt("x y", "B-a I-a")), {"a"})
        assert out.utterances[0].tags == ("NS", "NS")

    def test_idempotent(self, table_example):
        split = split_of("val", table_example)
        once = relabel_eval_split(split, {"album"})
        twice = relabel_eval_split(once, {"album"})
        assert once.utterances == twice.utterances


class TestBuildBenchmark:
    def test_explicit_unknown_overrides_sampling(self):
        train, val, test, schema = tiny_world()
        for seed in (0, 1, 2):
            b = build_benchmark(
                train, val, test, schema,
                NsdConfig(strategy="replace", seed=seed, explicit_unknown=("object_name",)),
            )
            assert b.unknown_types == ("object_name",)

    def test_invariants(self):
        train, val, test, schema = tiny_world()
        for strategy in ("replace", "mask", "remove"):
            b = build_benchmark(
                train, val, test, schema,
                NsdConfig(strategy=strategy, seed=0, proportion=0.3),
            )
            unknown = set(b.unknown_types)
            # no train tag references an unknown type, and never NS
            for u in b.train.utterances:
                for tag in u.tags:
                    assert tag != "NS"
                    assert not (tag.startswith(("B-", "I-")) and tag[2:] in unknown)
            # eval token multisets unchanged; in-domain tags byte-identical
            for cur, orig in ((b.val, val), (b.test, test)):
                for cu, ou in zip(cur.utterances, orig.utterances):
                    assert cu.tokens == ou.tokens
                    for ct, ot in zip(cu.tags, ou.tags):
                        if ot.startswith(("B-", "I-")) and ot[2:] in unknown:
                            assert ct == "NS"
                        else:
                            assert ct == ot
            assert set(b.in_domain_schema.slot_types) == set(schema.slot_types) - unknown
            if strategy == "remove":
                assert len(b.train) <= len(train)
            else:
                assert len(b.train) == len(train)

    def test_unknown_size_rule_across_seeds(self):
        train, val, test, schema = tiny_world()
        m = len(schema.slot_types)
        for seed in range(20):
            b = build_benchmark(
                train, val, test, schema,
                NsdConfig(strategy="replace", seed=seed, proportion=0.4),
            )
            assert len(b.unknown_types) == max(1, int(np.floor(0.4 * m + 0.5)))

    def test_all_train_removed(self):
        train = split_of("train", utt("x", "B-a"))
        val = split_of("val", utt("x", "B-a"))
        test = split_of("test", utt("x", "B-a"))
        with pytest.raises(AllTrainRemoved):
            build_benchmark(
                train, val, test, derive_schema(train),
                NsdConfig(strategy="remove", explicit_unknown=("a",)),
            )

    def test_explicit_unknown_outside_schema(self):
        train, val, test, schema = tiny_world()
        with pytest.raises(ValueError):
            build_benchmark(
                train, val, test, schema,
                NsdConfig(strategy="replace", explicit_unknown=("nope",)),
            )


class TestBenchmarkStats:
    def test_counts_on_tiny_world(self):
        train, val, test, schema = tiny_world()
        b = build_benchmark(
            train, val, test, schema,
            NsdConfig(strategy="remove", explicit_unknown=("album",)),
        )
        stats = benchmark_stats(b)
        assert stats.per_split["train"].queries == 3
        assert stats.per_split["train"].queries_with_unknown == 0
        assert stats.per_split["train"].unknown_slot_values == 0
        assert stats.per_split["val"].queries_with_unknown == 1
        assert stats.per_split["val"].unknown_slot_values == 1
        assert stats.per_split["val"].slot_values == 2  # album + artist
        assert stats.per_split["test"].unknown_slot_values == 1
        assert stats.per_split["test"].in_domain_slot_types == len(schema.slot_types) - 1
        assert stats.removed_train_fraction == pytest.approx(0.25)

    def test_replace_removes_nothing(self):
        train, val, test, schema = tiny_world()
        b = build_benchmark(
            train, val, test, schema,
            NsdConfig(strategy="replace", explicit_unknown=("album",)),
        )
        assert benchmark_stats(b).removed_train_fraction == 0.0

    def test_adjacent_unknown_spans_counted_pre_merge(self):
        train = split_of("train", utt("a b c", "B-x B-y O"), utt("d", "B-z"))
        val = split_of("val", utt("a b", "B-x B-y"))
        test = split_of("test", utt("a b c", "B-x B-y B-z"))
        b = build_benchmark(
            train, val, test, derive_schema(train),
            NsdConfig(strategy="remove", explicit_unknown=("x", "y")),
        )
        # relabeled [NS, NS] merges into one NS run, but the stats count the
        # two original unknown spans
        assert b.val.utterances[0].tags == ("NS", "NS")
        stats = benchmark_stats(b)
        assert stats.per_split["val"].unknown_slot_values == 2
        assert stats.per_split["test"].slot_values == 3

    def test_loaded_benchmark_has_no_stats(self, tmp_path):
        train, val, test, schema = tiny_world()
        b = build_benchmark(
            train, val, test, schema,
            NsdConfig(strategy="replace", explicit_unknown=("album",)),
        )
        write_benchmark(b, tmp_path / "bench")
        loaded = load_benchmark(tmp_path / "bench")
        with pytest.raises(ValueError):
            benchmark_stats(loaded)


class TestWriteLoad:
    def test_round_trip(self, tmp_path):
        train, val, test, schema = tiny_world()
        b = build_benchmark(
            train, val, test, schema,
            NsdConfig(strategy="mask", seed=3, proportion=0.3),
        )
        out = tmp_path / "bench"
        write_benchmark(b, out)
        assert (out / "benchmark.json").exists()
        payload = json.loads((out / "benchmark.json").read_text())
        assert payload["unknown_types"] == list(b.unknown_types)
        assert payload["config"]["strategy"] == "mask"
        assert payload["config"]["weighting"] == "uniform"
        loaded = load_benchmark(out)
        assert loaded.train.utterances == b.train.utterances
        assert loaded.val.utterances == b.val.utterances
        assert loaded.test.utterances == b.test.utterances
        assert loaded.unknown_types == b.unknown_types
        assert loaded.in_domain_schema == b.in_domain_schema
        assert loaded.config == b.config

    def test_refuses_overwrite(self, tmp_path):
        train, val, test, schema = tiny_world()
        b = build_benchmark(
            train, val, test, schema,
            NsdConfig(strategy="replace", explicit_unknown=("album",)),
        )
        out = tmp_path / "bench"
        write_benchmark(b, out)
        with pytest.raises(FileExistsError):
            write_benchmark(b, out)
        write_benchmark(b, out, force=True)


class TestSnipsConstants:
    def test_snips_15_type_counts_and_eval_totals(self, snips):
        train, val, test = snips
        schema = derive_schema(train)
        for seed in (0, 3):
            b = build_benchmark(
                train, val, test, schema,
                NsdConfig(strategy="remove", seed=seed, proportion=0.15),
            )
            stats = benchmark_stats(b)
            assert len(b.in_domain_schema.slot_types) == 33
            assert len(b.unknown_types) == 6
            # eval slot-value totals are draw-independent: relabeling
            # preserves span counts
            assert stats.per_split["val"].slot_values == 1794
            assert stats.per_split["test"].slot_values == 1790
