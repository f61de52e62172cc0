import pytest

from nsdkit.corpus import LabeledUtterance, CorpusSplit

from pathlib import Path

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def snips(data_dir):
    from nsdkit.corpus import load_split

    return (
        load_split(data_dir / "snips" / "train.conll", "train"),
        load_split(data_dir / "snips" / "valid.conll", "val"),
        load_split(data_dir / "snips" / "test.conll", "test"),
    )


@pytest.fixture(scope="session")
def atis(data_dir):
    from nsdkit.corpus import load_split

    return (
        load_split(data_dir / "atis" / "train.conll", "train"),
        load_split(data_dir / "atis" / "valid.conll", "val"),
        load_split(data_dir / "atis" / "test.conll", "test"),
    )


def utt(tokens: str, tags: str) -> LabeledUtterance:
    return LabeledUtterance(tuple(tokens.split()), tuple(tags.split()))


@pytest.fixture
def table_example() -> LabeledUtterance:
    # "play is this my world by leo arnaud" with an album and an artist span
    return utt(
        "play is this my world by leo arnaud",
        "O B-album I-album I-album I-album O B-artist I-artist",
    )


def split_of(name, *utts) -> CorpusSplit:
    return CorpusSplit(name, tuple(utts))


def synthetic_utterances(rng, n):
    """Template utterances over four slot types with disjoint vocabularies.

    Only one template mentions a place, and every function word it uses
    also occurs in place-free templates, so removing the place type leaves
    the rest of the vocabulary observed."""
    colors = ["red", "blue", "green", "violet"]
    animals = ["cat", "dog", "fox", "otter"]
    numbers = ["one", "two", "three", "four"]
    places = ["paris", "oslo", "quito", "dakar"]
    out = []
    for _ in range(n):
        c = colors[rng.integers(4)]
        a = animals[rng.integers(4)]
        m = numbers[rng.integers(4)]
        p = places[rng.integers(4)]
        kind = rng.integers(3)
        if kind == 0:
            toks, tags = ("send", "the", c, a), ("O", "O", "B-color", "B-animal")
        elif kind == 1:
            toks = ("send", m, a, "to", p)
            tags = ("O", "B-number", "B-animal", "O", "B-place")
        else:
            toks = ("my", m, c, "hat", "to", a)
            tags = ("O", "B-number", "B-color", "O", "O", "B-animal")
        out.append(LabeledUtterance(toks, tags))
    return out


def write_synthetic_corpus(dir_path, seed=0, sizes=(150, 50, 50)):
    from nsdkit.corpus import serialize_conll
    import numpy as np

    rng = np.random.default_rng(seed)
    dir_path.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, n in zip(("train", "val", "test"), sizes):
        path = dir_path / f"{name}.conll"
        path.write_text(serialize_conll(synthetic_utterances(rng, n)), encoding="utf-8")
        paths[name] = path
    return paths


@pytest.fixture(scope="session")
def synthetic_corpus(tmp_path_factory):
    return write_synthetic_corpus(tmp_path_factory.mktemp("synth"))
