"""Linear-chain CRF tagger with linear emissions over token features.

Supports two objectives: "multiple" (the full in-domain BIO tag set) and
"binary" (O vs ENT, all non-O tags collapsed). Emission scores are linear
in the per-token feature vectors, so the likelihood is concave and
training is deterministic given the shuffle seed. All chain quantities are
computed in log-space with max-shifted log-sum-exp.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import CorpusSplit, SlotSchema
from .features import TokenFeatureMatrix
from .metrics import span_f1

NSDM_MAGIC = b"NSDM"
NSDM_VERSION = 1

OBJECTIVES = ("binary", "multiple")
BINARY_TAGS = ("O", "ENT")


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TaggerModel:
    objective: str
    tags: tuple[str, ...]
    W: np.ndarray  # (T, d) emission weights
    b: np.ndarray  # (T,) emission bias
    A: np.ndarray  # (T, T); A[i, j] scores the transition i -> j
    feature_desc: str = ""

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if len(self.tags) < 2:
            raise ValueError("need at least 2 tags")
        T, d = self.W.shape
        if T != len(self.tags) or self.b.shape != (T,) or self.A.shape != (T, T):
            raise DimensionMismatch("parameter shapes disagree with the tag set")
        for arr in (self.W, self.b, self.A):
            if not np.isfinite(arr).all():
                raise ValueError("non-finite parameter")

    @property
    def dim(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class Gradients:
    W: np.ndarray
    b: np.ndarray
    A: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.max_epochs, self.l2) < 0:
            raise ValueError("config values must be nonnegative")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be >= 1")


def tag_set_for(objective: str, schema: SlotSchema) -> tuple[str, ...]:
    if objective == "binary":
        return BINARY_TAGS
    return schema.tag_vocab


def to_binary_tag(tag: str) -> str:
    return "O" if tag == "O" else "ENT"


def gold_indices(tags: Sequence[str], model_tags: tuple[str, ...], objective: str) -> np.ndarray:
    """Map gold tag strings to model tag indices (binary collapses non-O)."""
    index = {t: i for i, t in enumerate(model_tags)}
    mapped = [to_binary_tag(t) if objective == "binary" else t for t in tags]
    try:
        return np.array([index[t] for t in mapped], dtype=np.intp)
    except KeyError as e:
        raise DimensionMismatch(f"tag {e.args[0]!r} not in the model tag set") from None


def _lse_inplace(M: np.ndarray, axis: int) -> np.ndarray:
    """Max-shifted log-sum-exp over one axis, consuming M as scratch."""
    m = M.max(axis=axis)
    np.subtract(M, np.expand_dims(m, axis), out=M)
    np.exp(M, out=M)
    s = M.sum(axis=axis)
    np.log(s, out=s)
    s += m
    return s


def _emissions(
    model: TaggerModel, mats: Sequence[TokenFeatureMatrix], dtype=np.float64
) -> list[np.ndarray]:
    """Per-utterance emission tables via one stacked matrix product."""
    for m in mats:
        if m.dim != model.dim:
            raise DimensionMismatch(f"feature dim {m.dim} != model dim {model.dim}")
    if len(mats) == 1:
        X = mats[0].vectors
    elif sp.issparse(mats[0].vectors):
        X = sp.vstack([m.vectors for m in mats], format="csr")
    else:
        X = np.concatenate([m.vectors for m in mats], axis=0)
    W = model.W.astype(dtype, copy=False)
    stacked = np.asarray(X @ W.T, dtype=dtype) + model.b.astype(dtype, copy=False)
    out = []
    pos = 0
    for m in mats:
        out.append(stacked[pos : pos + m.n_tokens])
        pos += m.n_tokens
    return out


def _pad(emissions: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([e.shape[0] for e in emissions])
    B, L, T = len(emissions), int(lengths.max()), emissions[0].shape[1]
    E = np.zeros((B, L, T), dtype=emissions[0].dtype)
    for i, e in enumerate(emissions):
        E[i, : e.shape[0]] = e
    return E, lengths


def _forward(E: np.ndarray, lengths: np.ndarray, A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-position forward scores; inactive steps carry the last value so
    the final column always holds each sequence's last alpha."""
    B, L, T = E.shape
    alphas = np.empty_like(E)
    alphas[:, 0] = E[:, 0]
    scratch = np.empty((B, T, T), dtype=E.dtype)
    for t in range(1, L):
        prev = alphas[:, t - 1]
        np.add(prev[:, :, None], A[None], out=scratch)
        nxt = _lse_inplace(scratch, axis=1)
        nxt += E[:, t]
        active = (t < lengths)[:, None]
        alphas[:, t] = np.where(active, nxt, prev)
    last = alphas[:, -1]
    m = last.max(axis=1)
    logZ = m + np.log(np.exp(last - m[:, None]).sum(axis=1))
    return alphas, logZ


def _backward(E: np.ndarray, lengths: np.ndarray, A: np.ndarray) -> np.ndarray:
    B, L, T = E.shape
    # run the recursion on end-aligned reversed sequences
    rev_idx = np.clip(lengths[:, None] - 1 - np.arange(L)[None, :], 0, None)
    Erev = np.take_along_axis(E, rev_idx[:, :, None], axis=1)
    brev = np.zeros_like(E)
    scratch = np.empty((B, T, T), dtype=E.dtype)
    for s in range(1, L):
        term = Erev[:, s - 1] + brev[:, s - 1]
        np.add(A[None], term[:, None, :], out=scratch)
        nxt = _lse_inplace(scratch, axis=2)
        active = (s < lengths)[:, None]
        brev[:, s] = np.where(active, nxt, brev[:, s - 1])
    return np.take_along_axis(brev, rev_idx[:, :, None], axis=1)


def _path_scores(E: np.ndarray, lengths: np.ndarray, A: np.ndarray, gold: np.ndarray) -> np.ndarray:
    B, L, T = E.shape
    valid = np.arange(L)[None, :] < lengths[:, None]
    g = np.where(valid, gold, 0)
    emit = np.take_along_axis(E, g[:, :, None], axis=2)[:, :, 0]
    scores = np.where(valid, emit, 0.0).sum(axis=1)
    if L > 1:
        trans_valid = valid[:, 1:]
        trans = A[g[:, :-1], g[:, 1:]]
        scores += np.where(trans_valid, trans, 0.0).sum(axis=1)
    return scores


def _batch_ll_and_grad(
    model: TaggerModel,
    mats: Sequence[TokenFeatureMatrix],
    gold_list: Sequence[np.ndarray],
    dtype=np.float64,
) -> tuple[np.ndarray, Gradients]:
    """Log-likelihood per utterance and the summed parameter gradient.

    dtype float32 halves the chain-math cost for training; the public
    single-utterance entry points keep float64 for oracle-grade accuracy.
    """
    E_list = _emissions(model, mats, dtype=dtype)
    E, lengths = _pad(E_list)
    B, L, T = E.shape
    A = model.A.astype(dtype, copy=False)
    gold = np.zeros((B, L), dtype=np.intp)
    for i, g in enumerate(gold_list):
        if len(g) != lengths[i]:
            raise DimensionMismatch(
                f"utterance {i}: {len(g)} gold tags for {lengths[i]} tokens"
            )
        gold[i, : len(g)] = g

    alphas, logZ = _forward(E, lengths, A)
    betas = _backward(E, lengths, A)
    ll = _path_scores(E, lengths, A, gold) - logZ

    valid = np.arange(L)[None, :] < lengths[:, None]
    log_gamma = alphas + betas - logZ[:, None, None]
    log_gamma[~valid] = -np.inf  # padded positions hold garbage
    g_emit = np.exp(log_gamma)
    np.negative(g_emit, out=g_emit)
    np.add.at(
        g_emit,
        (np.arange(B)[:, None], np.arange(L)[None, :], gold),
        valid.astype(dtype),
    )

    # dW via one stacked sparse/dense product over the real token rows
    rows = [g_emit[i, : lengths[i]] for i in range(B)]
    G = np.concatenate(rows, axis=0)
    X = (
        sp.vstack([m.vectors for m in mats], format="csr")
        if sp.issparse(mats[0].vectors)
        else np.concatenate([m.vectors for m in mats], axis=0)
    )
    dW = np.asarray((X.T @ G).T, dtype=np.float64)
    db = G.sum(axis=0, dtype=np.float64)

    dA = np.zeros((T, T))
    np.add.at(
        dA,
        (gold[:, :-1][valid[:, 1:]], gold[:, 1:][valid[:, 1:]]),
        1.0,
    )
    # expected transition counts, accumulated with one scratch buffer;
    # true pair log-probabilities are <= 0, so the clamp only sanitizes
    # garbage at padded positions before their masked-out exp
    scratch = np.empty((B, T, T), dtype=dtype)
    right = betas + E  # beta_t + e_t, reused per step
    active_f = valid.astype(dtype)
    for t in range(1, L):
        if not valid[:, t].any():
            break
        np.add(alphas[:, t - 1, :, None], A[None], out=scratch)
        scratch += (right[:, t] - logZ[:, None])[:, None, :]
        np.minimum(scratch, 30.0, out=scratch)
        np.exp(scratch, out=scratch)
        dA -= np.einsum("bij,b->ij", scratch, active_f[:, t])
    return ll, Gradients(dW, db, dA)


def log_likelihood_and_grad(
    model: TaggerModel, features: TokenFeatureMatrix, tags: np.ndarray | Sequence[int]
) -> tuple[float, Gradients]:
    """log p(tags | features) and its gradient for one utterance."""
    gold = np.asarray(tags, dtype=np.intp)
    if gold.min(initial=0) < 0 or gold.max(initial=0) >= len(model.tags):
        raise DimensionMismatch("gold tag index out of range")
    ll, grad = _batch_ll_and_grad(model, [features], [gold])
    return float(ll[0]), grad


def viterbi_decode(model: TaggerModel, features: TokenFeatureMatrix) -> list[str]:
    """Best-scoring tag path; ties break toward the lowest tag index."""
    e = _emissions(model, [features])[0]
    n, T = e.shape
    delta = e[0]
    back = np.zeros((n, T), dtype=np.intp)
    for t in range(1, n):
        cand = delta[:, None] + model.A
        back[t] = cand.argmax(axis=0)  # argmax returns the lowest index on ties
        delta = e[t] + cand.max(axis=0)
    path = [int(delta.argmax())]
    for t in range(n - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    return [model.tags[i] for i in path]


def posterior_marginals(model: TaggerModel, features: TokenFeatureMatrix) -> np.ndarray:
    """Per-token posterior tag probabilities via forward-backward."""
    e = _emissions(model, [features])[0]
    E, lengths = _pad([e])
    alphas, logZ = _forward(E, lengths, model.A)
    betas = _backward(E, lengths, model.A)
    return np.exp(alphas[0] + betas[0] - logZ[0])


def _masked_for_scoring(
    pred: list[list[str]], gold: list[Sequence[str]]
) -> tuple[list[list[str]], list[list[str]]]:
    """NS positions are excluded from in-domain scoring: both sides become O."""
    mp, mg = [], []
    for pseq, gseq in zip(pred, gold):
        keep = [g != "NS" for g in gseq]
        mp.append([p if k else "O" for p, k in zip(pseq, keep)])
        mg.append([g if k else "O" for g, k in zip(gseq, keep)])
    return mp, mg


def in_domain_span_f1(
    model: TaggerModel,
    split: CorpusSplit,
    feats: Sequence[TokenFeatureMatrix],
) -> float:
    """Span F1 of the model on a split, with gold-NS positions masked out.

    Binary models are scored against the collapsed O/ENT tags, where
    contiguous ENT runs form spans."""
    pred = [viterbi_decode(model, f) for f in feats]
    if model.objective == "binary":
        gold = [
            ["NS" if t == "NS" else to_binary_tag(t) for t in u.tags]
            for u in split.utterances
        ]
    else:
        gold = [list(u.tags) for u in split.utterances]
    mp, mg = _masked_for_scoring(pred, gold)
    return span_f1(mp, mg).f1


def train(
    objective: str,
    schema: SlotSchema,
    train_split: CorpusSplit,
    train_feats: Sequence[TokenFeatureMatrix],
    val_split: CorpusSplit,
    val_feats: Sequence[TokenFeatureMatrix],
    cfg: TrainConfig,
    feature_desc: str = "",
) -> TaggerModel:
    """Mini-batch gradient ascent on the mean log-likelihood minus an L2
    penalty, keeping the parameters with the best in-domain val span F1 and
    stopping after `patience` epochs without improvement.

    Deterministic given cfg.seed: zero initialization (the objective is
    concave, so the start point only affects the path, not the optimum) and
    a fixed shuffle order. Batches are length-bucketed to bound padding,
    and the chain math runs in float32 (ample for gradient steps; the
    public per-utterance operations stay float64).
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    if not train_split.utterances:
        raise ValueError("empty train split")
    if len(train_feats) != len(train_split.utterances):
        raise DimensionMismatch("features not aligned with the train split")

    tags = tag_set_for(objective, schema)
    d = train_feats[0].dim
    model = TaggerModel(
        objective, tags, np.zeros((len(tags), d)), np.zeros(len(tags)),
        np.zeros((len(tags), len(tags))), feature_desc,
    )
    gold = [gold_indices(u.tags, tags, objective) for u in train_split.utterances]

    rng = np.random.default_rng(cfg.seed)
    n = len(train_split.utterances)
    best = (-np.inf, model)
    epochs_since_best = 0

    for _epoch in range(cfg.max_epochs):
        perm = rng.permutation(n)
        # stable length bucketing on top of the shuffle keeps batches dense
        # while preserving seed determinism
        perm = perm[np.argsort([len(gold[i]) for i in perm], kind="stable")]
        W, b, A = model.W.copy(), model.b.copy(), model.A.copy()
        # `cur` aliases the arrays updated in place below
        cur = TaggerModel(objective, tags, W, b, A, feature_desc)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            _, grad = _batch_ll_and_grad(
                cur,
                [train_feats[i] for i in idx],
                [gold[i] for i in idx],
                dtype=np.float32,
            )
            k = len(idx)
            W += cfg.learning_rate * (grad.W / k - cfg.l2 * W)
            b += cfg.learning_rate * (grad.b / k)
            A += cfg.learning_rate * (grad.A / k - cfg.l2 * A)
        model = cur

        f1 = in_domain_span_f1(model, val_split, val_feats)
        if f1 > best[0]:
            best = (f1, model)
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= cfg.patience:
                break
    return best[1]


def save_model(model: TaggerModel, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(NSDM_MAGIC)
        fh.write(struct.pack("<IBII", NSDM_VERSION, OBJECTIVES.index(model.objective),
                             len(model.tags), model.dim))

        def write_str(s: str):
            raw = s.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)

        for tag in model.tags:
            write_str(tag)
        write_str(model.feature_desc)
        for arr in (model.W, model.b, model.A):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path: str | Path) -> TaggerModel:
    data = Path(path).read_bytes()
    if data[:4] != NSDM_MAGIC:
        raise ValueError(f"{path}: not an NSDM model file")
    version, obj_idx, T, d = struct.unpack_from("<IBII", data, 4)
    if version != NSDM_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    offset = 4 + struct.calcsize("<IBII")

    def read_str() -> str:
        nonlocal offset
        (ln,) = struct.unpack_from("<H", data, offset)
        offset += 2
        s = data[offset : offset + ln].decode("utf-8")
        offset += ln
        return s

    tags = tuple(read_str() for _ in range(T))
    feature_desc = read_str()

    def read_arr(shape: tuple[int, ...]) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += 8 * count
        return arr.astype(np.float64)

    W = read_arr((T, d))
    b = read_arr((T,))
    A = read_arr((T, T))
    return TaggerModel(OBJECTIVES[obj_idx], tags, W, b, A, feature_desc)
