"""Encoder loading and batched token embedding with subword pooling.

Loads any BERT-style pretrained checkpoint by hub id or local directory.
Checkpoints that predate fast-tokenizer serialization (vocab.txt only) get
a WordPiece tokenizer rebuilt from the vocabulary; configs without a
model_type fall back to the BERT architecture."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import AlignmentError, EncoderLoadError

POOLINGS = ("mean", "first-subword")
LAYERS = ("last", "sum-last-4")


@dataclass
class Encoder:
    name: str
    tokenizer: object
    model: torch.nn.Module
    hidden_size: int
    fingerprint: str
    max_length: int


def _resolve_snapshot(name: str) -> Path:
    if Path(name).is_dir():
        return Path(name)
    try:
        from huggingface_hub import snapshot_download

        return Path(snapshot_download(name))
    except Exception as e:
        raise EncoderLoadError(f"cannot resolve encoder {name!r}: {e}") from e


def _build_wordpiece_tokenizer(snapshot: Path):
    from tokenizers import Tokenizer
    from tokenizers.models import WordPiece
    from tokenizers.normalizers import BertNormalizer
    from tokenizers.pre_tokenizers import BertPreTokenizer
    from tokenizers.processors import TemplateProcessing
    from transformers import PreTrainedTokenizerFast

    vocab_file = snapshot / "vocab.txt"
    if not vocab_file.exists():
        raise EncoderLoadError(f"{snapshot}: no tokenizer.json and no vocab.txt")
    config = {}
    if (snapshot / "tokenizer_config.json").exists():
        config = json.loads((snapshot / "tokenizer_config.json").read_text())
    lowercase = bool(config.get("do_lower_case", True))

    tk = Tokenizer(WordPiece.from_file(str(vocab_file), unk_token="[UNK]"))
    tk.normalizer = BertNormalizer(lowercase=lowercase)
    tk.pre_tokenizer = BertPreTokenizer()
    tk.post_processor = TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B [SEP]",
        special_tokens=[
            ("[CLS]", tk.token_to_id("[CLS]")),
            ("[SEP]", tk.token_to_id("[SEP]")),
        ],
    )
    return PreTrainedTokenizerFast(
        tokenizer_object=tk,
        unk_token="[UNK]",
        cls_token="[CLS]",
        sep_token="[SEP]",
        pad_token="[PAD]",
        mask_token="[MASK]",
    )


def _load_tokenizer(snapshot: Path):
    try:
        from transformers import AutoTokenizer

        return AutoTokenizer.from_pretrained(snapshot)
    except Exception:
        return _build_wordpiece_tokenizer(snapshot)


def _load_model(snapshot: Path) -> torch.nn.Module:
    try:
        from transformers import AutoModel

        return AutoModel.from_pretrained(snapshot)
    except ValueError:
        from transformers import BertConfig, BertModel

        config = BertConfig.from_pretrained(snapshot)
        return BertModel.from_pretrained(snapshot, config=config)


def _fingerprint(snapshot: Path) -> str:
    """sha256 over the weight files, for provenance in the sidecar."""
    h = hashlib.sha256()
    weight_files = sorted(
        p for p in snapshot.iterdir()
        if p.suffix in (".bin", ".safetensors") and p.is_file()
    )
    if not weight_files:
        return "unknown"
    for p in weight_files:
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def load_encoder(name: str, deterministic: bool = True) -> Encoder:
    snapshot = _resolve_snapshot(name)
    try:
        tokenizer = _load_tokenizer(snapshot)
        model = _load_model(snapshot)
    except EncoderLoadError:
        raise
    except Exception as e:
        raise EncoderLoadError(f"cannot load encoder from {snapshot}: {e}") from e
    model.eval()
    if deterministic:
        torch.set_num_threads(1)
    return Encoder(
        name=name,
        tokenizer=tokenizer,
        model=model,
        hidden_size=int(model.config.hidden_size),
        fingerprint=_fingerprint(snapshot),
        max_length=int(getattr(model.config, "max_position_embeddings", 512)),
    )


def embed_batch(
    encoder: Encoder,
    batch: list[list[str]],
    first_index: int,
    pooling: str,
    layers: str,
) -> list[np.ndarray]:
    """One float32 (n_tokens, hidden) matrix per utterance.

    Sequence-start/end markers carry no token identity and are excluded
    from pooling; a token left with no subwords (only possible through
    truncation of an over-long utterance) aborts the export."""
    enc = encoder.tokenizer(
        batch,
        is_split_into_words=True,
        padding=True,
        truncation=True,
        max_length=encoder.max_length,
        return_tensors="pt",
    )
    with torch.no_grad():
        out = encoder.model(**enc, output_hidden_states=layers == "sum-last-4")
    if layers == "sum-last-4":
        reps = torch.stack(out.hidden_states[-4:], dim=0).sum(dim=0)
    else:
        reps = out.last_hidden_state

    results = []
    for i, tokens in enumerate(batch):
        word_ids = enc.word_ids(i)
        groups: dict[int, list[int]] = {}
        for pos, wid in enumerate(word_ids):
            if wid is not None:
                groups.setdefault(wid, []).append(pos)
        vecs = np.empty((len(tokens), encoder.hidden_size), dtype=np.float32)
        for w, token in enumerate(tokens):
            positions = groups.get(w)
            if not positions:
                raise AlignmentError(first_index + i, token, "truncated or untokenizable")
            if pooling == "mean":
                vecs[w] = reps[i, positions].mean(dim=0).numpy()
            else:
                vecs[w] = reps[i, positions[0]].numpy()
        results.append(vecs)
    return results
