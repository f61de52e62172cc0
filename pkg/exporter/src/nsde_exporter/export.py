"""Export job: corpus in, NSDE file plus provenance sidecar out."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from . import conll
from .encoder import LAYERS, POOLINGS, embed_batch, load_encoder
from .nsde import write_nsde


@dataclass(frozen=True)
class ExportJob:
    corpus: str
    encoder: str
    out: str
    pooling: str = "mean"
    layers: str = "last"
    batch_size: int = 32
    deterministic: bool = True

    def __post_init__(self):
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        if self.layers not in LAYERS:
            raise ValueError(f"layers must be one of {LAYERS}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def export(job: ExportJob) -> dict:
    """Run the encoder over the corpus and write job.out (atomically) plus
    a .meta.json sidecar. Returns the sidecar payload."""
    utterances = conll.read_corpus(job.corpus)
    encoder = load_encoder(job.encoder, deterministic=job.deterministic)

    matrices = []
    for start in range(0, len(utterances), job.batch_size):
        batch = utterances[start : start + job.batch_size]
        matrices.extend(
            embed_batch(encoder, batch, start, job.pooling, job.layers)
        )
    write_nsde(job.out, matrices)

    meta = {
        "job": asdict(job),
        "encoder_fingerprint": encoder.fingerprint,
        "hidden_size": encoder.hidden_size,
        "utterances": len(utterances),
        "tokens": int(sum(m.shape[0] for m in matrices)),
    }
    Path(str(job.out) + ".meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return meta
