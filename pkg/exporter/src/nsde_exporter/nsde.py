"""NSDE binary writer.

Layout (little-endian): magic "NSDE", u32 version=1, u32 dimension,
u32 utterance count; per utterance a u32 token count followed by
token-count x dimension float32 values, row-major. The file is written to
a temporary sibling and atomically renamed, so readers never observe a
partial file."""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"NSDE"
VERSION = 1


def write_nsde(path: str | Path, matrices: Sequence[np.ndarray]) -> None:
    if not matrices:
        raise ValueError("nothing to write")
    path = Path(path)
    d = matrices[0].shape[1]
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<III", VERSION, d, len(matrices)))
            for m in matrices:
                if m.ndim != 2 or m.shape[1] != d:
                    raise ValueError(f"matrix shape {m.shape} inconsistent with d={d}")
                fh.write(struct.pack("<I", m.shape[0]))
                fh.write(np.ascontiguousarray(m, dtype="<f4").tobytes())
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def read_nsde(path: str | Path) -> list[np.ndarray]:
    """Reader used for self-checks; the tagging toolkit has its own."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not an NSDE file")
    version, d, n = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    offset = 16
    out = []
    for _ in range(n):
        (tokens,) = struct.unpack_from("<I", data, offset)
        offset += 4
        arr = np.frombuffer(data, dtype="<f4", count=tokens * d, offset=offset)
        out.append(arr.reshape(tokens, d).copy())
        offset += 4 * tokens * d
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes")
    return out
