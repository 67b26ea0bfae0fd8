"""Versioned parameter checkpoints.

Layout: a magic line, one JSON header line (sorted keys), then each tensor's
raw little-endian float64 payload in header order. The header records the
seed, the vocabulary hash, and arbitrary hyperparameters. Writing the same
parameters twice produces byte-identical files.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ParseError
from .nn import ParamStore

MAGIC = b"CAPGAN-CHECKPOINT 1\n"


def save_params(path, store: ParamStore, hyperparams: dict, vocab_hash: str | None = None):
    store.assert_finite()
    tensors = [{"name": name, "shape": list(p.shape)} for name, p in store.params.items()]
    header = {
        "format_version": 1,
        "seed": store.seed,
        "vocab_hash": vocab_hash,
        "hyperparams": hyperparams,
        "tensors": tensors,
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for name, _ in ((t["name"], t) for t in tensors):
            fh.write(np.ascontiguousarray(store.params[name], dtype="<f8").tobytes())


def load_params(path):
    """Returns (ParamStore, header dict)."""
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != MAGIC:
            raise ParseError(f"{path}: not a capgan checkpoint (bad magic)")
        try:
            header = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(f"{path}: unreadable checkpoint header: {exc}") from exc
        if header.get("format_version") != 1:
            raise ParseError(f"{path}: unsupported checkpoint version")
        store = ParamStore(seed=header.get("seed", 0))
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            n = int(np.prod(shape)) if shape else 1
            raw = fh.read(n * 8)
            if len(raw) != n * 8:
                raise ParseError(f"{path}: truncated payload for tensor {spec['name']!r}")
            store.add(spec["name"], np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
    store.assert_finite()
    return store, header
