"""Pluggable text-to-vector encoding.

The default encoder hashes tokens with 64-bit FNV-1a into signed one-hot
vectors, giving a deterministic, dependency-free stand-in for a pretrained
sentence encoder. Precomputed embeddings from a real encoder can be supplied
through a CSV file instead; both produce the same ``TokenEmbeddings`` shape.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError
from .numeric import fnv1a64

__all__ = [
    "TextRecord",
    "TokenEmbeddings",
    "EncoderConfig",
    "tokenize",
    "encode_hashed",
    "load_embedding_file",
    "encode",
]

_SIGN_BIT = 1 << 63


@dataclass(frozen=True)
class TextRecord:
    """One piece of descriptive text, optionally carrying a stable id."""

    text: str
    id: str | None = None


@dataclass
class TokenEmbeddings:
    """Per-token rows plus a pooled sentence vector.

    ``tokens`` is (m, d); ``pooled`` is (d,) with unit L2 norm unless the
    text produced no tokens (then it is the zero vector).
    """

    tokens: np.ndarray
    pooled: np.ndarray


@dataclass
class EncoderConfig:
    """Selects the encoding backend: ``hashed`` or ``file``."""

    mode: str = "hashed"
    dim: int = 32
    embeddings: dict[str, TokenEmbeddings] = field(default_factory=dict)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every non-alphanumeric codepoint."""
    lowered = text.lower()
    tokens = []
    current = []
    for ch in lowered:
        if ch.isalnum():
            current.append(ch)
        elif current:
            tokens.append("".join(current))
            current = []
    if current:
        tokens.append("".join(current))
    return tokens


def encode_hashed(text: str, d: int) -> TokenEmbeddings:
    """Signed feature hashing: one +-1 entry per token at FNV-1a(token) mod d."""
    if d < 2:
        raise DataError(f"hashed encoder needs dimension >= 2, got {d}")
    words = tokenize(text)
    tokens = np.zeros((len(words), d), dtype=np.float64)
    for i, word in enumerate(words):
        h = fnv1a64(word.encode("utf-8"))
        sign = -1.0 if h & _SIGN_BIT else 1.0
        tokens[i, h % d] = sign
    pooled = tokens.sum(axis=0) if len(words) else np.zeros(d, dtype=np.float64)
    norm = float(np.linalg.norm(pooled))
    if norm > 0.0:
        pooled = pooled / norm
    return TokenEmbeddings(tokens=tokens, pooled=pooled)


def load_embedding_file(path) -> dict[str, TokenEmbeddings]:
    """Read `id,v1,...,vd` lines into a lookup of precomputed vectors."""
    out: dict[str, TokenEmbeddings] = {}
    dim: int | None = None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            rec_id = row[0]
            if rec_id in out:
                raise FormatError(f"duplicate embedding id {rec_id!r} at line {lineno}")
            values = row[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise FormatError(f"embedding line {lineno} carries no values")
            elif len(values) != dim:
                raise FormatError(f"ragged embedding width at line {lineno}: expected {dim}, got {len(values)}")
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise FormatError(f"non-numeric embedding field at line {lineno}: {exc}") from exc
            out[rec_id] = TokenEmbeddings(tokens=vec[None, :].copy(), pooled=vec)
    return out


def encode(record: TextRecord, config: EncoderConfig) -> TokenEmbeddings:
    """Dispatch a record to the configured encoder backend."""
    if config.mode == "hashed":
        return encode_hashed(record.text, config.dim)
    if config.mode == "file":
        if record.id is None or record.id not in config.embeddings:
            raise DataError(f"no precomputed embedding for id {record.id!r}")
        return config.embeddings[record.id]
    raise DataError(f"unknown encoder mode {config.mode!r}")
