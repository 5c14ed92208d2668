"""Frozen text embedder: deterministic signed feature hashing to unit vectors.

Nothing in this module is trainable. The same config and text always produce the
same vector, on any machine, which is what lets training treat text targets as
fixed anchors.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class EmbedError(Exception):
    pass


class EmptyText(EmbedError):
    def __init__(self, owner: str = ""):
        self.owner = owner
        super().__init__("text has no tokens" + (f" (owner {owner})" if owner else ""))


class ZeroVector(EmbedError):
    def __init__(self, text: str):
        super().__init__(f"signed hash buckets cancelled exactly for {text!r}")


@dataclass(frozen=True)
class HashEmbedderConfig:
    d: int = 32
    hash_seed: int = 2024

    def __post_init__(self):
        if self.d < 8:
            raise ValueError("embedding dimension must be >= 8")


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric runs; everything else is a separator."""
    return _TOKEN_RE.findall(text.lower())


def _token_bucket_sign(cfg: HashEmbedderConfig, token: str) -> tuple[int, float]:
    key = cfg.hash_seed.to_bytes(8, "big", signed=True)
    digest = hashlib.blake2b(token.encode("utf-8"), key=key, digest_size=9).digest()
    bucket = int.from_bytes(digest[:8], "big") % cfg.d
    sign = 1.0 if digest[8] & 1 else -1.0
    return bucket, sign


def embed_text(cfg: HashEmbedderConfig, text: str) -> np.ndarray:
    """Hash each token to a signed bucket, accumulate, L2-normalize."""
    tokens = tokenize(text)
    if not tokens:
        raise EmptyText()
    vec = np.zeros(cfg.d, dtype=np.float64)
    for tok in tokens:
        bucket, sign = _token_bucket_sign(cfg, tok)
        vec[bucket] += sign
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise ZeroVector(text)
    return vec / norm


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


class EmbeddingTable:
    """Cache mapping every corpus text to its frozen embedding."""

    def __init__(self, cfg: HashEmbedderConfig):
        self.cfg = cfg
        self._vectors: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, text: str) -> bool:
        return text in self._vectors

    def add(self, text: str, owner: str = "") -> np.ndarray:
        vec = self._vectors.get(text)
        if vec is None:
            try:
                vec = embed_text(self.cfg, text)
            except EmptyText as exc:
                raise EmptyText(owner) from exc
            self._vectors[text] = vec
        return vec

    def vector(self, text: str) -> np.ndarray:
        vec = self._vectors.get(text)
        if vec is None:
            vec = self.add(text)
        return vec

    def digest(self) -> str:
        """Stable hash over the full table; training must never change it."""
        h = hashlib.sha256()
        for text in sorted(self._vectors):
            h.update(text_hash(text).encode())
            h.update(self._vectors[text].tobytes())
        return h.hexdigest()

    def save(self, path: str | Path) -> None:
        rows = sorted((text_hash(t), v) for t, v in self._vectors.items())
        with open(path, "w", encoding="utf-8") as fh:
            for th, vec in rows:
                fh.write(json.dumps({"text_hash": th, "vector": vec.tolist()}) + "\n")


def embed_corpus(cfg: HashEmbedderConfig, corpus) -> EmbeddingTable:
    """Embed every text field present in the corpus, deduplicated by text."""
    table = EmbeddingTable(cfg)
    for owner, text in corpus.all_texts():
        table.add(text, owner=owner)
    return table
