"""Knowledge-enhanced sentiment branch.

A flat store of (attribute, sentiment word, polarity) triples is matched
against comments by cosine similarity of text embeddings; matched triple
embeddings are mixed into the comment embedding with weight alpha, and a
small MLP yields a 3-way polarity distribution.

Embedders are pluggable. The shipped HashEmbedder feature-hashes character
n-grams, so tests run without any model weights; a real sentence encoder
can be substituted through the same interface.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
import torch

from .features import InvariantError

POLARITIES = ("positive", "negative", "neutral")
SENTIMENT_CLASSES = ("negative", "neutral", "positive")  # MLP output order


class SkgFormatError(ValueError):
    """Malformed SKG row; carries the 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"skg line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class SentimentTriple:
    attribute: str
    sentiment_word: str
    polarity: str

    def __post_init__(self):
        if not self.attribute or not self.sentiment_word:
            raise InvariantError("attribute and sentiment_word must be non-empty")
        if self.polarity not in POLARITIES:
            raise InvariantError(f"unknown polarity {self.polarity!r}")

    @property
    def text(self) -> str:
        return f"{self.attribute} {self.sentiment_word}"


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashEmbedder:
    """Deterministic fallback embedder: character 1-3-grams feature-hashed
    into ``dim`` buckets with a hash-derived sign, then L2-normalized."""

    def __init__(self, dim: int = 64, ngram_range: tuple[int, int] = (1, 3)):
        if dim < 1:
            raise InvariantError("embedder dim must be positive")
        self.dim = dim
        self.ngram_range = ngram_range

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        lo, hi = self.ngram_range
        for n in range(lo, hi + 1):
            for i in range(max(len(text) - n + 1, 0)):
                digest = hashlib.blake2b(
                    text[i : i + n].encode("utf-8"), digest_size=8
                ).digest()
                value = int.from_bytes(digest, "little")
                sign = 1.0 if value & 1 else -1.0
                vec[(value >> 1) % self.dim] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


@dataclass
class TripleStore:
    triples: list[SentimentTriple]
    embeddings: np.ndarray  # (len(triples), e_s), order matches triples
    embedder: Embedder

    def __len__(self) -> int:
        return len(self.triples)


def build_store(triples: list[SentimentTriple], embedder: Embedder) -> TripleStore:
    embs = (
        np.stack([embedder.embed(t.text) for t in triples])
        if triples
        else np.zeros((0, embedder.dim))
    )
    return TripleStore(triples=triples, embeddings=embs, embedder=embedder)


def load_skg(path: str | Path, embedder: Embedder) -> TripleStore:
    """TSV rows ``attribute<TAB>sentiment_word<TAB>polarity``."""
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise SkgFormatError(lineno, f"expected 3 columns, got {len(cols)}")
            attribute, word, polarity = (c.strip() for c in cols)
            if polarity not in POLARITIES:
                raise SkgFormatError(lineno, f"unknown polarity {polarity!r}")
            if not attribute or not word:
                raise SkgFormatError(lineno, "empty attribute or sentiment word")
            triples.append(SentimentTriple(attribute, word, polarity))
    return build_store(triples, embedder)


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(u @ v / (nu * nv))


def match_triples(
    comment_tokens: list[str],
    store: TripleStore,
    k: int = 3,
    threshold: float = 0.35,
) -> list[tuple[SentimentTriple, float]]:
    """Top-k triples by cosine similarity to the joined comment tokens,
    keeping only matches at or above the threshold; ties keep store order."""
    if len(store) == 0:
        raise InvariantError("triple store is empty")
    query = store.embedder.embed(" ".join(comment_tokens))
    sims = [_cosine(query, emb) for emb in store.embeddings]
    order = sorted(range(len(sims)), key=lambda i: (-sims[i], i))
    picked: list[tuple[SentimentTriple, float]] = []
    seen: set[SentimentTriple] = set()
    for i in order:
        if len(picked) == k:
            break
        if sims[i] < threshold:
            break  # ranked descending: nothing below passes either
        if store.triples[i] in seen:
            continue  # duplicated store entries count once
        seen.add(store.triples[i])
        picked.append((store.triples[i], sims[i]))
    return picked


@dataclass
class SentimentHeadParams:
    alpha_kg: torch.Tensor  # scalar in [0, 1]
    w1: torch.Tensor  # (e_s, hidden)
    b1: torch.Tensor  # (hidden,)
    w2: torch.Tensor  # (hidden, 3)
    b2: torch.Tensor  # (3,)


def integrate_and_score(
    comment_embedding: torch.Tensor | np.ndarray,
    matches: list[tuple[SentimentTriple, float]],
    params: SentimentHeadParams,
    store: TripleStore | None = None,
) -> torch.Tensor:
    """Mix the similarity-weighted mean of matched triple embeddings into the
    comment embedding with weight alpha, then MLP -> softmax over
    (negative, neutral, positive).

    ``store`` resolves triple embeddings; omit it only when there are no
    matches.
    """
    emb = torch.as_tensor(comment_embedding, dtype=torch.float64)
    if emb.ndim != 1 or emb.shape[0] != params.w1.shape[0]:
        raise InvariantError(
            f"embedding dim {tuple(emb.shape)} does not match head {tuple(params.w1.shape)}"
        )
    knowledge = torch.zeros_like(emb)
    if matches:
        if store is None:
            raise InvariantError("matches given without a store to resolve them")
        index: dict[SentimentTriple, int] = {}
        for i, t in enumerate(store.triples):
            index.setdefault(t, i)
        sims = torch.tensor([s for _, s in matches], dtype=torch.float64)
        embs = torch.as_tensor(
            np.stack([store.embeddings[index[t]] for t, _ in matches]),
            dtype=torch.float64,
        )
        total = sims.sum()
        if torch.abs(total) > 1e-12:
            knowledge = (sims[:, None] * embs).sum(dim=0) / total
    enhanced = (1.0 - params.alpha_kg) * emb + params.alpha_kg * knowledge
    hidden = torch.relu(enhanced @ params.w1 + params.b1)
    return torch.softmax(hidden @ params.w2 + params.b2, dim=0)
