"""Comment cleaning, character-level encoding, and the TextCNN scorer.

Cleaning is an order-preserving pipeline: NFKC-normalize and trim, drop
exact duplicates, drop emoji-only comments, drop comments with no letter or
CJK character, keep first-level comments only. Cleaned comments are encoded
per video: up to ``max_comments`` comment token streams joined by the PAD
separator and padded/truncated to a fixed length L.
"""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import torch
import torch.nn.functional as F

from .features import CommentRecord, InvariantError

PAD = 0
UNK = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

# Blocks treated as emoji components in addition to the So/Sk categories:
# presentation forms, misc symbols, dingbats, variation selector, ZWJ,
# skin-tone modifiers, regional indicators.
_EMOJI_RANGES = (
    (0x1F000, 0x1FAFF),
    (0x2600, 0x27BF),
    (0x2B00, 0x2BFF),
    (0xFE00, 0xFE0F),
    (0x200D, 0x200D),
    (0x1F3FB, 0x1F3FF),
    (0x1F1E6, 0x1F1FF),
)


def _is_emoji_char(ch: str) -> bool:
    code = ord(ch)
    if any(lo <= code <= hi for lo, hi in _EMOJI_RANGES):
        return True
    return unicodedata.category(ch) in ("So", "Sk")


def _is_meaningful(text: str) -> bool:
    """At least one letter (covers CJK ideographs, category Lo)."""
    return any(unicodedata.category(ch).startswith("L") for ch in text)


def clean_comments(raw: Iterable[CommentRecord]) -> list[CommentRecord]:
    """Normalize, dedup, drop emoji-only / meaningless, keep level-1 only."""
    normalized = [
        CommentRecord(unicodedata.normalize("NFKC", rec.text).strip(), rec.level)
        for rec in raw
    ]
    seen: set[str] = set()
    deduped = []
    for rec in normalized:
        if rec.text in seen:
            continue
        seen.add(rec.text)
        deduped.append(rec)
    kept = []
    for rec in deduped:
        chars = [ch for ch in rec.text if not ch.isspace()]
        if chars and all(_is_emoji_char(ch) for ch in chars):
            continue
        if not _is_meaningful(rec.text):
            continue
        if rec.level != 1:
            continue
        kept.append(rec)
    return kept


def segment(text: str, segmenter: Callable[[str], list[str]] | None = None) -> list[str]:
    """Character tokens, with ASCII alnum runs kept whole; whitespace skipped.

    Pass ``segmenter`` to substitute a word-level tokenizer.
    """
    if not text:
        raise InvariantError("cannot segment an empty string")
    if segmenter is not None:
        return segmenter(text)
    tokens: list[str] = []
    run = ""
    for ch in text:
        if ch.isascii() and ch.isalnum():
            run += ch
            continue
        if run:
            tokens.append(run)
            run = ""
        if not ch.isspace():
            tokens.append(ch)
    if run:
        tokens.append(run)
    return tokens


@dataclass
class Vocabulary:
    token_to_index: dict[str, int]
    index_to_token: list[str]
    max_size: int
    min_freq: int

    def __len__(self) -> int:
        return len(self.index_to_token)

    def encode(self, token: str) -> int:
        return self.token_to_index.get(token, UNK)

    def encode_tokens(self, tokens: Iterable[str]) -> list[int]:
        return [self.encode(t) for t in tokens]

    def save(self, path: str | Path) -> None:
        """One token per line; the line number is the index."""
        Path(path).write_text("\n".join(self.index_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens = Path(path).read_text(encoding="utf-8").splitlines()
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise InvariantError(f"{path}: vocabulary must start with PAD, UNK")
        return cls(
            token_to_index={t: i for i, t in enumerate(tokens)},
            index_to_token=tokens,
            max_size=len(tokens),
            min_freq=1,
        )


def build_vocab(corpus: Iterable[list[str]], min_freq: int = 1, max_size: int = 5000) -> Vocabulary:
    """Frequency-ranked vocabulary; ties broken lexicographically."""
    if max_size < 2:
        raise InvariantError("max_size must leave room for PAD and UNK")
    counts: Counter[str] = Counter()
    for tokens in corpus:
        counts.update(tokens)
    ranked = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )[: max_size - 2]
    index_to_token = [PAD_TOKEN, UNK_TOKEN] + ranked
    return Vocabulary(
        token_to_index={t: i for i, t in enumerate(index_to_token)},
        index_to_token=index_to_token,
        max_size=max_size,
        min_freq=min_freq,
    )


def encode_comment_batch(
    comments: list[CommentRecord],
    vocab: Vocabulary,
    length: int = 128,
    max_comments: int = 64,
    segmenter: Callable[[str], list[str]] | None = None,
) -> list[int]:
    """One fixed-length index sequence per video.

    Comments keep their order; consecutive comments are joined with a PAD
    separator, then the stream is truncated or padded to exactly ``length``.
    """
    if length < 1:
        raise InvariantError("length must be >= 1")
    indices: list[int] = []
    for i, rec in enumerate(comments[:max_comments]):
        if i > 0:
            indices.append(PAD)
        indices.extend(vocab.encode(t) for t in segment(rec.text, segmenter))
        if len(indices) >= length:
            break
    indices = indices[:length]
    indices.extend([PAD] * (length - len(indices)))
    return indices


@dataclass
class TextCnnParams:
    """Embedding table, one conv bank per filter width, and the linear head."""

    embedding: torch.Tensor  # (|V|, e)
    conv_w: dict[int, torch.Tensor]  # width -> (filters, e, width)
    conv_b: dict[int, torch.Tensor]  # width -> (filters,)
    head_w: torch.Tensor  # (sum(filters), 2)
    head_b: torch.Tensor  # (2,)

    @property
    def widths(self) -> list[int]:
        return sorted(self.conv_w)


def textcnn_score(indices: list[int] | torch.Tensor, params: TextCnnParams) -> torch.Tensor:
    """Embed -> per-width valid conv + ReLU + max-over-time -> softmax pair."""
    idx = torch.as_tensor(indices, dtype=torch.long)
    if idx.numel() == 0:
        raise InvariantError("empty index sequence")
    if int(idx.max()) >= params.embedding.shape[0] or int(idx.min()) < 0:
        raise InvariantError("comment index out of vocabulary range")
    if min(params.widths) > idx.numel():
        raise InvariantError("sequence shorter than every filter width")
    embedded = params.embedding[idx]  # (L, e)
    signal = embedded.T[None, :, :]  # (1, e, L)
    features = []
    for width in params.widths:
        if width > idx.numel():
            raise InvariantError(f"filter width {width} exceeds sequence length")
        conv = F.conv1d(signal, params.conv_w[width], params.conv_b[width])
        features.append(torch.relu(conv[0]).max(dim=1).values)
    logits = torch.cat(features) @ params.head_w + params.head_b
    return torch.softmax(logits, dim=0)
