"""Late fusion of the three branches and the training losses.

The head concatenates the pooled video vector with the (maskable) comment
and sentiment probability vectors and applies a linear layer + softmax.
Masks reproduce the ablation variants: a masked branch contributes a zero
vector regardless of its input.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .features import InvariantError

PROB_FLOOR = 1e-12  # clamp before log; prevents -inf without measurable bias


@dataclass
class HeadParams:
    w: torch.Tensor  # (d_model + 2 + 3, 2)
    b: torch.Tensor  # (2,)
    m_comment: float = 1.0  # ablation switches, configuration not learned
    m_sentiment: float = 1.0

    def __post_init__(self):
        if self.m_comment not in (0.0, 1.0) or self.m_sentiment not in (0.0, 1.0):
            raise InvariantError("branch masks must be 0 or 1")


@dataclass
class FocalConfig:
    gamma: float = 2.0
    alpha: tuple[float, float] | None = None  # None: inverse class frequency

    def __post_init__(self):
        if not (self.gamma >= 0 and self.gamma == self.gamma):
            raise InvariantError("gamma must be finite and >= 0")
        if self.alpha is not None and any(a <= 0 for a in self.alpha):
            raise InvariantError("alpha entries must be positive")


def alpha_from_labels(labels: list[int]) -> tuple[float, float]:
    """Inverse-class-frequency weights, normalized to sum to 1."""
    n = len(labels)
    n1 = sum(labels)
    n0 = n - n1
    if n0 == 0 or n1 == 0:
        raise InvariantError("both classes must be present to derive alpha")
    inv = (n / n0, n / n1)
    total = inv[0] + inv[1]
    return (inv[0] / total, inv[1] / total)


def fuse_and_classify(
    video_vec: torch.Tensor,
    comment_probs: torch.Tensor,
    sentiment_probs: torch.Tensor,
    params: HeadParams,
) -> torch.Tensor:
    """concat(video, masked comment pair, masked sentiment triple) -> softmax."""
    if comment_probs.shape != (2,) or sentiment_probs.shape != (3,):
        raise InvariantError("branch probability shapes must be (2,) and (3,)")
    stacked = torch.cat(
        [
            video_vec,
            params.m_comment * comment_probs,
            params.m_sentiment * sentiment_probs,
        ]
    )
    if stacked.shape[0] != params.w.shape[0]:
        raise InvariantError(
            f"head input {stacked.shape[0]} != weight rows {params.w.shape[0]}"
        )
    return torch.softmax(stacked @ params.w + params.b, dim=0)


def focal_loss(probs: torch.Tensor, label: int, cfg: FocalConfig) -> torch.Tensor:
    """-alpha[label] * (1 - p_label)^gamma * log(p_label).

    Callers must pass a probability pair summing to 1 (within 1e-6); only
    the entry at ``label`` is read, clamped to [PROB_FLOOR, 1] before log.
    """
    if label not in (0, 1):
        raise InvariantError(f"label must be 0 or 1, got {label}")
    if cfg.alpha is None:
        raise InvariantError("focal alpha unresolved; derive it from the data first")
    p = torch.clamp(probs[label], min=PROB_FLOOR, max=1.0)
    return -cfg.alpha[label] * (1.0 - p) ** cfg.gamma * torch.log(p)


def total_loss(focal: torch.Tensor | float, mmd: torch.Tensor | float, lam: float = 0.3) -> torch.Tensor | float:
    """Classification plus weighted alignment loss."""
    if lam < 0:
        raise InvariantError("lambda must be >= 0")
    return focal + lam * mmd
