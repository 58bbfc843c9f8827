"""AdamW + cosine-annealing training of the full pipeline.

Training is deterministic given (dataset, config, seed): parameter init and
shuffling draw from one numpy PCG64 stream per seed, batches keep sample
order for gradient accumulation, and the optimizer runs in float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import classifier
from .classifier import FocalConfig, alpha_from_labels
from .evaluation import MetricsReport, compute_metrics
from .features import InvariantError
from .model import (
    ForwardResult,
    ModelConfig,
    ModelParams,
    PreparedSample,
    forward_sample,
    init_params,
)
from .sentiment import TripleStore


class TrainingDivergenceError(RuntimeError):
    """Loss became non-finite; carries the epoch and batch index."""

    def __init__(self, epoch: int, batch: int, message: str = "loss is not finite"):
        super().__init__(f"epoch {epoch}, batch {batch}: {message}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    epochs: int = 150
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-3
    eta_max: float = 1e-4
    eta_min: float = 1e-6
    t_max: int = 75
    batch_size: int = 8
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    lambda_mmd: float = 0.3
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not (0 < self.eta_min <= self.eta_max):
            raise InvariantError("need 0 < eta_min <= eta_max")
        if self.t_max < 1:
            raise InvariantError("t_max must be >= 1")
        for b in (self.beta1, self.beta2):
            if not 0 < b < 1:
                raise InvariantError("betas must lie in (0, 1)")


def cosine_lr(t: int, cfg: TrainConfig) -> float:
    """eta_min + (eta_max - eta_min) * (1 + cos(pi * t / t_max)) / 2, flat
    at eta_min once t reaches t_max."""
    if t < 0:
        raise InvariantError("epoch index must be >= 0")
    progress = min(t, cfg.t_max) / cfg.t_max
    return cfg.eta_min + 0.5 * (cfg.eta_max - cfg.eta_min) * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)


def adamw_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    state: AdamState,
    lr: float,
    cfg: TrainConfig,
) -> AdamState:
    """One decoupled-weight-decay Adam update, in place.

    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta,
    with both terms computed from the pre-update theta.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    with torch.no_grad():
        for name, theta in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if not torch.all(torch.isfinite(g)):
                raise TrainingDivergenceError(-1, -1, f"NaN gradient in {name}")
            if name not in state.m:
                state.m[name] = torch.zeros_like(theta)
                state.v[name] = torch.zeros_like(theta)
            m, v = state.m[name], state.v[name]
            m.mul_(cfg.beta1).add_((1.0 - cfg.beta1) * g)
            v.mul_(cfg.beta2).add_((1.0 - cfg.beta2) * g * g)
            update = lr * (m / bc1) / (torch.sqrt(v / bc2) + cfg.adam_eps)
            theta.sub_(update + lr * cfg.weight_decay * theta)
    return state


@dataclass
class SplitDataset:
    train: list[PreparedSample]
    heldout: list[PreparedSample]

    def __post_init__(self):
        labels = {s.label for s in self.train}
        if not self.train or labels != {0, 1}:
            raise InvariantError("training split must be non-empty with both classes")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    acc: float
    f1m: float
    recall: float
    precision: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "epoch": self.epoch,
                "lr": self.lr,
                "loss": self.loss,
                "acc": self.acc,
                "f1m": self.f1m,
                "recall": self.recall,
                "precision": self.precision,
            },
            sort_keys=False,
        )


@dataclass
class SeedResult:
    seed: int
    params: ModelParams
    log: list[EpochRecord]
    metrics: MetricsReport


@dataclass
class TrainResult:
    per_seed: list[SeedResult]
    mean_metrics: dict[str, float]

    @property
    def final_params(self) -> ModelParams:
        return self.per_seed[-1].params


def _resolve_focal(model_cfg: ModelConfig, labels: list[int]) -> FocalConfig:
    focal = model_cfg.focal
    if focal.alpha is None:
        focal = replace(focal, alpha=alpha_from_labels(labels))
    return focal


def evaluate_params(
    samples: list[PreparedSample],
    params: ModelParams,
    cfg: ModelConfig,
    store: TripleStore | None = None,
) -> MetricsReport:
    preds = []
    with torch.no_grad():
        for s in samples:
            result = forward_sample(s, params, cfg, store=store, with_mmd=False)
            preds.append(int(torch.argmax(result.probs)))
    return compute_metrics(preds, [s.label for s in samples])


def train_one_seed(
    dataset: SplitDataset,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    seed: int,
    store: TripleStore | None = None,
    vocab_len: int | None = None,
) -> SeedResult:
    rng = np.random.default_rng(seed)
    if vocab_len is None:
        vocab_len = max(max(s.comment_indices) for s in dataset.train) + 1
    params = init_params(model_cfg, rng, vocab_len).requires_grad_(True)
    named = params.named_tensors()
    focal_cfg = _resolve_focal(model_cfg, [s.label for s in dataset.train])
    state = AdamState()
    log: list[EpochRecord] = []

    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg)
        order = rng.permutation(len(dataset.train))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [dataset.train[i] for i in order[start : start + cfg.batch_size]]
            for t in named.values():
                if t.grad is not None:
                    t.grad = None
            loss = torch.zeros((), dtype=torch.float64)
            for s in batch:
                result: ForwardResult = forward_sample(s, params, model_cfg, store=store)
                focal = classifier.focal_loss(result.probs, s.label, focal_cfg)
                loss = loss + classifier.total_loss(focal, result.mmd_loss, cfg.lambda_mmd)
            loss = loss / len(batch)
            if not torch.isfinite(loss):
                raise TrainingDivergenceError(epoch, n_batches)
            loss.backward()
            grads = {k: t.grad for k, t in named.items() if t.grad is not None}
            adamw_step(named, grads, state, lr, cfg)
            with torch.no_grad():
                params.sentiment.alpha_kg.clamp_(0.0, 1.0)
            epoch_loss += float(loss.detach())
            n_batches += 1
        metrics = evaluate_params(dataset.heldout or dataset.train, params, model_cfg, store)
        log.append(
            EpochRecord(
                epoch=epoch,
                lr=lr,
                loss=epoch_loss / max(n_batches, 1),
                acc=metrics.accuracy,
                f1m=metrics.macro_f1,
                recall=metrics.recall,
                precision=metrics.precision,
            )
        )
    final_metrics = evaluate_params(dataset.heldout or dataset.train, params, model_cfg, store)
    return SeedResult(seed=seed, params=params, log=log, metrics=final_metrics)


def train(
    dataset: SplitDataset,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    store: TripleStore | None = None,
    vocab_len: int | None = None,
) -> TrainResult:
    """Train once per configured seed and average the held-out metrics."""
    per_seed = [
        train_one_seed(dataset, model_cfg, cfg, seed, store=store, vocab_len=vocab_len)
        for seed in cfg.seeds
    ]
    keys = ("accuracy", "macro_f1", "recall", "precision")
    mean_metrics = {
        k: float(np.mean([getattr(r.metrics, k) for r in per_seed])) for k in keys
    }
    return TrainResult(per_seed=per_seed, mean_metrics=mean_metrics)


def write_epoch_log(log: list[EpochRecord], path: str | Path) -> None:
    Path(path).write_text("\n".join(rec.to_json() for rec in log) + "\n", encoding="utf-8")
