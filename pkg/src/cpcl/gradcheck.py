"""Finite-difference verification of every differentiable operation.

Each registered op builds a random small instance (params + scalar-valued
closure); the harness compares backward-pass gradients against central
differences coordinate by coordinate. Non-scalar op outputs are reduced
with a fixed random linear functional so the full Jacobian is exercised.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from . import alignment, classifier, comments, fusion, sentiment
from .alignment import MmdConfig
from .audio import lift_audio
from .classifier import FocalConfig, HeadParams
from .comments import TextCnnParams
from .fusion import FusionParams, SsmParams


@dataclass
class GradCase:
    params: dict[str, torch.Tensor]
    forward: Callable[[], torch.Tensor]


@dataclass
class GradReport:
    op: str
    max_rel_err: float
    per_param: dict[str, float]


def _t(rng: np.random.Generator, *shape: int, scale: float = 1.0) -> torch.Tensor:
    return torch.from_numpy(scale * rng.standard_normal(shape)).requires_grad_(True)


def _reducer(rng: np.random.Generator, shape: tuple[int, ...]) -> torch.Tensor:
    return torch.from_numpy(rng.standard_normal(shape))


def _case_lift(rng: np.random.Generator) -> GradCase:
    mfcc = torch.from_numpy(rng.standard_normal((5, 6)))
    proj = _t(rng, 6, 8)
    bias = _t(rng, 8)
    r = _reducer(rng, (5, 8))
    return GradCase(
        {"proj": proj, "bias": bias},
        lambda: (lift_audio(mfcc, proj, bias) * r).sum(),
    )


def _fusion_params(rng: np.random.Generator, d: int, d_model: int,
                   d_gate: int, d_state: int) -> FusionParams:
    return FusionParams(
        proj_w=_t(rng, 4 * d, d_model, scale=0.5),
        proj_b=_t(rng, d_model, scale=0.5),
        ln_gamma=_t(rng, d_model, scale=0.5),
        ln_beta=_t(rng, d_model, scale=0.5),
        gate_w1=_t(rng, d_model, d_gate, scale=0.5),
        gate_b1=_t(rng, d_gate, scale=0.5),
        gate_w2=_t(rng, d_gate, 1, scale=0.5),
        gate_b2=_t(rng, 1, scale=0.5),
        ssm=SsmParams(
            log_A=_t(rng, d_model, d_state, scale=0.5),
            D=_t(rng, d_model, scale=0.5),
            w_delta=_t(rng, d_model, d_model, scale=0.5),
            b_delta=_t(rng, d_model, scale=0.5),
            w_B=_t(rng, d_model, d_state, scale=0.5),
            b_B=_t(rng, d_state, scale=0.5),
            w_C=_t(rng, d_model, d_state, scale=0.5),
            b_C=_t(rng, d_state, scale=0.5),
        ),
    )


def _case_concat_project(rng: np.random.Generator) -> GradCase:
    d, d_model, q = 5, 8, 4
    p = _fusion_params(rng, d, d_model, 6, 3)
    seqs = [torch.from_numpy(rng.standard_normal((q, d))) for _ in range(4)]
    r = _reducer(rng, (q, d_model))
    params = {"proj_w": p.proj_w, "proj_b": p.proj_b,
              "ln_gamma": p.ln_gamma, "ln_beta": p.ln_beta}
    return GradCase(params, lambda: (fusion.concat_project(*seqs, p) * r).sum())


def _case_fsf_gate(rng: np.random.Generator) -> GradCase:
    d_model, q = 8, 4
    p = _fusion_params(rng, 2, d_model, 6, 3)
    seq = torch.from_numpy(rng.standard_normal((q, d_model)))
    r = _reducer(rng, (q, d_model))
    params = {"gate_w1": p.gate_w1, "gate_b1": p.gate_b1,
              "gate_w2": p.gate_w2, "gate_b2": p.gate_b2}
    return GradCase(params, lambda: (fusion.fsf_gate(seq, p)[0] * r).sum())


def _case_ssm_encode(rng: np.random.Generator) -> GradCase:
    d_model, q = 6, 4
    p = _fusion_params(rng, 2, d_model, 4, 3)
    seq = torch.from_numpy(rng.standard_normal((q, d_model)))
    r = _reducer(rng, (q, d_model))
    ssm = p.ssm
    params = {k: getattr(ssm, k) for k in
              ("log_A", "D", "w_delta", "b_delta", "w_B", "b_B", "w_C", "b_C")}
    return GradCase(params, lambda: (fusion.ssm_encode(seq, ssm) * r).sum())


def _case_textcnn(rng: np.random.Generator) -> GradCase:
    vocab, e, L, filters = 12, 5, 10, 4
    p = TextCnnParams(
        embedding=_t(rng, vocab, e, scale=0.5),
        conv_w={w: _t(rng, filters, e, w, scale=0.5) for w in (2, 3, 4)},
        conv_b={w: _t(rng, filters, scale=0.5) for w in (2, 3, 4)},
        head_w=_t(rng, 3 * filters, 2, scale=0.5),
        head_b=_t(rng, 2, scale=0.5),
    )
    indices = rng.integers(0, vocab, size=L).tolist()
    r = _reducer(rng, (2,))
    params = {"embedding": p.embedding, "head_w": p.head_w, "head_b": p.head_b}
    for w in (2, 3, 4):
        params[f"conv{w}.w"] = p.conv_w[w]
        params[f"conv{w}.b"] = p.conv_b[w]
    return GradCase(params, lambda: (comments.textcnn_score(indices, p) * r).sum())


def _case_sentiment_head(rng: np.random.Generator) -> GradCase:
    e_s, hidden = 10, 6
    p = sentiment.SentimentHeadParams(
        alpha_kg=torch.tensor(0.5, dtype=torch.float64, requires_grad=True),
        w1=_t(rng, e_s, hidden, scale=0.5),
        b1=_t(rng, hidden, scale=0.5),
        w2=_t(rng, hidden, 3, scale=0.5),
        b2=_t(rng, 3, scale=0.5),
    )
    emb = torch.from_numpy(rng.standard_normal(e_s))
    embedder = sentiment.HashEmbedder(dim=e_s)
    triples = [
        sentiment.SentimentTriple("孩子", "可怜", "negative"),
        sentiment.SentimentTriple("生活", "美好", "positive"),
    ]
    store = sentiment.build_store(triples, embedder)
    matches = [(triples[0], 0.8), (triples[1], 0.5)]
    r = _reducer(rng, (3,))
    params = {"alpha_kg": p.alpha_kg, "w1": p.w1, "b1": p.b1, "w2": p.w2, "b2": p.b2}
    return GradCase(
        params,
        lambda: (sentiment.integrate_and_score(emb, matches, p, store=store) * r).sum(),
    )


def _case_fuse_and_classify(rng: np.random.Generator) -> GradCase:
    d_model = 8
    head = HeadParams(w=_t(rng, d_model + 5, 2, scale=0.5), b=_t(rng, 2, scale=0.5))
    video = torch.from_numpy(rng.standard_normal(d_model))
    cp = torch.from_numpy(np.asarray([0.3, 0.7]))
    sp = torch.from_numpy(np.asarray([0.2, 0.5, 0.3]))
    r = _reducer(rng, (2,))
    return GradCase(
        {"w": head.w, "b": head.b},
        lambda: (classifier.fuse_and_classify(video, cp, sp, head) * r).sum(),
    )


def _case_focal_loss(rng: np.random.Generator) -> GradCase:
    p1 = float(rng.uniform(0.05, 0.95))
    probs = torch.tensor([1.0 - p1, p1], dtype=torch.float64, requires_grad=True)
    label = int(rng.integers(0, 2))
    cfg = FocalConfig(gamma=2.0, alpha=(0.4, 0.6))
    return GradCase({"probs": probs}, lambda: classifier.focal_loss(probs, label, cfg))


def _case_total_mmd(rng: np.random.Generator) -> GradCase:
    q, d = 4, 5
    cfg = MmdConfig(bandwidths=(0.7, 1.3))
    aligned = {
        name: _t(rng, q, d, scale=0.8) for name in ("audio", "video", "face")
    }
    text = torch.from_numpy(rng.standard_normal((q, d)))
    return GradCase(
        dict(aligned),
        lambda: alignment.total_mmd_loss(
            aligned["audio"], aligned["video"], aligned["face"], text, cfg
        ),
    )


REGISTRY: dict[str, Callable[[np.random.Generator], GradCase]] = {
    "lift_audio": _case_lift,
    "concat_project": _case_concat_project,
    "fsf_gate": _case_fsf_gate,
    "ssm_encode": _case_ssm_encode,
    "textcnn_score": _case_textcnn,
    "sentiment_head": _case_sentiment_head,
    "fuse_and_classify": _case_fuse_and_classify,
    "focal_loss": _case_focal_loss,
    "total_mmd_loss": _case_total_mmd,
}


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def grad_check(op_name: str, seed: int = 0, perturbation: float = 1e-5) -> GradReport:
    """Max relative error between backward and central-difference gradients."""
    if op_name not in REGISTRY:
        raise KeyError(f"op {op_name!r} is not registered for gradient checking")
    case = REGISTRY[op_name](np.random.default_rng(seed))
    loss = case.forward()
    loss.backward()
    per_param: dict[str, float] = {}
    for name, tensor in case.params.items():
        grad = tensor.grad
        assert grad is not None, f"{op_name}: no gradient reached {name}"
        worst = 0.0
        flat = tensor.detach().view(-1)
        for i in range(flat.numel()):
            original = float(flat[i])
            with torch.no_grad():
                flat[i] = original + perturbation
                up = float(case.forward())
                flat[i] = original - perturbation
                down = float(case.forward())
                flat[i] = original
            numeric = (up - down) / (2.0 * perturbation)
            worst = max(worst, relative_error(float(grad.view(-1)[i]), numeric))
        per_param[name] = worst
    return GradReport(
        op=op_name, max_rel_err=max(per_param.values()), per_param=per_param
    )


def run_all(seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
            perturbation: float = 1e-5) -> dict[str, float]:
    """Worst relative error per op across the given seeds."""
    return {
        op: max(grad_check(op, seed, perturbation).max_rel_err for seed in seeds)
        for op in REGISTRY
    }
