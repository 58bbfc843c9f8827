"""Model assembly: configuration, parameter container, per-sample forward.

Every trainable tensor is float64 and addressable by a dotted name, which is
what the optimizer, the snapshot format, and the gradient checker consume.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import alignment, classifier, comments, fusion, sentiment
from .alignment import MmdConfig, RotConfig
from .classifier import FocalConfig, HeadParams
from .comments import TextCnnParams, Vocabulary
from .features import InvariantError, VideoSample
from .fusion import FusionParams, SsmParams
from .sentiment import SentimentHeadParams, TripleStore


@dataclass
class ModelConfig:
    d: int = 768  # shared embedding dim of the ingested modalities
    audio_in_dim: int = 40  # raw audio token width before the lift
    d_model: int = 128
    d_state: int = 16
    d_gate: int = 64
    embed_dim: int = 64  # TextCNN embedding width
    seq_len: int = 128  # encoded comment length L
    max_comments: int = 64
    filter_widths: tuple[int, ...] = (2, 3, 4)
    filters_per_width: int = 32
    vocab_size: int = 5000
    min_freq: int = 1
    sentiment_dim: int = 64  # e_s
    sentiment_hidden: int = 32
    match_k: int = 3
    match_threshold: float = 0.35
    rot: RotConfig = field(default_factory=RotConfig)
    mmd: MmdConfig = field(default_factory=MmdConfig)
    focal: FocalConfig = field(default_factory=FocalConfig)
    lambda_mmd: float = 0.3
    init_scale: float = 0.1
    head_init_scale: float = 0.5  # larger: keeps branch gradients alive early
    m_comment: float = 1.0
    m_sentiment: float = 1.0


@dataclass
class ModelParams:
    lift_w: torch.Tensor
    lift_b: torch.Tensor
    fusion: FusionParams
    textcnn: TextCnnParams
    sentiment: SentimentHeadParams
    head: HeadParams

    def named_tensors(self) -> "OrderedDict[str, torch.Tensor]":
        named: "OrderedDict[str, torch.Tensor]" = OrderedDict()
        named["lift.w"] = self.lift_w
        named["lift.b"] = self.lift_b
        f = self.fusion
        for key in ("proj_w", "proj_b", "ln_gamma", "ln_beta",
                    "gate_w1", "gate_b1", "gate_w2", "gate_b2"):
            named[f"fusion.{key}"] = getattr(f, key)
        for key in ("log_A", "D", "w_delta", "b_delta", "w_B", "b_B", "w_C", "b_C"):
            named[f"fusion.ssm.{key}"] = getattr(f.ssm, key)
        named["textcnn.embedding"] = self.textcnn.embedding
        for w in self.textcnn.widths:
            named[f"textcnn.conv{w}.w"] = self.textcnn.conv_w[w]
            named[f"textcnn.conv{w}.b"] = self.textcnn.conv_b[w]
        named["textcnn.head_w"] = self.textcnn.head_w
        named["textcnn.head_b"] = self.textcnn.head_b
        s = self.sentiment
        named["sentiment.alpha_kg"] = s.alpha_kg
        named["sentiment.w1"] = s.w1
        named["sentiment.b1"] = s.b1
        named["sentiment.w2"] = s.w2
        named["sentiment.b2"] = s.b2
        named["head.w"] = self.head.w
        named["head.b"] = self.head.b
        return named

    def requires_grad_(self, flag: bool = True) -> "ModelParams":
        for t in self.named_tensors().values():
            t.requires_grad_(flag)
        return self


def _tensor(rng: np.random.Generator, *shape: int, scale: float) -> torch.Tensor:
    return torch.from_numpy(scale * rng.standard_normal(shape))


def init_params(cfg: ModelConfig, rng: np.random.Generator, vocab_len: int) -> ModelParams:
    """Small-normal init; layer norm starts at identity, gates near 0.5."""
    s = cfg.init_scale
    ssm = SsmParams(
        log_A=_tensor(rng, cfg.d_model, cfg.d_state, scale=s),
        D=torch.ones(cfg.d_model, dtype=torch.float64),
        w_delta=_tensor(rng, cfg.d_model, cfg.d_model, scale=s),
        b_delta=torch.zeros(cfg.d_model, dtype=torch.float64),
        w_B=_tensor(rng, cfg.d_model, cfg.d_state, scale=s),
        b_B=torch.zeros(cfg.d_state, dtype=torch.float64),
        w_C=_tensor(rng, cfg.d_model, cfg.d_state, scale=s),
        b_C=torch.zeros(cfg.d_state, dtype=torch.float64),
    )
    fusion_params = FusionParams(
        proj_w=_tensor(rng, 4 * cfg.d, cfg.d_model, scale=s),
        proj_b=torch.zeros(cfg.d_model, dtype=torch.float64),
        ln_gamma=torch.ones(cfg.d_model, dtype=torch.float64),
        ln_beta=torch.zeros(cfg.d_model, dtype=torch.float64),
        gate_w1=_tensor(rng, cfg.d_model, cfg.d_gate, scale=s),
        gate_b1=torch.zeros(cfg.d_gate, dtype=torch.float64),
        gate_w2=_tensor(rng, cfg.d_gate, 1, scale=s),
        gate_b2=torch.zeros(1, dtype=torch.float64),
        ssm=ssm,
    )
    n_feat = cfg.filters_per_width * len(cfg.filter_widths)
    textcnn = TextCnnParams(
        embedding=_tensor(rng, vocab_len, cfg.embed_dim, scale=s),
        conv_w={
            w: _tensor(rng, cfg.filters_per_width, cfg.embed_dim, w, scale=s)
            for w in cfg.filter_widths
        },
        conv_b={
            w: torch.zeros(cfg.filters_per_width, dtype=torch.float64)
            for w in cfg.filter_widths
        },
        head_w=_tensor(rng, n_feat, 2, scale=s),
        head_b=torch.zeros(2, dtype=torch.float64),
    )
    sent = SentimentHeadParams(
        alpha_kg=torch.tensor(0.5, dtype=torch.float64),
        w1=_tensor(rng, cfg.sentiment_dim, cfg.sentiment_hidden, scale=s),
        b1=torch.zeros(cfg.sentiment_hidden, dtype=torch.float64),
        w2=_tensor(rng, cfg.sentiment_hidden, 3, scale=s),
        b2=torch.zeros(3, dtype=torch.float64),
    )
    head = HeadParams(
        w=_tensor(rng, cfg.d_model + 5, 2, scale=cfg.head_init_scale),
        b=torch.zeros(2, dtype=torch.float64),
        m_comment=cfg.m_comment,
        m_sentiment=cfg.m_sentiment,
    )
    return ModelParams(
        lift_w=_tensor(rng, cfg.audio_in_dim, cfg.d, scale=s),
        lift_b=torch.zeros(cfg.d, dtype=torch.float64),
        fusion=fusion_params,
        textcnn=textcnn,
        sentiment=sent,
        head=head,
    )


@dataclass
class PreparedSample:
    """Per-sample constants: everything the forward pass needs besides params.

    Video and face alignments depend only on the (frozen) input features, so
    their plans are solved once here; the audio plan depends on the lift and
    is re-solved inside every forward pass.
    """

    id: str
    label: int
    text: torch.Tensor  # (q, d)
    audio_raw: torch.Tensor  # (m, audio_in_dim)
    aligned_video: torch.Tensor  # (q, d)
    aligned_face: torch.Tensor  # (q, d)
    comment_indices: list[int]
    comment_embedding: torch.Tensor  # (e_s,)
    matches: list[tuple[sentiment.SentimentTriple, float]]
    mmd_const: float = 0.0  # video+face terms; parameter-free, solved once


def prepare_sample(
    sample: VideoSample,
    cfg: ModelConfig,
    vocab: Vocabulary,
    store: TripleStore | None,
    embedder: sentiment.Embedder,
) -> PreparedSample:
    if sample.text_feat.dim != cfg.d:
        raise InvariantError(
            f"sample dim {sample.text_feat.dim} does not match model d={cfg.d}"
        )
    if sample.audio_feat.dim != cfg.audio_in_dim:
        raise InvariantError(
            f"audio width {sample.audio_feat.dim} does not match "
            f"audio_in_dim={cfg.audio_in_dim}"
        )
    text = torch.as_tensor(sample.text_feat.tokens)
    aligned_video, _ = alignment.align_to_text(sample.video_feat, sample.text_feat, cfg.rot)
    aligned_face, _ = alignment.align_to_text(sample.face_feat, sample.text_feat, cfg.rot)

    cleaned = comments.clean_comments(sample.comments)
    indices = comments.encode_comment_batch(
        cleaned, vocab, length=cfg.seq_len, max_comments=cfg.max_comments
    )
    joined = " ".join(rec.text for rec in cleaned[: cfg.max_comments])
    if joined:
        comment_embedding = torch.as_tensor(embedder.embed(joined))
        matches = (
            sentiment.match_triples(
                comments.segment(joined), store, k=cfg.match_k,
                threshold=cfg.match_threshold,
            )
            if store is not None and len(store) > 0
            else []
        )
    else:
        comment_embedding = torch.zeros(cfg.sentiment_dim, dtype=torch.float64)
        matches = []
    with torch.no_grad():
        mmd_const = float(
            alignment.mmd(aligned_video, text, cfg.mmd)
            + alignment.mmd(aligned_face, text, cfg.mmd)
        )
    return PreparedSample(
        id=sample.id,
        label=sample.label,
        text=text,
        audio_raw=torch.as_tensor(sample.audio_feat.tokens),
        aligned_video=aligned_video.detach(),
        aligned_face=aligned_face.detach(),
        comment_indices=indices,
        comment_embedding=comment_embedding,
        matches=matches,
        mmd_const=mmd_const,
    )


@dataclass
class ForwardResult:
    probs: torch.Tensor  # (2,)
    mmd_loss: torch.Tensor  # scalar; only the audio term carries gradient
    gates: torch.Tensor  # (q,)


def forward_sample(
    prepared: PreparedSample,
    params: ModelParams,
    cfg: ModelConfig,
    store: TripleStore | None = None,
    with_mmd: bool = True,
) -> ForwardResult:
    """Full pipeline for one sample.

    The audio transport plan is re-solved from the current lift output but,
    like the others, enters the graph as a constant. ``with_mmd=False`` skips
    the alignment loss (prediction-only forwards).
    """
    lifted = prepared.audio_raw @ params.lift_w + params.lift_b
    plan = alignment.rot_solve(
        alignment.cost_matrix(lifted.detach().numpy(), prepared.text.numpy()),
        epsilon=cfg.rot.epsilon,
        tau=cfg.rot.tau,
        max_iters=cfg.rot.max_iters,
        tol=cfg.rot.tol,
    )
    aligned_audio = alignment.barycentric_project(plan, lifted)

    if with_mmd:
        mmd_audio = alignment.mmd(aligned_audio, prepared.text, cfg.mmd)
        mmd_loss = mmd_audio + prepared.mmd_const
    else:
        mmd_loss = torch.zeros((), dtype=torch.float64)

    projected = fusion.concat_project(
        prepared.text, aligned_audio, prepared.aligned_video, prepared.aligned_face,
        params.fusion,
    )
    gated, gates = fusion.fsf_gate(projected, params.fusion)
    video_vec = fusion.pool_video(fusion.ssm_encode(gated, params.fusion.ssm))

    comment_probs = comments.textcnn_score(prepared.comment_indices, params.textcnn)
    sentiment_probs = sentiment.integrate_and_score(
        prepared.comment_embedding, prepared.matches, params.sentiment, store=store
    )
    probs = classifier.fuse_and_classify(
        video_vec, comment_probs, sentiment_probs, params.head
    )
    return ForwardResult(probs=probs, mmd_loss=mmd_loss, gates=gates)


SNAPSHOT_MAGIC = b"CPCLPRM1"


def save_params(params: ModelParams, path: str | Path) -> None:
    """Deterministic binary snapshot: name-tagged float64 tensors."""
    blobs = [SNAPSHOT_MAGIC, len(params.named_tensors()).to_bytes(4, "little")]
    for name, tensor in params.named_tensors().items():
        data = tensor.detach().numpy().astype("<f8")
        encoded = name.encode("utf-8")
        blobs.append(len(encoded).to_bytes(2, "little"))
        blobs.append(encoded)
        blobs.append(data.ndim.to_bytes(1, "little"))
        for dim in data.shape:
            blobs.append(int(dim).to_bytes(4, "little"))
        blobs.append(data.tobytes())
    Path(path).write_bytes(b"".join(blobs))


def load_params_into(params: ModelParams, path: str | Path) -> ModelParams:
    """Load a snapshot into an existing (shape-matching) parameter set."""
    raw = Path(path).read_bytes()
    if raw[:8] != SNAPSHOT_MAGIC:
        raise InvariantError(f"{path}: not a parameter snapshot")
    offset = 8
    count = int.from_bytes(raw[offset : offset + 4], "little")
    offset += 4
    named = params.named_tensors()
    seen = []
    for _ in range(count):
        name_len = int.from_bytes(raw[offset : offset + 2], "little")
        offset += 2
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        ndim = raw[offset]
        offset += 1
        shape = []
        for _ in range(ndim):
            shape.append(int.from_bytes(raw[offset : offset + 4], "little"))
            offset += 4
        size = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(raw, dtype="<f8", count=size, offset=offset).reshape(shape)
        offset += 8 * size
        if name not in named:
            raise InvariantError(f"{path}: unknown parameter {name!r}")
        target = named[name]
        if tuple(target.shape) != tuple(shape):
            raise InvariantError(
                f"{path}: shape mismatch for {name}: {tuple(shape)} vs {tuple(target.shape)}"
            )
        with torch.no_grad():
            target.copy_(torch.from_numpy(values.copy()))
        seen.append(name)
    if len(seen) != len(named):
        missing = sorted(set(named) - set(seen))
        raise InvariantError(f"{path}: snapshot missing parameters {missing}")
    return params
