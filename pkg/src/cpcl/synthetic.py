"""Synthetic two-class dataset for end-to-end experiments.

Feature tokens of the two classes are mean-shifted Gaussians (per modality),
comment text draws from class-dependent word pools with shared noise words,
and a small sentiment lexicon matches the toxic-class vocabulary. The
generator also injects duplicates, emoji-only comments, and reply-level
comments so the cleaning pipeline has real work to do.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .alignment import MmdConfig, RotConfig
from .comments import build_vocab, clean_comments, segment
from .features import (
    CommentRecord,
    FeatureSequence,
    VideoSample,
    assemble_face_track,
    write_feature_file,
)
from .model import ModelConfig, prepare_sample
from .sentiment import HashEmbedder, SentimentTriple, TripleStore, build_store

PCL_WORDS = ("可怜", "孩子", "同情", "心疼", "弱势", "唉", "救救", "不容易", "太惨", "底层")
NEUTRAL_WORDS = ("加油", "精彩", "好看", "喜欢", "音乐", "不错", "哈哈", "支持", "厉害", "学到")
SHARED_WORDS = ("视频", "大家", "这个", "真的", "今天")

SKG_TRIPLES = (
    ("孩子", "可怜", "negative"),
    ("老人", "孤独", "negative"),
    ("生活", "不容易", "negative"),
    ("底层", "辛苦", "negative"),
    ("弱势", "同情", "negative"),
    ("音乐", "好听", "positive"),
    ("视频", "精彩", "positive"),
    ("作品", "厉害", "positive"),
    ("天气", "一般", "neutral"),
    ("时间", "普通", "neutral"),
)


@dataclass
class SyntheticConfig:
    n_samples: int = 200
    pcl_fraction: float = 0.4
    d: int = 16
    audio_in_dim: int = 12
    q_text: int = 6
    n_video: int = 10
    m_audio: int = 8
    shift: float = 0.1
    noise: float = 1.0
    face_detection_rate: float = 0.7
    comments_min: int = 4
    comments_max: int = 10
    heldout_fraction: float = 0.2
    seed: int = 12345


def experiment_model_config(cfg: SyntheticConfig) -> ModelConfig:
    """Desk-scale model dims matched to the synthetic feature sizes.

    d_model is kept small on purpose: a wide fusion path can memorize the
    training split and crowd out the comment branches.
    """
    return ModelConfig(
        d=cfg.d,
        audio_in_dim=cfg.audio_in_dim,
        d_model=16,
        d_state=8,
        d_gate=16,
        embed_dim=16,
        seq_len=48,
        max_comments=16,
        vocab_size=500,
        sentiment_dim=64,
        rot=RotConfig(epsilon=0.05, tau=1.0, max_iters=15, tol=1e-6),
        mmd=MmdConfig(bandwidths=(1.0, 2.0, 4.0)),
    )


def experiment_train_config(epochs: int = 18, seeds: tuple[int, ...] = (0, 1, 2, 3, 4)):
    """Optimizer settings for the synthetic experiment (paper constants where
    given; eta_max raised for the short desk-scale schedule)."""
    from .training import TrainConfig

    return TrainConfig(
        epochs=epochs,
        eta_max=3e-3,
        eta_min=1e-5,
        t_max=max(epochs // 2, 1),
        batch_size=8,
        weight_decay=1e-3,
        seeds=seeds,
    )


def _class_means(rng: np.random.Generator, dim: int, shift: float) -> tuple[np.ndarray, np.ndarray]:
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    return -shift * direction, shift * direction


def _comment_text(rng: np.random.Generator, label: int) -> str:
    pool = PCL_WORDS if label == 1 else NEUTRAL_WORDS
    n_words = int(rng.integers(3, 7))
    words = []
    for _ in range(n_words):
        source = pool if rng.random() < 0.85 else SHARED_WORDS
        words.append(source[int(rng.integers(0, len(source)))])
    return "".join(words)


def generate_samples(cfg: SyntheticConfig) -> list[VideoSample]:
    rng = np.random.default_rng(cfg.seed)
    n_pcl = round(cfg.n_samples * cfg.pcl_fraction)
    labels = [1] * n_pcl + [0] * (cfg.n_samples - n_pcl)
    rng.shuffle(labels)

    mean0, mean1 = _class_means(rng, cfg.d, cfg.shift)
    amean0, amean1 = _class_means(rng, cfg.audio_in_dim, cfg.shift)

    samples = []
    for i, label in enumerate(labels):
        mu = mean1 if label == 1 else mean0
        amu = amean1 if label == 1 else amean0

        def tokens(n: int, mean: np.ndarray) -> np.ndarray:
            return mean + cfg.noise * rng.standard_normal((n, len(mean)))

        video = FeatureSequence("video", cfg.d, tokens(cfg.n_video, mu))
        detections = [
            (j, mu + cfg.noise * rng.standard_normal(cfg.d))
            for j in range(cfg.n_video)
            if rng.random() < cfg.face_detection_rate
        ]
        face = assemble_face_track(cfg.n_video, detections, dim=cfg.d)
        audio = FeatureSequence("audio", cfg.audio_in_dim, tokens(cfg.m_audio, amu))
        text = FeatureSequence("text", cfg.d, tokens(cfg.q_text, mu))

        comments = []
        n_comments = int(rng.integers(cfg.comments_min, cfg.comments_max + 1))
        for _ in range(n_comments):
            comments.append(CommentRecord(_comment_text(rng, label), level=1))
        if rng.random() < 0.2 and comments:
            comments.append(CommentRecord(comments[0].text, level=1))  # duplicate
        if rng.random() < 0.15:
            comments.append(CommentRecord("😀😀", level=1))  # emoji-only
        if rng.random() < 0.15:
            comments.append(CommentRecord(_comment_text(rng, label), level=2))  # reply

        samples.append(
            VideoSample(
                id=f"syn{i:04d}",
                label=label,
                video_feat=video,
                face_feat=face,
                audio_feat=audio,
                text_feat=text,
                comments=comments,
            )
        )
    return samples


def stratified_split(
    samples: list[VideoSample], heldout_fraction: float, rng: np.random.Generator
) -> tuple[list[VideoSample], list[VideoSample]]:
    train, heldout = [], []
    for label in (0, 1):
        group = [s for s in samples if s.label == label]
        order = rng.permutation(len(group))
        n_heldout = round(len(group) * heldout_fraction)
        heldout.extend(group[i] for i in order[:n_heldout])
        train.extend(group[i] for i in order[n_heldout:])
    return train, heldout


@dataclass
class Experiment:
    """Everything a training run needs, prepared once per dataset."""

    model_cfg: ModelConfig
    train_samples: list
    heldout_samples: list
    vocab_len: int
    store: TripleStore
    raw_train: list[VideoSample] = field(default_factory=list)
    raw_heldout: list[VideoSample] = field(default_factory=list)


def build_experiment(cfg: SyntheticConfig | None = None,
                     model_cfg: ModelConfig | None = None) -> Experiment:
    cfg = cfg or SyntheticConfig()
    model_cfg = model_cfg or experiment_model_config(cfg)
    samples = generate_samples(cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    train_raw, heldout_raw = stratified_split(samples, cfg.heldout_fraction, rng)

    corpus = [
        segment(rec.text)
        for s in train_raw
        for rec in clean_comments(s.comments)
    ]
    vocab = build_vocab(corpus, min_freq=model_cfg.min_freq, max_size=model_cfg.vocab_size)
    embedder = HashEmbedder(dim=model_cfg.sentiment_dim)
    store = build_store(
        [SentimentTriple(a, w, p) for a, w, p in SKG_TRIPLES], embedder
    )
    prepared_train = [
        prepare_sample(s, model_cfg, vocab, store, embedder) for s in train_raw
    ]
    prepared_heldout = [
        prepare_sample(s, model_cfg, vocab, store, embedder) for s in heldout_raw
    ]
    return Experiment(
        model_cfg=model_cfg,
        train_samples=prepared_train,
        heldout_samples=prepared_heldout,
        vocab_len=len(vocab),
        store=store,
        raw_train=train_raw,
        raw_heldout=heldout_raw,
    )


def write_dataset_files(samples: list[VideoSample], out_dir: str | Path) -> Path:
    """Materialize samples as feature files + comment JSONL + manifest.

    Returns the manifest path. Audio is written as a feature file whose dim
    is the raw (pre-lift) audio width.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as mf:
        for s in samples:
            paths = {}
            for field_name, seq in (
                ("video_feat", s.video_feat),
                ("face_feat", s.face_feat),
                ("audio_feat_or_wav", s.audio_feat),
                ("text_feat", s.text_feat),
            ):
                rel = f"{s.id}_{seq.modality}.feat"
                write_feature_file(seq, out / rel)
                paths[field_name] = rel
            comments_rel = f"{s.id}_comments.jsonl"
            with open(out / comments_rel, "w", encoding="utf-8") as cf:
                for rec in s.comments:
                    cf.write(json.dumps({"text": rec.text, "level": rec.level},
                                        ensure_ascii=False) + "\n")
            mf.write(json.dumps({"id": s.id, "label": s.label,
                                 **paths, "comments_file": comments_rel},
                                ensure_ascii=False) + "\n")
    return manifest_path


def experiment_from_manifest(
    manifest_path: str | Path,
    model_cfg: ModelConfig,
    heldout_fraction: float = 0.2,
    split_seed: int = 12346,
    skg_path: str | Path | None = None,
) -> Experiment:
    """Build an Experiment from on-disk files (the CLI ingestion path)."""
    from .audio import MfccConfig, compute_mfcc, read_wav
    from .features import load_manifest
    from .sentiment import load_skg

    descriptors = load_manifest(manifest_path)
    samples = []
    for desc in descriptors:
        if desc.audio_is_wav:
            rate, pcm = read_wav(desc.audio_path)
            mfcc_cfg = MfccConfig(sample_rate=rate)
            coeffs = compute_mfcc(pcm, mfcc_cfg)
            audio = FeatureSequence("audio", coeffs.shape[1], coeffs)
        else:
            audio = desc.load_feature("audio")
        samples.append(
            VideoSample(
                id=desc.id,
                label=desc.label,
                video_feat=desc.load_feature("video"),
                face_feat=desc.load_feature("face"),
                audio_feat=audio,
                text_feat=desc.load_feature("text"),
                comments=desc.load_comments(),
            )
        )
    rng = np.random.default_rng(split_seed)
    train_raw, heldout_raw = stratified_split(samples, heldout_fraction, rng)
    if not heldout_raw:
        heldout_raw = train_raw
    corpus = [segment(rec.text) for s in train_raw for rec in clean_comments(s.comments)]
    vocab = build_vocab(corpus, min_freq=model_cfg.min_freq, max_size=model_cfg.vocab_size)
    embedder = HashEmbedder(dim=model_cfg.sentiment_dim)
    if skg_path is not None:
        store = load_skg(skg_path, embedder)
    else:
        store = build_store([SentimentTriple(a, w, p) for a, w, p in SKG_TRIPLES], embedder)
    prepared_train = [prepare_sample(s, model_cfg, vocab, store, embedder) for s in train_raw]
    prepared_heldout = [prepare_sample(s, model_cfg, vocab, store, embedder) for s in heldout_raw]
    return Experiment(
        model_cfg=model_cfg,
        train_samples=prepared_train,
        heldout_samples=prepared_heldout,
        vocab_len=len(vocab),
        store=store,
        raw_train=train_raw,
        raw_heldout=heldout_raw,
    )
