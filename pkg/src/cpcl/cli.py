"""Command-line entry point.

Subcommands: featurize, clean-comments, build-vocab, train, eval, ablate,
gradcheck. Configuration is one JSON document with every constant
defaulted and overridable. Exit codes: 0 success, 2 usage/config error,
3 numeric failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import torch

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_VERIFICATION = 4


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Flat JSON-facing view over the module configs."""

    # optimization
    epochs: int = 150
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-3
    eta_max: float = 1e-4
    eta_min: float = 1e-6
    t_max: int = 75
    batch_size: int = 8
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    lambda_mmd: float = 0.3
    adam_eps: float = 1e-8
    # alignment
    epsilon: float = 0.05
    tau: float = 1.0
    rot_max_iters: int = 200
    rot_tol: float = 1e-6
    mmd_bandwidths: list[float] | None = None  # None: median heuristic
    # model dims
    d: int = 768
    audio_in_dim: int = 40
    d_model: int = 128
    d_state: int = 16
    d_gate: int = 64
    embed_dim: int = 64
    seq_len: int = 128
    max_comments: int = 64
    vocab_size: int = 5000
    min_freq: int = 1
    sentiment_dim: int = 64
    focal_gamma: float = 2.0
    # mfcc
    sample_rate: int = 16000
    frame_len: int = 400
    hop: int = 160
    n_fft: int = 512
    n_mels: int = 40
    n_mfcc: int = 40
    # data
    dataset_kind: str = "synthetic"  # or "manifest"
    manifest: str | None = None
    skg: str | None = None
    vocab: str | None = None
    heldout_fraction: float = 0.2
    synthetic_samples: int = 200
    synthetic_shift: float = 0.2
    synthetic_seed: int = 12345
    out_dir: str = "out"


def load_run_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Strict JSON parse: unknown keys are config errors."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    cfg = RunConfig(**data)
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


def _model_config(cfg: RunConfig):
    from .alignment import MmdConfig, RotConfig
    from .classifier import FocalConfig
    from .model import ModelConfig

    mmd = (
        MmdConfig(bandwidths=tuple(cfg.mmd_bandwidths))
        if cfg.mmd_bandwidths
        else MmdConfig()
    )
    return ModelConfig(
        d=cfg.d,
        audio_in_dim=cfg.audio_in_dim,
        d_model=cfg.d_model,
        d_state=cfg.d_state,
        d_gate=cfg.d_gate,
        embed_dim=cfg.embed_dim,
        seq_len=cfg.seq_len,
        max_comments=cfg.max_comments,
        vocab_size=cfg.vocab_size,
        min_freq=cfg.min_freq,
        sentiment_dim=cfg.sentiment_dim,
        rot=RotConfig(
            epsilon=cfg.epsilon, tau=cfg.tau, max_iters=cfg.rot_max_iters, tol=cfg.rot_tol
        ),
        mmd=mmd,
        focal=FocalConfig(gamma=cfg.focal_gamma),
        lambda_mmd=cfg.lambda_mmd,
    )


def _train_config(cfg: RunConfig):
    from .training import TrainConfig

    return TrainConfig(
        epochs=cfg.epochs,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        weight_decay=cfg.weight_decay,
        eta_max=cfg.eta_max,
        eta_min=cfg.eta_min,
        t_max=cfg.t_max,
        batch_size=cfg.batch_size,
        seeds=tuple(cfg.seeds),
        lambda_mmd=cfg.lambda_mmd,
        adam_eps=cfg.adam_eps,
    )


def _build_experiment(cfg: RunConfig):
    from .synthetic import (
        SyntheticConfig,
        build_experiment,
        experiment_from_manifest,
        experiment_model_config,
    )

    if cfg.dataset_kind == "manifest":
        if not cfg.manifest:
            raise ConfigError("dataset_kind 'manifest' requires a manifest path")
        return experiment_from_manifest(
            cfg.manifest,
            _model_config(cfg),
            heldout_fraction=cfg.heldout_fraction,
            skg_path=cfg.skg,
        )
    if cfg.dataset_kind == "synthetic":
        syn = SyntheticConfig(
            n_samples=cfg.synthetic_samples,
            shift=cfg.synthetic_shift,
            heldout_fraction=cfg.heldout_fraction,
            seed=cfg.synthetic_seed,
        )
        return build_experiment(syn, experiment_model_config(syn))
    raise ConfigError(f"unknown dataset_kind {cfg.dataset_kind!r}")


def _featurize_one(wav: Path, out: Path, cfg: RunConfig) -> tuple[int, int]:
    from .audio import MfccConfig, compute_mfcc, read_wav
    from .features import FeatureSequence, write_feature_file

    rate, samples = read_wav(wav)
    mfcc_cfg = MfccConfig(
        sample_rate=rate,
        frame_len=cfg.frame_len,
        hop=cfg.hop,
        n_fft=cfg.n_fft,
        n_mels=cfg.n_mels,
        n_mfcc=cfg.n_mfcc,
    )
    coeffs = compute_mfcc(samples, mfcc_cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_feature_file(FeatureSequence("audio", coeffs.shape[1], coeffs), out)
    return coeffs.shape


def cmd_featurize(args: argparse.Namespace) -> int:
    """One WAV, or every WAV referenced by a .jsonl manifest."""
    from .features import load_manifest

    cfg = load_run_config(args.config)
    src = Path(args.wav)
    if not src.exists():
        print(f"error: no such file: {src}", file=sys.stderr)
        return EXIT_CONFIG
    if src.suffix == ".jsonl":
        count = 0
        for desc in load_manifest(src):
            if desc.audio_is_wav:
                n, d = _featurize_one(desc.audio_path,
                                      desc.audio_path.with_suffix(".feat"), cfg)
                count += 1
                print(f"wrote {desc.audio_path.with_suffix('.feat')}: n={n} dim={d}")
        print(f"featurized {count} wav file(s)")
        return EXIT_OK
    out = Path(args.out or src.with_suffix(".feat"))
    n, d = _featurize_one(src, out, cfg)
    print(f"wrote {out}: n={n} dim={d}")
    return EXIT_OK


def cmd_clean_comments(args: argparse.Namespace) -> int:
    from .comments import clean_comments
    from .features import CommentRecord

    in_path = Path(args.input)
    if not in_path.exists():
        print(f"error: no such file: {in_path}", file=sys.stderr)
        return EXIT_CONFIG
    records = []
    with open(in_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            records.append(CommentRecord(obj["text"], obj.get("level", 1)))
    cleaned = clean_comments(records)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for rec in cleaned:
            fh.write(json.dumps({"text": rec.text, "level": rec.level},
                                ensure_ascii=False) + "\n")
    summary = {"input": len(records), "kept": len(cleaned),
               "dropped": len(records) - len(cleaned)}
    print(json.dumps(summary))
    return EXIT_OK


def cmd_build_vocab(args: argparse.Namespace) -> int:
    from .comments import build_vocab, segment
    from .features import CommentRecord
    from .comments import clean_comments

    cfg = load_run_config(args.config)
    in_path = Path(args.input)
    if not in_path.exists():
        print(f"error: no such file: {in_path}", file=sys.stderr)
        return EXIT_CONFIG
    records = []
    with open(in_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                records.append(CommentRecord(obj["text"], obj.get("level", 1)))
    corpus = [segment(rec.text) for rec in clean_comments(records)]
    vocab = build_vocab(corpus, min_freq=cfg.min_freq, max_size=cfg.vocab_size)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(out)
    print(f"wrote {out}: {len(vocab)} tokens")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    from .model import save_params
    from .training import SplitDataset, TrainingDivergenceError, train, write_epoch_log

    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seeds=[args.seed])
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    exp = _build_experiment(cfg)
    ds = SplitDataset(train=exp.train_samples, heldout=exp.heldout_samples)
    try:
        result = train(ds, exp.model_cfg, _train_config(cfg), store=exp.store,
                       vocab_len=exp.vocab_len)
    except TrainingDivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for seed_result in result.per_seed:
        write_epoch_log(seed_result.log, out / f"log_seed{seed_result.seed}.jsonl")
        save_params(seed_result.params, out / f"params_seed{seed_result.seed}.bin")
    (out / "metrics.json").write_text(
        json.dumps(result.mean_metrics, indent=2), encoding="utf-8"
    )
    print(json.dumps(result.mean_metrics))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    from .evaluation import compute_metrics

    preds_path = Path(args.preds)
    if not preds_path.exists():
        print(f"error: no such file: {preds_path}", file=sys.stderr)
        return EXIT_CONFIG
    preds, labels = [], []
    with open(preds_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                preds.append(int(obj["pred"]))
                labels.append(int(obj["label"]))
    report = compute_metrics(preds, labels)
    out = json.dumps(report.to_dict(), indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(out, encoding="utf-8")
    print(report.to_text())
    print(out)
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    from .evaluation import run_ablation
    from .training import SplitDataset, TrainingDivergenceError

    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seeds=[args.seed])
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    exp = _build_experiment(cfg)
    ds = SplitDataset(train=exp.train_samples, heldout=exp.heldout_samples)
    try:
        table = run_ablation(ds, exp.model_cfg, _train_config(cfg), store=exp.store,
                             vocab_len=exp.vocab_len)
    except TrainingDivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(table.to_json(), encoding="utf-8")
    (out / "ablation.txt").write_text(table.to_text() + "\n", encoding="utf-8")
    print(table.to_text())
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    from .gradcheck import run_all

    seeds = tuple(range(args.instances)) if args.instances else (0, 1, 2, 3, 4)
    results = run_all(seeds=seeds)
    worst = max(results.values())
    report = {"ops": results, "max_rel_err": worst, "threshold": 1e-4}
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(report, indent=2), encoding="utf-8")
    for op, err in results.items():
        status = "ok" if err <= 1e-4 else "FAIL"
        print(f"{op:20s} {err:.3e} {status}")
    if worst > 1e-4:
        return EXIT_VERIFICATION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpcl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="WAV -> MFCC audio feature file")
    p.add_argument("wav")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("clean-comments", help="clean a comment JSONL file")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_clean_comments)

    p = sub.add_parser("build-vocab", help="build a vocabulary from comments")
    p.add_argument("input")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train the full pipeline")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics from a predictions JSONL")
    p.add_argument("--preds", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the four-variant ablation grid")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--instances", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    threads = os.environ.get("CPCL_THREADS")
    if threads:
        try:
            torch.set_num_threads(max(1, int(threads)))
        except ValueError:
            print(f"error: CPCL_THREADS must be an integer, got {threads!r}",
                  file=sys.stderr)
            return EXIT_CONFIG
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
