"""Acceptance suite: one test per release criterion, at pinned tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS/FAIL line
per criterion. The end-to-end experiment (criterion 6) trains the full
four-variant ablation grid over five seeds and is the slow part.
"""

import json
import math
import time

import numpy as np
import pytest
import torch

from cpcl import gradcheck
from cpcl.alignment import MmdConfig, mmd, rot_solve, total_mmd_loss
from cpcl.classifier import FocalConfig, focal_loss, total_loss
from cpcl.comments import clean_comments, encode_comment_batch, build_vocab, textcnn_score
from cpcl.evaluation import compute_metrics, paired_t_test, run_ablation
from cpcl.features import CommentRecord
from cpcl.model import save_params
from cpcl.synthetic import (
    SyntheticConfig,
    build_experiment,
    experiment_train_config,
)
from cpcl.training import (
    SplitDataset,
    TrainConfig,
    adamw_step,
    AdamState,
    cosine_lr,
    train_one_seed,
    write_epoch_log,
)


def report(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[{status}] {name}{suffix}")
    assert ok, f"{name}{suffix}"


# --- criterion 1: gradient suite ---------------------------------------------


def test_gradient_suite():
    t0 = time.time()
    worst = gradcheck.run_all(seeds=(0, 1, 2, 3, 4), perturbation=1e-5)
    elapsed = time.time() - t0
    assert set(worst) == {
        "lift_audio", "concat_project", "fsf_gate", "ssm_encode", "textcnn_score",
        "sentiment_head", "fuse_and_classify", "focal_loss", "total_mmd_loss",
    }
    bad = {op: err for op, err in worst.items() if err > 1e-4}
    report(
        "gradient suite: 9 ops x 5 instances, rel err <= 1e-4, < 60 s",
        not bad and elapsed < 60.0,
        f"max={max(worst.values()):.2e}, {elapsed:.1f}s",
    )


# --- criterion 2: transport suite ----------------------------------------------


def test_transport_suite():
    rng = np.random.default_rng(10)
    ok = True
    for _ in range(5):
        plan = rot_solve(rng.uniform(0, 2, (10, 10)), epsilon=0.1, tau=math.inf,
                         max_iters=500, tol=1e-6)
        row_v = np.max(np.abs(plan.matrix.sum(axis=1) - 0.1))
        col_v = np.max(np.abs(plan.matrix.sum(axis=0) - 0.1))
        ok &= plan.converged and max(row_v, col_v) < 1e-6

    C = np.array([[0.0, 1.0], [1.0, 0.0]])
    plan = rot_solve(C, epsilon=0.01, tau=math.inf, max_iters=2000, tol=1e-9)
    off_support = plan.matrix[0, 1] + plan.matrix[1, 0]  # LP optimum is diagonal
    ok &= off_support < 1e-3
    report("transport suite: balanced marginals < 1e-6; 2x2 LP support", ok,
           f"off-support mass {off_support:.1e}")


# --- criterion 3: mmd suite -------------------------------------------------------


def test_mmd_suite():
    rng = np.random.default_rng(11)
    cfg = MmdConfig(bandwidths=(1.0,))
    x = torch.from_numpy(rng.standard_normal((6, 3)))
    y = torch.from_numpy(rng.standard_normal((4, 3)))

    self_zero = float(mmd(x, x.clone(), cfg)) <= 1e-12
    symmetric = float(mmd(x, y, cfg)) == float(mmd(y, x, cfg))

    hand = float(mmd(torch.tensor([[0.0]], dtype=torch.float64),
                     torch.tensor([[1.0]], dtype=torch.float64), cfg))
    hand_ok = abs(hand - (2.0 - 2.0 * math.exp(-0.5))) < 1e-9

    seqs = [torch.from_numpy(rng.standard_normal((5, 3))) for _ in range(4)]
    total = float(total_mmd_loss(*seqs, cfg))
    additive = abs(total - sum(float(mmd(s, seqs[3], cfg)) for s in seqs[:3])) < 1e-12
    report("mmd suite: self-zero, exact symmetry, hand value, additivity",
           self_zero and symmetric and hand_ok and additive,
           f"hand={hand:.6f}")


# --- criterion 4: loss/schedule suite -----------------------------------------------


def test_loss_schedule_suite():
    rng = np.random.default_rng(12)
    cfg0 = FocalConfig(gamma=0.0, alpha=(0.35, 0.65))
    focal_ce = True
    for _ in range(1000):
        p1 = float(rng.uniform(1e-6, 1 - 1e-6))
        label = int(rng.integers(0, 2))
        probs = torch.tensor([1 - p1, p1], dtype=torch.float64)
        p = p1 if label == 1 else 1 - p1
        focal_ce &= abs(float(focal_loss(probs, label, cfg0))
                        - (-cfg0.alpha[label] * math.log(p))) < 1e-12

    tc = TrainConfig()
    cos_ok = (
        cosine_lr(0, tc) == tc.eta_max
        and cosine_lr(75, tc) == pytest.approx(1e-6, abs=1e-18)
        and abs(cosine_lr(25, tc) - (tc.eta_min + 0.75 * (tc.eta_max - tc.eta_min))) < 1e-15
    )

    theta = torch.tensor([1.0], dtype=torch.float64)
    adamw_step({"p": theta}, {"p": torch.ones(1, dtype=torch.float64)},
               AdamState(), lr=1e-3, cfg=TrainConfig(weight_decay=1e-3))
    adamw_ok = abs(float(theta[0]) - 0.998999) < 1e-9

    total_ok = total_loss(0.5, 0.2, 0.3) == 0.56
    report("loss/schedule suite: focal==CE (gamma 0), cosine points, AdamW step, Eq.6 sum",
           focal_ce and cos_ok and adamw_ok and total_ok,
           f"theta'={float(theta[0]):.9f}")


# --- criterion 5: metrics suite -------------------------------------------------------


def bruteforce_counts(preds, labels):
    tp = sum(p == 1 and y == 1 for p, y in zip(preds, labels))
    fp = sum(p == 1 and y == 0 for p, y in zip(preds, labels))
    tn = sum(p == 0 and y == 0 for p, y in zip(preds, labels))
    fn = sum(p == 0 and y == 1 for p, y in zip(preds, labels))
    return tp, fp, tn, fn


def test_metrics_suite():
    from scipy import stats

    rng = np.random.default_rng(13)
    metrics_ok = True
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        preds = rng.integers(0, 2, n).tolist()
        labels = rng.integers(0, 2, n).tolist()
        r = compute_metrics(preds, labels)
        tp, fp, tn, fn = bruteforce_counts(preds, labels)

        def div(a, b):
            return a / b if b else 0.0

        def f1(p_, r_):
            return div(2 * p_ * r_, p_ + r_) if p_ + r_ else 0.0

        metrics_ok &= (r.tp, r.fp, r.tn, r.fn) == (tp, fp, tn, fn)
        metrics_ok &= r.accuracy == (tp + tn) / n
        metrics_ok &= r.precision == div(tp, tp + fp)
        metrics_ok &= r.recall == div(tp, tp + fn)
        metrics_ok &= r.macro_f1 == 0.5 * (
            f1(div(tn, tn + fn), div(tn, tn + fp)) + f1(div(tp, tp + fp), div(tp, tp + fn))
        )

    ttest_ok = True
    count = 0
    while count < 100:
        n = int(rng.integers(2, 25))
        a = rng.standard_normal(n)
        b = rng.standard_normal(n)
        if np.var(a - b, ddof=1) == 0.0:
            continue
        count += 1
        t, p = paired_t_test(a.tolist(), b.tolist())
        ref = stats.ttest_rel(a, b)
        ttest_ok &= abs(p - ref.pvalue) < 1e-6 and abs(t - ref.statistic) < 1e-6
    report("metrics suite: exact confusion oracle x1000; t-test vs reference (1e-6) x100",
           metrics_ok and ttest_ok)


# --- criterion 6: end-to-end synthetic experiment ----------------------------------------


@pytest.fixture(scope="module")
def experiment():
    return build_experiment(SyntheticConfig())


@pytest.fixture(scope="module")
def ablation_result(experiment):
    ds = SplitDataset(train=experiment.train_samples, heldout=experiment.heldout_samples)
    t0 = time.time()
    table = run_ablation(ds, experiment.model_cfg, experiment_train_config(),
                         store=experiment.store, vocab_len=experiment.vocab_len)
    return table, time.time() - t0


def test_end_to_end_accuracy_and_runtime(experiment, ablation_result):
    table, elapsed = ablation_result
    labels = [s.label for s in experiment.train_samples + experiment.heldout_samples]
    n1 = sum(labels)
    balance_ok = len(labels) == 200 and n1 == 80  # 60/40 split

    full = table.rows[0]
    mean_acc = full.mean_metrics["accuracy"]
    report(
        "end-to-end: 200 samples, 5 seeds, mean held-out accuracy >= 0.95, < 10 min",
        balance_ok and mean_acc >= 0.95 and elapsed < 600.0,
        f"acc={mean_acc:.3f}, {elapsed:.0f}s for the full grid",
    )


def test_ablation_direction(ablation_result):
    table, _ = ablation_result
    full, no_comment, no_sentiment, neither = (r.per_seed_accuracy for r in table.rows)
    good_seeds = 0
    for f, nc, ns, nb in zip(full, no_comment, no_sentiment, neither):
        ordered = f >= nc >= nb and f >= ns >= nb
        largest_drop = (f - nb) >= max(f - nc, f - ns)
        good_seeds += ordered and largest_drop
    report(
        "ablation direction: full >= single-removed >= both-removed in >= 4/5 seeds",
        good_seeds >= 4,
        f"{good_seeds}/5 seeds ordered; means "
        + ", ".join(f"{r.mean_metrics['accuracy']:.3f}" for r in table.rows),
    )


# --- criterion 7: determinism ----------------------------------------------------------


def test_determinism_bitwise(experiment, tmp_path):
    ds = SplitDataset(train=experiment.train_samples, heldout=experiment.heldout_samples)
    cfg = experiment_train_config(epochs=3, seeds=(0,))
    artifacts = []
    for run in ("a", "b"):
        result = train_one_seed(ds, experiment.model_cfg, cfg, seed=0,
                                store=experiment.store, vocab_len=experiment.vocab_len)
        log_path = tmp_path / f"log_{run}.jsonl"
        par_path = tmp_path / f"params_{run}.bin"
        write_epoch_log(result.log, log_path)
        save_params(result.params, par_path)
        artifacts.append((log_path.read_bytes(), par_path.read_bytes()))
    report("determinism: identical config+seed -> bitwise-identical logs and snapshots",
           artifacts[0] == artifacts[1])


# --- criterion 8: comment pipeline -------------------------------------------------------


def test_comment_pipeline_criteria():
    rng = np.random.default_rng(14)
    alphabet = list("加油好人孩子可怜真的视频太惨了😀😂👍!?。，~123abcxyzＡＢ　 \t")
    corpus = [
        CommentRecord("".join(rng.choice(alphabet) for _ in range(int(rng.integers(0, 14)))),
                      int(rng.integers(1, 3)))
        for _ in range(1000)
    ]
    once = clean_comments(corpus)
    idempotent = clean_comments(once) == once

    vocab = build_vocab([list("加油好人孩子可怜")], min_freq=1, max_size=100)
    lengths_ok = True
    for _ in range(50):
        k = int(rng.integers(0, 8))
        comments = [CommentRecord("".join(rng.choice(list("加油好人孩子可怜")))
                                  * int(rng.integers(1, 9)), 1) for _ in range(k)]
        L = int(rng.integers(4, 60))
        encoded = encode_comment_batch(comments, vocab, length=L)
        lengths_ok &= len(encoded) == L and all(0 <= i < len(vocab) for i in encoded)

    distribution_ok = True
    for seed in range(20):
        r2 = np.random.default_rng(100 + seed)
        p = _random_cnn(r2)
        idx = r2.integers(0, p.embedding.shape[0], size=12).tolist()
        probs = textcnn_score(idx, p)
        distribution_ok &= abs(float(probs.sum()) - 1.0) < 1e-12
        distribution_ok &= bool(torch.all((probs > 0) & (probs < 1)))

    report("comment pipeline: idempotent cleaning x1000, exact encode length, TextCNN distribution",
           idempotent and lengths_ok and distribution_ok)


def _random_cnn(rng):
    from cpcl.comments import TextCnnParams

    e, filters = 6, 5
    t = lambda *s: torch.from_numpy(0.6 * rng.standard_normal(s))
    return TextCnnParams(
        embedding=t(14, e),
        conv_w={w: t(filters, e, w) for w in (2, 3, 4)},
        conv_b={w: t(filters) for w in (2, 3, 4)},
        head_w=t(3 * filters, 2),
        head_b=t(2),
    )
