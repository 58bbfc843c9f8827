"""Classification metrics, paired significance testing, and the ablation grid.

Recall/precision are reported for the positive class (label 1); macro F1
averages both classes. Zero-denominator metrics are 0 and set a warning
flag. The t-distribution CDF is evaluated through the regularized
incomplete beta function (modified Lentz continued fraction), accurate to
well below 1e-8.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

from .features import InvariantError

if TYPE_CHECKING:  # avoid an import cycle with training
    from .model import ModelConfig
    from .sentiment import TripleStore
    from .training import SplitDataset, TrainConfig


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    recall: float
    precision: float
    tp: int
    fp: int
    tn: int
    fn: int
    zero_division: bool = False

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "recall": self.recall,
            "precision": self.precision,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "zero_division": self.zero_division,
        }

    def to_text(self) -> str:
        """Aligned table with the usual four metric columns."""
        header = f"{'Accuracy':>10}  {'F1_m':>8}  {'Recall':>8}  {'Precision':>10}"
        row = (f"{self.accuracy:>10.4f}  {self.macro_f1:>8.4f}  "
               f"{self.recall:>8.4f}  {self.precision:>10.4f}")
        return header + "\n" + row


def _f1(prec: float, rec: float) -> float:
    return 0.0 if prec + rec == 0 else 2.0 * prec * rec / (prec + rec)


def compute_metrics(preds: Sequence[int], labels: Sequence[int]) -> MetricsReport:
    """Accuracy, macro F1, positive-class recall/precision from counts."""
    if len(preds) != len(labels):
        raise InvariantError(f"length mismatch: {len(preds)} vs {len(labels)}")
    if len(preds) < 1:
        raise InvariantError("need at least one prediction")
    tp = fp = tn = fn = 0
    for p, y in zip(preds, labels):
        if p not in (0, 1) or y not in (0, 1):
            raise InvariantError("predictions and labels must be 0/1")
        if p == 1 and y == 1:
            tp += 1
        elif p == 1 and y == 0:
            fp += 1
        elif p == 0 and y == 0:
            tn += 1
        else:
            fn += 1
    n = len(preds)
    zero_division = False

    def safe_div(num: int, den: int) -> float:
        nonlocal zero_division
        if den == 0:
            zero_division = True
            return 0.0
        return num / den

    prec1 = safe_div(tp, tp + fp)
    rec1 = safe_div(tp, tp + fn)
    prec0 = safe_div(tn, tn + fn)
    rec0 = safe_div(tn, tn + fp)
    return MetricsReport(
        accuracy=(tp + tn) / n,
        macro_f1=0.5 * (_f1(prec0, rec0) + _f1(prec1, rec1)),
        recall=rec1,
        precision=prec1,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        zero_division=zero_division,
    )


_BETACF_MAX_ITER = 300
_BETACF_EPS = 1e-15
_FPMIN = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, dof: int) -> float:
    """Two-sided tail probability P(|T| >= |t|) for T ~ Student-t(dof)."""
    return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Paired t statistic and two-sided p-value.

    Raises on identical differences (zero standard deviation), where the
    statistic is undefined.
    """
    if len(a) != len(b):
        raise InvariantError("paired samples must have equal length")
    n = len(a)
    if n < 2:
        raise InvariantError("need at least two pairs")
    d = [x - y for x, y in zip(a, b)]
    mean = sum(d) / n
    var = sum((x - mean) ** 2 for x in d) / (n - 1)
    if var == 0.0:
        raise InvariantError("degenerate case: all paired differences identical")
    t = mean / math.sqrt(var / n)
    return t, student_t_sf(t, n - 1)


ABLATION_VARIANTS = (
    ("Full Model", 1.0, 1.0),
    ("-- Comment Information Processing Module", 0.0, 1.0),
    ("-- Knowledge-Enhanced Sentiment Analysis Module", 1.0, 0.0),
    ("Without Both Modules", 0.0, 0.0),
)


@dataclass
class AblationRow:
    name: str
    mean_metrics: dict[str, float]
    per_seed_accuracy: list[float]
    accuracy_drop: float | None  # vs the full model; None for the full row


@dataclass
class AblationTable:
    rows: list[AblationRow] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            [
                {
                    "variant": r.name,
                    "metrics": r.mean_metrics,
                    "per_seed_accuracy": r.per_seed_accuracy,
                    "accuracy_drop": r.accuracy_drop,
                }
                for r in self.rows
            ],
            indent=2,
        )

    def to_text(self) -> str:
        width = max(len(r.name) for r in self.rows)
        lines = [f"{'Model Variant':<{width}}  Accuracy  Accuracy Drop (vs. Full Model)"]
        for r in self.rows:
            drop = "--" if r.accuracy_drop is None else f"{100 * r.accuracy_drop:.2f}%"
            lines.append(
                f"{r.name:<{width}}  {r.mean_metrics['accuracy']:.4f}    {drop}"
            )
        return "\n".join(lines)


def run_ablation(
    dataset: "SplitDataset",
    model_cfg: "ModelConfig",
    train_cfg: "TrainConfig",
    store: "TripleStore | None" = None,
    vocab_len: int | None = None,
) -> AblationTable:
    """Retrain the four branch-mask variants over all seeds."""
    from dataclasses import replace

    from .training import train

    table = AblationTable()
    full_accuracy = None
    for name, m_comment, m_sentiment in ABLATION_VARIANTS:
        cfg = replace(model_cfg, m_comment=m_comment, m_sentiment=m_sentiment)
        result = train(dataset, cfg, train_cfg, store=store, vocab_len=vocab_len)
        acc = result.mean_metrics["accuracy"]
        if full_accuracy is None:
            full_accuracy = acc
            drop = None
        else:
            drop = full_accuracy - acc
        table.rows.append(
            AblationRow(
                name=name,
                mean_metrics=result.mean_metrics,
                per_seed_accuracy=[r.metrics.accuracy for r in result.per_seed],
                accuracy_drop=drop,
            )
        )
    return table
