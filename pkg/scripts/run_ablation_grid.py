#!/usr/bin/env python3
"""Retrain the four branch-mask variants over all seeds and print the
ablation table (plus per-seed accuracies and paired t-tests of each variant
against the full model)."""

import argparse
import json
import time
from pathlib import Path

from cpcl.evaluation import paired_t_test, run_ablation
from cpcl.synthetic import SyntheticConfig, build_experiment, experiment_train_config
from cpcl.training import SplitDataset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/ablation")
    parser.add_argument("--epochs", type=int, default=18)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = parser.parse_args()

    exp = build_experiment(SyntheticConfig())
    ds = SplitDataset(train=exp.train_samples, heldout=exp.heldout_samples)
    t0 = time.time()
    table = run_ablation(ds, exp.model_cfg, experiment_train_config(
        epochs=args.epochs, seeds=tuple(args.seeds)), store=exp.store,
        vocab_len=exp.vocab_len)
    elapsed = time.time() - t0

    print(table.to_text())
    print()
    full = table.rows[0].per_seed_accuracy
    for row in table.rows[1:]:
        try:
            t, p = paired_t_test(full, row.per_seed_accuracy)
            print(f"{row.name}: t={t:.3f}, p={p:.4f}")
        except ValueError as exc:
            print(f"{row.name}: t-test degenerate ({exc})")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(table.to_json(), encoding="utf-8")
    (out / "ablation.txt").write_text(table.to_text() + "\n", encoding="utf-8")
    print(f"\nwrote {out}/ablation.json ({elapsed:.0f}s)")


if __name__ == "__main__":
    main()
