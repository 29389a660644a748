"""Full model against its two single-factor variants and the constant baselines.

Trains every variant on the reference synthetic dataset for each seed and
writes one CSV row per (seed, model) plus a median summary to stdout.

    python3 scripts/run_ablation.py --seeds 0 1 2 --out results/ablation.csv
"""

import argparse
import csv
import time
from pathlib import Path

import numpy as np

from chronorec import data, metrics, synth, trainer


def run_seed(seed: int, epochs: int, ns):
    sc = synth.SynthConfig(seed=seed)
    sd = synth.generate_data(sc)
    ds = data.partition(sd.interactions, sd.catalog, sc.period_length, holdout=sd.heldout)
    T = ds.n_periods
    base = trainer.reference_config(epochs=epochs)
    rows = []
    for variant in trainer.VARIANTS:
        cfg = trainer.with_variant(base, variant)
        start = time.perf_counter()
        params, _ = trainer.train_all(ds, cfg)
        rep = metrics.evaluate(ds, params, T, cfg, ns=ns, label=variant)
        rows.append((seed, variant, rep, time.perf_counter() - start))
        print(f"seed {seed} {rep.summary()} ({rows[-1][3]:.0f} s)", flush=True)
    for kind in ("global_mean", "user_history_mean"):
        rep = metrics.baseline(kind, ds, T, base, ns=ns)
        rows.append((seed, kind, rep, 0.0))
        print(f"seed {seed} {rep.summary()}", flush=True)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--ndcg-n", type=int, nargs="+", default=[10])
    ap.add_argument("--out", type=Path, default=Path("results/ablation.csv"))
    args = ap.parse_args()

    rows = [r for s in args.seeds for r in run_seed(s, args.epochs, args.ndcg_n)]
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with args.out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "model", "rmse"] + [f"ndcg@{n}" for n in args.ndcg_n] + ["seconds"])
        for seed, model, rep, secs in rows:
            w.writerow([seed, model, rep.rmse] + [rep.ndcg[n] for n in args.ndcg_n] + [round(secs, 1)])

    print("\nmedian over seeds")
    models = list(dict.fromkeys(m for _, m, _, _ in rows))
    full = np.median([rep.rmse for _, m, rep, _ in rows if m == "full"])
    for model in models:
        med = np.median([rep.rmse for _, m, rep, _ in rows if m == model])
        print(f"  {model:18s} RMSE {med:.4f}  full is {1 - full / med:+.1%} better")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
