"""RMSE of cold users with and without their current-period interactions.

Trains the full model, then deletes every current-period interaction of 20
random cold users and scores their held-out items through the
no-interaction path (period-global input, no adaptation).

    python3 scripts/no_interaction.py --seeds 0 1 2
"""

import argparse

import numpy as np

from chronorec import data, metrics, synth, trainer


def gap_for_seed(seed: int, n_users: int, epochs: int = 40) -> tuple[float, float]:
    sc = synth.SynthConfig(seed=seed)
    sd = synth.generate_data(sc)
    ds = data.partition(sd.interactions, sd.catalog, sc.period_length, holdout=sd.heldout)
    T = ds.n_periods
    cfg = trainer.reference_config(epochs=epochs)
    params, _ = trainer.train_all(ds, cfg)
    users = sorted(np.random.default_rng(seed).choice(metrics.meta_test_users(ds, T, cfg), n_users, replace=False))
    start = sc.origin + (T - 1) * sc.period_length
    kept = [r for r in sd.interactions if not (r.user in set(users) and r.timestamp >= start)]
    stripped = data.partition(kept, sd.catalog, sc.period_length, holdout=sd.heldout)
    with_rmse = metrics.evaluate(ds, params, T, cfg, users=list(users)).rmse
    without_rmse = metrics.evaluate(stripped, params, T, cfg, users=list(users)).rmse
    return with_rmse, without_rmse


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--users", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=40)
    args = ap.parse_args()
    gaps = []
    for seed in args.seeds:
        a, b = gap_for_seed(seed, args.users, args.epochs)
        gaps.append(b / a - 1)
        print(f"seed {seed}: with {a:.4f}  without {b:.4f}  degradation {gaps[-1]:+.1%}", flush=True)
    print(f"median degradation {np.median(gaps):+.1%}")


if __name__ == "__main__":
    main()
