"""NDCG@N for N = 1..20 and the per-epoch loss trace of one trained model.

    python3 scripts/ndcg_curve.py --seed 0 --out results/
"""

import argparse
from pathlib import Path

from chronorec import data, metrics, synth, trainer


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-n", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()

    sc = synth.SynthConfig(seed=args.seed)
    sd = synth.generate_data(sc)
    ds = data.partition(sd.interactions, sd.catalog, sc.period_length, holdout=sd.heldout)
    cfg = trainer.reference_config(seed=args.seed, epochs=args.epochs)
    params, trace = trainer.train_all(ds, cfg)

    ns = list(range(1, args.max_n + 1))
    args.out.mkdir(parents=True, exist_ok=True)
    trainer.write_trace(args.out / "loss_trace.csv", trace)
    reports = [metrics.evaluate(ds, params, ds.n_periods, cfg, ns=ns)]
    reports += [metrics.baseline(k, ds, ds.n_periods, cfg, ns=ns) for k in ("global_mean", "user_history_mean")]
    with (args.out / "ndcg_curve.csv").open("w") as fh:
        fh.write("n," + ",".join(r.label for r in reports) + "\n")
        for n in ns:
            fh.write(f"{n}," + ",".join(metrics._cell(r.ndcg[n]) for r in reports) + "\n")
    for r in reports:
        print(r.summary())
    print(f"wrote {args.out / 'ndcg_curve.csv'} and {args.out / 'loss_trace.csv'}")


if __name__ == "__main__":
    main()
