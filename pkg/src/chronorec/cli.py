"""Command-line entry point: ``chronorec <command> [options] [--field value ...]``.

Training fields (see ``TrainConfig``), data fields (``period_days``,
``period_origin``, ``scale``) and synthetic-data fields (see ``SynthConfig``)
can be given in a ``key = value`` file via ``--config`` and overridden with
``--field value`` pairs after the regular options.  ``CHRONOREC_SEED``
overrides the seed.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import checkpoint, config as cfgmod, data, metrics, recommender, synth, trainer
from .errors import (
    ChronoRecError,
    CheckpointFormatError,
    ConfigError,
    IncompatibleCheckpointError,
    ParseError,
)

log = logging.getLogger("chronorec")


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        out = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not out or any(n < 1 for n in out):
        raise argparse.ArgumentTypeError("cutoffs must be positive integers")
    return out


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"file not found: {p}")
    return p


def _settings(args, extra: list[str], *classes):
    values = cfgmod.read_config(_require(args.config)) if getattr(args, "config", None) else {}
    values.update(cfgmod.parse_overrides(extra))
    values = cfgmod.apply_seed_env(values)
    if getattr(args, "threads", None) is not None:
        values["threads"] = str(args.threads)
    parts = cfgmod.split_known(values, *classes)
    return [cfgmod.build(cls, part) for cls, part in zip(classes, parts)]


def _load_dataset(args, dcfg: cfgmod.DataConfig) -> data.PeriodizedDataset:
    interactions, catalog = data.ingest(_require(args.interactions), _require(args.attributes))
    holdout = None
    if getattr(args, "heldout", None):
        numbered = data.read_interactions(_require(args.heldout), with_lines=True)
        for lineno, r in numbered:
            if r.item not in catalog:
                raise ParseError(str(args.heldout), lineno, f"unknown item {r.item!r}")
        holdout = [r for _, r in numbered]
    return data.partition(
        interactions, catalog, dcfg.period_length, scale=dcfg.scale, origin=dcfg.origin, holdout=holdout
    )


def _add_data(p, heldout=True):
    p.add_argument("--interactions", required=True, help="user,item,value,timestamp file")
    p.add_argument("--attributes", required=True, help="item,attributes file")
    if heldout:
        p.add_argument("--heldout", help="optional held-out query interactions for cold users")


def _config_from_checkpoint(header: dict, extra_values: list[str], args) -> tuple[trainer.TrainConfig, cfgmod.DataConfig]:
    stored = {k: str(v) for k, v in header.get("config", {}).items()}
    train_stored = {k: v for k, v in stored.items() if k in trainer.TrainConfig.field_names()}
    data_stored = {k: v for k, v in stored.items() if k in {"period_days", "period_origin", "scale"}}
    values = cfgmod.read_config(_require(args.config)) if getattr(args, "config", None) else {}
    values.update(cfgmod.parse_overrides(extra_values))
    tpart, dpart = cfgmod.split_known(values, trainer.TrainConfig, cfgmod.DataConfig)
    train_stored.update(tpart)
    data_stored.update(dpart)
    if getattr(args, "threads", None) is not None:
        train_stored["threads"] = str(args.threads)
    return cfgmod.build(trainer.TrainConfig, train_stored), cfgmod.build(cfgmod.DataConfig, data_stored)


def _period(args, ds) -> int:
    t = args.period if args.period else ds.n_periods
    ds.check_period(t)
    return t


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, extra) -> int:
    (scfg,) = _settings(args, extra, synth.SynthConfig)
    paths = synth.generate(scfg, args.out)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_ingest_check(args, extra) -> int:
    (dcfg,) = _settings(args, extra, cfgmod.DataConfig)
    ds = _load_dataset(args, dcfg)
    tcfg = trainer.TrainConfig(k=args.k)
    print(f"items={ds.catalog.n_items} attributes={ds.catalog.n_attributes} users={len(ds.users)} "
          f"interactions={ds.count()} periods={ds.n_periods}")
    print("period,active_users,interactions,meta_train_users,meta_test_users")
    for t in range(1, ds.n_periods + 1):
        per = ds.by_period.get(t, {})
        try:
            train, test = data.split_users(ds, t, tcfg.k, tcfg.train_threshold, tcfg.cold_threshold)
        except ChronoRecError:
            train, test = [], []
        print(f"{t},{len(per)},{sum(len(v) for v in per.values())},{len(train)},{len(test)}")
    return 0


def cmd_train(args, extra) -> int:
    tcfg, dcfg = _settings(args, extra, trainer.TrainConfig, cfgmod.DataConfig)
    ds = _load_dataset(args, dcfg)
    params, trace = trainer.train_all(ds, tcfg)
    stored = asdict(tcfg)
    stored.pop("threads")  # execution setting, not part of the model
    stored.update(asdict(dcfg))
    digest = checkpoint.save(params, args.out, stored)
    if args.trace:
        trainer.write_trace(args.trace, trace)
    last = trace[-1].mean_query_loss if trace else float("nan")
    print(f"checkpoint: {args.out} sha256={digest} periods={sorted(params.theta)} final_loss={last:.6f}")
    return 0


def _load_checkpoint(args, extra, ds_needed=True):
    params, header = checkpoint.load(_require(args.checkpoint))
    tcfg, dcfg = _config_from_checkpoint(header, extra, args)
    ds = _load_dataset(args, dcfg)
    checkpoint.check_compatible(params, ds.catalog)
    return params, tcfg, ds


def cmd_evaluate(args, extra) -> int:
    params, tcfg, ds = _load_checkpoint(args, extra)
    t = _period(args, ds)
    reports = [metrics.evaluate(ds, params, t, tcfg, ns=args.ndcg_n, label=tcfg.variant)]
    if args.baselines:
        for kind in ("global_mean", "user_history_mean"):
            reports.append(metrics.baseline(kind, ds, t, tcfg, ns=args.ndcg_n))
    for rep in reports:
        print(rep.summary())
    if args.report:
        with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
            reports[0].write_csv(fh)
    return 0


def cmd_recommend(args, extra) -> int:
    params, tcfg, ds = _load_checkpoint(args, extra)
    t = _period(args, ds)
    if args.user not in ds.users:
        raise UsageError(f"unknown user {args.user!r}")
    if ds.events(args.user, t):
        ranked = recommender.adapt_and_recommend(args.user, t, params, ds, tcfg, top_n=args.top_n)
    else:
        ranked = recommender.recommend_no_interaction(args.user, t, params, ds, tcfg, top_n=args.top_n)
    recommender.write_recommendations(sys.stdout, ranked)
    return 0


def cmd_ablate(args, extra) -> int:
    tcfg, dcfg = _settings(args, extra, trainer.TrainConfig, cfgmod.DataConfig)
    ds = _load_dataset(args, dcfg)
    given = None
    if args.checkpoint:
        given, header = checkpoint.load(_require(args.checkpoint))
        checkpoint.check_compatible(given, ds.catalog)
        tcfg, _ = _config_from_checkpoint(header, extra, args)
    t = _period(args, ds)
    rows = []
    for variant in trainer.VARIANTS:
        cfg = trainer.with_variant(tcfg, variant)
        if given is not None and variant == given.meta_info.get("variant", "full"):
            params = given
        else:
            params, _ = trainer.train_all(ds, cfg)
        rep = metrics.evaluate(ds, params, t, cfg, ns=args.ndcg_n, label=variant)
        rows.append(rep)
    cols = [f"ndcg@{n}" for n in args.ndcg_n]
    lines = ["variant,rmse," + ",".join(cols)]
    for rep in rows:
        lines.append(",".join([rep.label, metrics._cell(rep.rmse)] + [metrics._cell(rep.ndcg[n]) for n in args.ndcg_n]))
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chronorec", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-factor synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest-check", help="validate data files and summarise periods")
    _add_data(p)
    p.add_argument("--config")
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=cmd_ingest_check)

    p = sub.add_parser("train", help="train all periods and write a checkpoint")
    _add_data(p, heldout=False)
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--trace", help="loss trace CSV path")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="RMSE and NDCG on the meta-test users of a period")
    _add_data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--period", type=int, default=0, help="period to evaluate (default: last)")
    p.add_argument("--ndcg-n", type=_int_list, default=[10])
    p.add_argument("--baselines", action="store_true", help="also report the constant baselines")
    p.add_argument("--report", help="per-user CSV report path")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recommend", help="top-N items for one user")
    _add_data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--user", required=True)
    p.add_argument("--period", type=int, default=0)
    p.add_argument("--top-n", type=int, default=10)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("ablate", help="compare full, ts_only and te_only variants")
    _add_data(p)
    p.add_argument("--checkpoint", help="reuse this checkpoint for its own variant")
    p.add_argument("--config")
    p.add_argument("--period", type=int, default=0)
    p.add_argument("--ndcg-n", type=_int_list, default=[10])
    p.add_argument("--out", help="write the comparison table here as well")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    if getattr(args, "top_n", 1) is not None and getattr(args, "top_n", 1) < 1:
        print("error: --top-n must be positive", file=sys.stderr)
        return 2
    if getattr(args, "threads", None) is None and args.command in ("train", "evaluate", "recommend", "ablate"):
        args.threads = trainer.default_threads()
    try:
        return args.func(args, extra)
    except (UsageError, ConfigError, ParseError, CheckpointFormatError, IncompatibleCheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except (ChronoRecError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
