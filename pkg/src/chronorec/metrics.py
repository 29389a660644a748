"""RMSE / NDCG evaluation over the cold-start users of a period."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import PeriodizedDataset, split_users
from .errors import EmptyLossError
from .recommender import rank, user_vector
from .trainer import ParamSet, TrainConfig, predict


def rmse(predictions, observations) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    o = np.asarray(observations, dtype=np.float64)
    if p.shape != o.shape:
        raise ValueError(f"{p.shape} predictions vs {o.shape} observations")
    if p.size == 0:
        raise EmptyLossError("RMSE over an empty observation set")
    return math.sqrt(float(np.sum((p - o) ** 2)) / p.size)


def dcg(relevances, n: int) -> float:
    rel = np.asarray(relevances, dtype=np.float64)[:n]
    return float(np.sum(rel / np.log2(np.arange(2, rel.size + 2))))


def ndcg_at_n(ranked_relevances, n: int, ideal_relevances=None) -> float | None:
    """DCG of the ranking over DCG of the relevance-sorted ranking, both cut at ``n``.

    ``ideal_relevances`` defaults to the ranked relevances themselves.  Returns
    ``None`` when the ideal DCG is not positive (user not scorable).
    """
    if n <= 0:
        raise ValueError(f"cutoff must be positive, got {n}")
    pool = ranked_relevances if ideal_relevances is None else ideal_relevances
    ideal = dcg(sorted(pool, reverse=True), n)
    if ideal <= 0:
        return None
    return dcg(ranked_relevances, n) / ideal


def rating_relevance(values, lo: float, hi: float) -> np.ndarray:
    """Linear map of explicit ratings onto [-1, 1]."""
    v = np.asarray(values, dtype=np.float64)
    if hi == lo:
        return np.ones_like(v)
    return 2.0 * (v - lo) / (hi - lo) - 1.0


def value_range(dataset: PeriodizedDataset) -> tuple[float, float]:
    vals = [ev.value for per in dataset.by_period.values() for evs in per.values() for ev in evs]
    return min(vals), max(vals)


@dataclass
class UserRow:
    user: str
    n_support: int
    n_query: int
    sq_error: float
    ndcg: dict[int, float | None] = field(default_factory=dict)

    @property
    def rmse(self) -> float:
        return math.sqrt(self.sq_error / self.n_query) if self.n_query else float("nan")


@dataclass
class EvalReport:
    period: int
    rmse: float | None
    ndcg: dict[int, float | None]
    rows: list[UserRow]
    label: str = "model"

    @property
    def n_observations(self) -> int:
        return sum(r.n_query for r in self.rows)

    def summary(self) -> str:
        parts = [f"{self.label}: period {self.period}", f"users {len(self.rows)}", f"observations {self.n_observations}"]
        parts.append("RMSE " + (f"{self.rmse:.4f}" if self.rmse is not None else "n/a"))
        for n, v in sorted(self.ndcg.items()):
            parts.append(f"NDCG@{n} " + (f"{v:.4f}" if v is not None else "n/a"))
        return ", ".join(parts)

    def write_csv(self, fh) -> None:
        ns = sorted(self.ndcg)
        fh.write(",".join(["user", "n_support", "n_query", "rmse"] + [f"ndcg@{n}" for n in ns]) + "\n")
        for r in self.rows:
            cells = [r.user, str(r.n_support), str(r.n_query), _cell(r.rmse)]
            cells += [_cell(r.ndcg.get(n)) for n in ns]
            fh.write(",".join(cells) + "\n")
        cells = ["ALL", "", str(self.n_observations), _cell(self.rmse)] + [_cell(self.ndcg[n]) for n in ns]
        fh.write(",".join(cells) + "\n")


def _cell(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def query_events(dataset: PeriodizedDataset, user: str, t: int, k: int):
    """Held-out events when present, otherwise the non-support tail of the period."""
    held = dataset.heldout(user, t)
    if held:
        return held
    events = dataset.events(user, t)
    return events[k:]


def _assemble(dataset, t, per_user, ns, label, items_for_ranking):
    """per_user: list of (user, support items, query events, score vector over all items)."""
    lo, hi = value_range(dataset)
    implicit = dataset.scale == "implicit-log"
    rows, preds, obs = [], [], []
    for user, support, query, scores in per_user:
        q_items = [ev.item for ev in query]
        q_vals = np.array([ev.value for ev in query])
        q_pred = scores[q_items] if q_items else np.zeros(0)
        row = UserRow(user, len(support), len(query), float(np.sum((q_pred - q_vals) ** 2)))
        if q_items:
            preds.append(q_pred)
            obs.append(q_vals)
            if implicit:
                ranked = rank(scores, items_for_ranking, exclude=support)
                relevant = {dataset.catalog.items[i] for i in q_items}
                rel = [1.0 if it in relevant else 0.0 for it, _ in ranked]
            else:
                order = sorted(range(len(q_items)), key=lambda j: (-q_pred[j], items_for_ranking[q_items[j]]))
                rel = list(rating_relevance(q_vals, lo, hi)[order])
            for n in ns:
                row.ndcg[n] = ndcg_at_n(rel, n)
        rows.append(row)
    total = rmse(np.concatenate(preds), np.concatenate(obs)) if preds else None
    ndcg = {}
    for n in ns:
        vals = [r.ndcg[n] for r in rows if r.ndcg.get(n) is not None]
        ndcg[n] = float(np.mean(vals)) if vals else None
    return EvalReport(t, total, ndcg, rows, label)


def meta_test_users(dataset: PeriodizedDataset, t: int, config: TrainConfig) -> list[str]:
    _, test = split_users(dataset, t, config.k, config.train_threshold, config.cold_threshold)
    return test


def evaluate(
    dataset, params: ParamSet | None, t: int, config: TrainConfig, ns=(10,), users=None, label="model", scorer=None
) -> EvalReport:
    """Adapt on each test user's support, score the query, pool RMSE, average NDCG.

    ``scorer(user, t)`` may replace the model: it must return one score per
    catalog item (used to evaluate planted ground truth through the same path).
    """
    if users is None:
        users = meta_test_users(dataset, t, config)
    if not users:
        raise ValueError(f"period {t} has no meta-test users")
    per_user = []
    for user in users:
        if scorer is not None:
            scores = np.asarray(scorer(user, t), dtype=np.float64)
            support = [ev.item for ev in dataset.events(user, t)[: config.k]]
        else:
            u_ts, u_te, support = user_vector(user, t, params, dataset, config)
            scores = predict(u_ts, u_te, params.emb["E"], dataset.catalog.matrix)
        per_user.append((user, support, query_events(dataset, user, t, config.k), scores))
    return _assemble(dataset, t, per_user, ns, label, dataset.catalog.items)


def baseline(kind: str, dataset: PeriodizedDataset, t: int, config: TrainConfig, ns=(10,), users=None) -> EvalReport:
    """Constant predictors: the global training mean or the user's own pre-``t`` mean."""
    if kind not in ("global_mean", "user_history_mean"):
        raise ValueError(f"unknown baseline {kind!r}")
    if users is None:
        users = meta_test_users(dataset, t, config)
    if not users:
        raise ValueError(f"period {t} has no meta-test users")
    observed = [ev.value for s, per in dataset.by_period.items() if s <= t for evs in per.values() for ev in evs]
    global_mean = float(np.mean(observed))
    n = dataset.catalog.n_items
    per_user = []
    for user in users:
        value = global_mean
        if kind == "user_history_mean":
            hist = [ev.value for s in range(1, t) for ev in dataset.events(user, s)]
            if hist:
                value = float(np.mean(hist))
        events = dataset.events(user, t)
        support = [ev.item for ev in events[: config.k]] if events else []
        per_user.append((user, support, query_events(dataset, user, t, config.k), np.full(n, value)))
    return _assemble(dataset, t, per_user, ns, kind, dataset.catalog.items)
