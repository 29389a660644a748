"""Scoring and top-N recommendation for (cold-start) users in a period."""

from __future__ import annotations

import numpy as np

from . import meta, recurrent
from .data import PeriodizedDataset, Task, make_task, split_users
from .errors import ConfigError
from .trainer import ParamSet, TrainConfig, adapt, predict, prepare


def global_input_weights(dataset: PeriodizedDataset, t: int, config: TrainConfig) -> np.ndarray:
    """Attribute-space mean over every meta-train interaction of period ``t``."""
    train_users, _ = split_users(dataset, t, config.k, config.train_threshold, config.cold_threshold)
    z = dataset.catalog.matrix
    items = [ev.item for u in train_users for ev in dataset.events(u, t)]
    return z[items].mean(axis=0)


def _check(user: str, t: int, dataset: PeriodizedDataset, params: ParamSet):
    dataset.check_period(t)
    if t not in params.theta:
        raise ConfigError(f"no trained meta parameters for period {t}")
    if user not in dataset.users:
        raise KeyError(f"unknown user {user!r}")


def user_vector(user: str, t: int, params: ParamSet, dataset: PeriodizedDataset, config: TrainConfig):
    """Adapted user representation ``u_ts + u_te`` and the support item indices.

    Users without period-``t`` interactions get the unadapted meta network
    applied to the period-global input.
    """
    _check(user, t, dataset, params)
    E = params.emb["E"]
    theta = params.theta[t]
    events = dataset.events(user, t)
    if events:
        pt = prepare(dataset, make_task(dataset, user, t, config.k), config.summary, query=())
        adapted = adapt(pt, theta, params.omega, E, config)
        x = E @ pt.input_weights
        support = [ev.item for ev in events[: config.k]]
    else:
        pt = prepare(dataset, _empty_task(user, t), config.summary, query=())
        adapted = theta
        x = E @ global_input_weights(dataset, t, config)
        support = []
    d = E.shape[0]
    u_ts = np.zeros(d) if config.variant == "te_only" else meta.forward_ts(x, adapted)
    u_te = np.zeros(d) if config.variant == "ts_only" else recurrent.roll_forward(pt.history, params.omega, E)
    return u_ts, u_te, support


def _empty_task(user, t):
    return Task(user, t, (), ())


def predict_scores(user, t, params, dataset, config, items=None) -> np.ndarray:
    """Raw predicted values for ``items`` (catalog indices; default all)."""
    u_ts, u_te, _ = user_vector(user, t, params, dataset, config)
    z = dataset.catalog.matrix
    rows = z if items is None else z[list(items)]
    return predict(u_ts, u_te, params.emb["E"], rows)


def rank(scores: np.ndarray, item_ids, exclude=(), top_n: int | None = None):
    """Sort by descending score, ties by ascending item id."""
    skip = set(exclude)
    cand = [(i, s) for i, s in enumerate(scores) if i not in skip]
    cand.sort(key=lambda p: (-p[1], item_ids[p[0]]))
    if top_n is not None:
        cand = cand[:top_n]
    return [(item_ids[i], float(s)) for i, s in cand]


def adapt_and_recommend(user, t, params, dataset, config, top_n: int = 10):
    u_ts, u_te, support = user_vector(user, t, params, dataset, config)
    scores = predict(u_ts, u_te, params.emb["E"], dataset.catalog.matrix)
    return rank(scores, dataset.catalog.items, exclude=support, top_n=top_n)


def recommend_no_interaction(user, t, params, dataset, config, top_n: int = 10):
    if dataset.events(user, t):
        raise ConfigError(f"user {user!r} has interactions in period {t}")
    return adapt_and_recommend(user, t, params, dataset, config, top_n)


def write_recommendations(fh, ranked) -> None:
    fh.write("rank,item,score\n")
    for r, (item, score) in enumerate(ranked, start=1):
        fh.write(f"{r},{item},{score!r}\n")
