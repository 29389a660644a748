"""Time-evolving module: a tanh recurrence over per-period interaction summaries.

``u_te[t] = tanh(Wh u_te[t-1] + Wx x[t] + b)`` where ``x[t]`` is the
mean value-scaled embedding of the items the user touched in period ``t``.
Periods without interactions carry the state over unchanged, and the state
before the first period is the zero vector.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .data import Event, PeriodizedDataset

INIT_SCALE = 0.1


def init_rnn(d: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {
        "Wh": rng.uniform(-INIT_SCALE, INIT_SCALE, size=(d, d)),
        "Wx": rng.uniform(-INIT_SCALE, INIT_SCALE, size=(d, d)),
        "b": np.zeros(d),
    }


SUMMARY_MODES = ("scaled", "normalized", "unweighted")


def summary_weights(events: tuple[Event, ...], z: np.ndarray, mode: str = "scaled") -> np.ndarray:
    """Attribute-space weights ``w`` such that the period summary is ``E @ w``.

    ``scaled``:     mean of value-scaled embeddings, ``sum(r_i e_i) / n``.
    ``normalized``: value-weighted mean, ``sum(r_i e_i) / sum(r_i)``; falls
                    back to the unweighted mean when the values sum to zero.
    ``unweighted``: plain mean embedding.
    """
    if not events:
        raise ValueError("cannot summarise an empty period")
    if mode not in SUMMARY_MODES:
        raise ValueError(f"unknown summary mode {mode!r}")
    zs = z[[ev.item for ev in events]]
    if mode == "unweighted":
        return zs.mean(axis=0)
    w = np.array([ev.value for ev in events])
    if mode == "scaled":
        return (w @ zs) / len(w)
    total = w.sum()
    if total == 0.0:
        return zs.mean(axis=0)
    return (w @ zs) / total


def summarize_period(events, z, E, mode: str = "scaled"):
    return ad.matmul(E, summary_weights(events, z, mode))


def step(u_prev, x, omega):
    pre = ad.add(ad.add(ad.matmul(omega["Wh"], u_prev), ad.matmul(omega["Wx"], x)), omega["b"])
    return ad.tanh(pre)


def history_weights(dataset: PeriodizedDataset, user: str, t: int, mode: str = "scaled"):
    """Summary weights for periods ``1..t-1``; ``None`` marks an empty period."""
    z = dataset.catalog.matrix
    out = []
    for s in range(1, t):
        events = dataset.events(user, s)
        out.append(summary_weights(events, z, mode) if events else None)
    return out


def roll_forward(weights, omega, E, window: int = 0):
    """Run the recurrence over precomputed period weights.

    Returns the final state.  With tracked ``omega``/``E`` and ``window > 0``
    only the last ``window`` non-empty steps are recorded; earlier steps are
    evaluated on the raw values and enter as constants (truncated BPTT).
    """
    d = ad._as_array(omega["b"]).shape[0]
    active = [w for w in weights if w is not None]
    cut = len(active) - window if window > 0 else 0
    raw_omega = {k: ad._val(v) for k, v in omega.items()}
    raw_E = ad._val(E)
    u = np.zeros(d)
    for i, w in enumerate(active):
        if i < cut:
            u = step(u, raw_E @ w, raw_omega)
        else:
            u = step(u, ad.matmul(E, w), omega)
    return u


def user_state(dataset: PeriodizedDataset, user: str, t: int, omega, E, mode: str = "scaled"):
    """``u_te`` after periods ``1..t-1`` (zero vector when ``t == 1``)."""
    return roll_forward(history_weights(dataset, user, t, mode), omega, E)
