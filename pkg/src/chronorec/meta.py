"""Time-specific module: a meta-learned MLP producing per-user factors.

``u_ts = sigmoid(W3 relu(W2 relu(W1 x + b1) + b2) + b3)`` with hidden widths
128 and 64.  ``x`` is the mean embedding of the user's support items.  Per-user
parameters come from a few gradient steps on the support loss (local update);
the shared parameters are trained from query losses at the adapted parameters
(meta gradient).
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .errors import EmptyTaskError, NumericError

HIDDEN = (128, 64)
NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


def init_meta(d: int, rng: np.random.Generator, hidden=HIDDEN) -> dict[str, np.ndarray]:
    """Uniform fan-in initialisation (``+-1/sqrt(fan_in)``)."""
    h1, h2 = hidden
    params = {}
    for name, (rows, cols) in zip(("1", "2", "3"), ((h1, d), (h2, h1), (d, h2))):
        lim = 1.0 / np.sqrt(cols)
        params["W" + name] = rng.uniform(-lim, lim, size=(rows, cols))
        params["b" + name] = rng.uniform(-lim, lim, size=rows)
    return params


def aggregate_input(support_z: np.ndarray, E):
    """Mean embedding of the support items: ``E @ mean(z)``."""
    if len(support_z) == 0:
        raise EmptyTaskError("empty support; use the global fallback input")
    return ad.matmul(E, support_z.mean(axis=0))


def forward_ts(x, params):
    h = ad.relu(ad.add(ad.matmul(params["W1"], x), params["b1"]))
    h = ad.relu(ad.add(ad.matmul(params["W2"], h), params["b2"]))
    return ad.sigmoid(ad.add(ad.matmul(params["W3"], h), params["b3"]))


LossFn = Callable[[dict], "ad.Var"]


def _check_finite(grads, label):
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {k} in {label}")


def local_update(
    theta: dict[str, np.ndarray],
    support_loss: LossFn,
    alpha: float,
    steps: int = 1,
    label: str = "task",
    trace: list | None = None,
) -> dict[str, np.ndarray]:
    """Return adapted copies ``theta - alpha * grad`` after ``steps`` steps.

    ``support_loss`` maps a dict of (tracked) meta parameters to a scalar.
    The input dict is never modified.  If ``trace`` is given, the parameters
    at which each step's gradient was taken are appended to it.
    """
    current = dict(theta)
    if alpha == 0.0:
        return current
    for _ in range(steps):
        if trace is not None:
            trace.append(current)
        _, grads = ad.grad(support_loss, current)
        _check_finite(grads, label)
        current = {k: current[k] - alpha * grads[k] for k in current}
    return current


def hessian_vector(loss: LossFn, theta, vec, eps: float = 1e-5):
    """Central finite difference of gradients: ``H(theta) @ vec``."""
    plus = {k: theta[k] + eps * vec[k] for k in theta}
    minus = {k: theta[k] - eps * vec[k] for k in theta}
    _, gp = ad.grad(loss, plus)
    _, gm = ad.grad(loss, minus)
    return {k: (gp[k] - gm[k]) / (2 * eps) for k in theta}


def second_order_correction(support_loss: LossFn, visited, alpha: float, g_adapted):
    """Map a gradient at the adapted parameters back through the inner SGD
    steps: ``g <- (I - alpha H_k) g`` for each visited point, newest first."""
    g = dict(g_adapted)
    for point in reversed(visited):
        hv = hessian_vector(support_loss, point, g)
        g = {k: g[k] - alpha * hv[k] for k in g}
    return g
