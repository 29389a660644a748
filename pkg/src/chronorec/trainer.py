"""Per-period episodic training of the meta, recurrent and embedding parameters.

For every period ``t`` the meta-train users become tasks.  Each task adapts
the period's meta parameters on its support set, evaluates the query loss at
the adapted parameters and contributes gradients for the meta parameters
(first-order rule), the recurrent parameters and the embedding matrix.
Parameter updates happen once per mini-batch of tasks.
"""

from __future__ import annotations

import copy
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from . import embedding as emb
from . import meta, recurrent
from .data import PeriodizedDataset, Task, make_task, split_users
from .errors import ConfigError, EmptyLossError, NumericError, UnusablePeriodError

log = logging.getLogger(__name__)

VARIANTS = ("full", "ts_only", "te_only")
DIVERGENCE_LIMIT = 1e6


@dataclass
class TrainConfig:
    alpha: float = 1e-4
    beta: float = 1e-4
    gamma: float = 1e-4
    lam: float = 1e-3
    xi: float = 0.1
    k: int = 5
    epochs: int = 40
    tasks_per_batch: int = 32  # 0 means one batch with every task
    seed: int = 0
    d: int = 16
    per_attribute_dim: int = 32
    grouped: bool = False
    inner_steps: int = 1
    meta_order: str = "first"
    warm_start: bool = True
    emb_loss: str = "bce"
    bptt_window: int = 2
    summary: str = "scaled"
    optimizer: str = "sgd"
    variant: str = "full"
    min_train_interactions: int = 0  # 0 means 2k
    cold_max: int = 0  # 0 means k
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("alpha", "beta", "gamma", "lam", "xi"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be a finite non-negative number, got {v}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.d < 1 or self.per_attribute_dim < 1:
            raise ConfigError("embedding dimensions must be positive")
        if self.inner_steps < 1:
            raise ConfigError(f"inner_steps must be >= 1, got {self.inner_steps}")
        if self.tasks_per_batch < 0 or self.bptt_window < 0 or self.threads < 0:
            raise ConfigError("tasks_per_batch, bptt_window and threads must be >= 0")
        choices = {
            "meta_order": ("first", "second-fd"),
            "emb_loss": ("bce", "active"),
            "optimizer": ("sgd", "adam"),
            "variant": VARIANTS,
            "summary": recurrent.SUMMARY_MODES,
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    @property
    def train_threshold(self) -> int:
        return self.min_train_interactions or 2 * self.k

    @property
    def cold_threshold(self) -> int:
        return self.cold_max or self.k

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def reference_config(**overrides) -> TrainConfig:
    """Step sizes tuned for the bundled synthetic data under plain SGD."""
    base = dict(alpha=0.5, beta=0.002, gamma=0.05, lam=1e-3, xi=0.1, epochs=40)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class ParamSet:
    theta: dict[int, dict[str, np.ndarray]]
    omega: dict[str, np.ndarray]
    emb: dict[str, np.ndarray]
    mask: np.ndarray | None = None
    meta_info: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.emb["E"].shape[0]

    @property
    def m(self) -> int:
        return self.emb["E"].shape[1]

    def copy(self) -> "ParamSet":
        return copy.deepcopy(self)

    def blocks(self) -> dict[str, np.ndarray]:
        """Flat name -> array view used by checkpoints and equality checks."""
        out = {f"omega.{k}": v for k, v in self.omega.items()}
        out.update({f"emb.{k}": v for k, v in self.emb.items()})
        for t in sorted(self.theta):
            out.update({f"theta.{t}.{k}": v for k, v in self.theta[t].items()})
        if self.mask is not None:
            out["mask"] = self.mask
        return out

    def equals(self, other: "ParamSet") -> bool:
        a, b = self.blocks(), other.blocks()
        return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def embedding_dim(config: TrainConfig, catalog) -> int:
    if config.grouped:
        return config.per_attribute_dim * len(catalog.groups())
    return config.d


def init_params(config: TrainConfig, catalog) -> ParamSet:
    rng = np.random.default_rng(config.seed)
    mask = emb.block_mask(catalog, config.per_attribute_dim) if config.grouped else None
    d = embedding_dim(config, catalog)
    embedding = emb.init_embedding(catalog.n_attributes, d, rng, mask)
    omega = recurrent.init_rnn(d, rng)
    return ParamSet({}, omega, embedding, mask, {"variant": config.variant})


# ---------------------------------------------------------------------------
# tasks as arrays


@dataclass
class PreparedTask:
    user: str
    period: int
    support_z: np.ndarray
    support_r: np.ndarray
    query_z: np.ndarray
    query_r: np.ndarray
    history: list  # per earlier period: summary weights or None

    @property
    def input_weights(self) -> np.ndarray:
        return self.support_z.mean(axis=0)


def prepare(dataset: PeriodizedDataset, task: Task, summary: str = "scaled", query=None) -> PreparedTask:
    z = dataset.catalog.matrix
    query = task.query if query is None else query
    m = z.shape[1]

    def rows(events):
        if not events:
            return np.zeros((0, m)), np.zeros(0)
        return z[[e.item for e in events]], np.array([e.value for e in events])

    sz, sr = rows(task.support)
    qz, qr = rows(query)
    hist = recurrent.history_weights(dataset, task.user, task.period, summary)
    return PreparedTask(task.user, task.period, sz, sr, qz, qr, hist)


def predict(u_ts, u_te, E, z_rows):
    """Scores ``(u_ts + u_te) . e_i`` for the items whose attribute rows are given."""
    user = ad.add(u_ts, u_te)
    return ad.matmul(user, emb.embed_columns(E, np.ascontiguousarray(z_rows.T)))


def user_factors(pt: PreparedTask, theta, omega, E, variant: str = "full", window: int = 0):
    """(u_ts, u_te) for a prepared task, honouring ablation variants."""
    d = ad._as_array(E).shape[0]
    if variant == "te_only" or theta is None:
        u_ts = np.zeros(d)
    else:
        u_ts = meta.forward_ts(ad.matmul(E, pt.input_weights), theta)
    if variant == "ts_only":
        u_te = np.zeros(d)
    else:
        u_te = recurrent.roll_forward(pt.history, omega, E, window)
    return u_ts, u_te


def task_loss(pt: PreparedTask, theta, omega, E, which: str = "query", variant: str = "full", window: int = 0):
    """Mean squared error of the additive-factor predictor on one item set."""
    z, r = (pt.query_z, pt.query_r) if which == "query" else (pt.support_z, pt.support_r)
    if len(r) == 0:
        raise EmptyLossError(f"empty {which} set for user {pt.user!r}")
    u_ts, u_te = user_factors(pt, theta, omega, E, variant, window)
    return ad.mse(predict(u_ts, u_te, E, z), r, reduction="mean")


def support_loss_fn(pt: PreparedTask, omega, E, variant: str = "full"):
    """Support loss as a function of the meta parameters (u_te and E held fixed)."""
    raw_E = ad._val(E)
    x = raw_E @ pt.input_weights
    u_te = np.zeros(raw_E.shape[0])
    if variant != "ts_only":
        u_te = recurrent.roll_forward(pt.history, {k: ad._val(v) for k, v in omega.items()}, raw_E)
    cols = np.ascontiguousarray((pt.support_z @ raw_E.T).T)

    def loss(theta):
        u_ts = meta.forward_ts(x, theta)
        return ad.mse(ad.matmul(ad.add(u_ts, u_te), cols), pt.support_r, reduction="mean")

    return loss


def adapt(pt: PreparedTask, theta, omega, E, config: TrainConfig, trace=None):
    """Per-user parameters after the local update on the support set."""
    if config.variant == "te_only" or len(pt.support_r) == 0:
        return dict(theta) if theta is not None else None
    loss = support_loss_fn(pt, omega, E, config.variant)
    return meta.local_update(
        theta, loss, config.alpha, config.inner_steps, label=f"user {pt.user} period {pt.period}", trace=trace
    )


# ---------------------------------------------------------------------------
# gradients


@dataclass
class TaskGrad:
    loss: float
    theta: dict[str, np.ndarray] | None
    omega: dict[str, np.ndarray] | None
    E: np.ndarray


def task_gradients(pt: PreparedTask, params: ParamSet, theta, config: TrainConfig) -> TaskGrad:
    """Adapt on the support set, then differentiate the query loss at the
    adapted parameters with respect to theta_u, omega and E."""
    variant = config.variant
    visited = [] if config.meta_order == "second-fd" else None
    adapted = adapt(pt, theta, params.omega, params.emb["E"], config, trace=visited)

    tape = ad.Tape()
    E = tape.leaf(params.emb["E"])
    th = tape.leaves(adapted) if variant != "te_only" else None
    om = tape.leaves(params.omega) if variant != "ts_only" else params.omega
    loss = task_loss(pt, th, om, E, "query", variant, config.bptt_window)
    grads = tape.backward(loss)
    g_theta = {k: grads[v] for k, v in th.items()} if th is not None else None
    g_omega = {k: grads[v] for k, v in om.items()} if variant != "ts_only" else None
    if g_theta is not None and visited:
        g_theta = meta.second_order_correction(
            support_loss_fn(pt, params.omega, params.emb["E"], variant), visited, config.alpha, g_theta
        )
    out = TaskGrad(float(loss.value), g_theta, g_omega, grads[E])
    for part in (out.theta, out.omega, {"E": out.E}):
        if part is not None:
            meta._check_finite(part, f"user {pt.user} period {pt.period}")
    return out


def meta_gradient(tasks: list[PreparedTask], params: ParamSet, theta, config: TrainConfig):
    """Sum over tasks of the query-loss gradient at each task's adapted parameters."""
    if not tasks:
        raise ValueError("meta gradient needs at least one task")
    total = {k: np.zeros_like(v) for k, v in theta.items()}
    for pt in tasks:
        g = task_gradients(pt, params, theta, config).theta
        for k in total:
            total[k] += g[k]
    return total


def embedding_loss_grads(params: ParamSet, catalog, config: TrainConfig):
    """``xi * grad L_emb`` for every embedding parameter (zeros when xi == 0)."""
    if config.xi == 0.0:
        return 0.0, {k: np.zeros_like(v) for k, v in params.emb.items()}
    value, grads = ad.grad(lambda p: emb.embedding_loss(catalog.matrix, p, config.emb_loss), params.emb)
    return value, {k: config.xi * g for k, g in grads.items()}


@dataclass
class BatchGrad:
    losses: list[float]
    theta: dict[str, np.ndarray] | None  # summed over tasks
    omega: dict[str, np.ndarray] | None  # mean over tasks
    emb: dict[str, np.ndarray]  # mean data gradient (E only) + xi * L_emb gradient
    emb_loss: float


def batch_gradients(
    tasks: list[PreparedTask], params: ParamSet, t: int, catalog, config: TrainConfig, mask_data: bool = False
) -> BatchGrad:
    theta = params.theta.get(t)
    if config.threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(lambda pt: task_gradients(pt, params, theta, config), tasks))
    else:
        results = [task_gradients(pt, params, theta, config) for pt in tasks]
    n = len(results)
    g_theta = None
    if theta is not None and config.variant != "te_only":
        g_theta = {k: np.zeros_like(v) for k, v in theta.items()}
        for r in results:
            for k in g_theta:
                g_theta[k] += r.theta[k]
    g_omega = None
    if config.variant != "ts_only":
        g_omega = {k: np.zeros_like(v) for k, v in params.omega.items()}
        for r in results:
            for k in g_omega:
                g_omega[k] += r.omega[k]
        g_omega = {k: v / n for k, v in g_omega.items()}
    emb_value, g_emb = embedding_loss_grads(params, catalog, config)
    if not mask_data:
        data_E = np.zeros_like(params.emb["E"])
        for r in results:
            data_E += r.E
        g_emb["E"] = g_emb["E"] + data_E / n
    if params.mask is not None:
        g_emb["E"] = g_emb["E"] * params.mask
    return BatchGrad([r.loss for r in results], g_theta, g_omega, g_emb, emb_value)


class Adam:
    """Adam state for a flat dict of parameters."""

    def __init__(self, b1=0.9, b2=0.999, eps=1e-8):
        self.b1, self.b2, self.eps = b1, b2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.n: dict = {}

    def direction(self, key: str, g: np.ndarray) -> np.ndarray:
        m = self.b1 * self.m.get(key, 0.0) + (1 - self.b1) * g
        v = self.b2 * self.v.get(key, 0.0) + (1 - self.b2) * g * g
        n = self.n.get(key, 0) + 1
        self.m[key], self.v[key], self.n[key] = m, v, n
        mh = m / (1 - self.b1**n)
        vh = v / (1 - self.b2**n)
        return mh / (np.sqrt(vh) + self.eps)


def _step(params: dict, grads: dict, rate: float, lam: float, prefix: str, adam: Adam | None):
    if rate == 0.0:
        return params
    out = {}
    for k, p in params.items():
        g = grads[k] + lam * p if lam else grads[k]
        if adam is not None:
            g = adam.direction(prefix + k, g)
        out[k] = p - rate * g
    return out


def update_omega(omega, grad_mean, gamma: float, lam: float, adam: Adam | None = None):
    """``omega - gamma * (grad + lam * omega)``."""
    return _step(omega, grad_mean, gamma, lam, "omega.", adam)


def apply_updates(params: ParamSet, t: int, bg: BatchGrad, config: TrainConfig, adam: Adam | None = None) -> None:
    if bg.theta is not None:
        params.theta[t] = _step(params.theta[t], bg.theta, config.beta, config.lam, f"theta.{t}.", adam)
    if bg.omega is not None:
        params.omega = update_omega(params.omega, bg.omega, config.gamma, config.lam, adam)
    new_emb = _step(params.emb, bg.emb, config.gamma, 0.0, "emb.", adam)
    if params.mask is not None and new_emb is not params.emb:
        new_emb["E"] = new_emb["E"] * params.mask
    params.emb = new_emb


# ---------------------------------------------------------------------------
# objectives


def total_objective(tasks: list[PreparedTask], params: ParamSet, t: int, catalog, config: TrainConfig) -> float:
    """Sum of post-adaptation query losses + xi * L_emb + lam/2 (|theta|^2 + |omega|^2)."""
    if not tasks:
        raise ValueError("objective needs at least one task")
    theta = params.theta.get(t)
    data = 0.0
    for pt in tasks:
        adapted = adapt(pt, theta, params.omega, params.emb["E"], config)
        data += float(task_loss(pt, adapted, params.omega, params.emb["E"], "query", config.variant))
    emb_term = 0.0
    if config.xi:
        emb_term = config.xi * float(emb.embedding_loss(catalog.matrix, params.emb, config.emb_loss))
    reg = 0.0
    if theta is not None and config.variant != "te_only":
        reg += sum(float(np.sum(v * v)) for v in theta.values())
    if config.variant != "ts_only":
        reg += sum(float(np.sum(v * v)) for v in params.omega.values())
    return data + emb_term + 0.5 * config.lam * reg


# ---------------------------------------------------------------------------
# training loops


@dataclass
class TraceRow:
    epoch: int
    period: int
    mean_query_loss: float


def training_tasks(dataset: PeriodizedDataset, t: int, config: TrainConfig) -> list[PreparedTask]:
    train_users, _ = split_users(dataset, t, config.k, config.train_threshold, config.cold_threshold)
    tasks = []
    for user in train_users:
        task = make_task(dataset, user, t, config.k)
        if task.query:
            tasks.append(prepare(dataset, task, config.summary))
    if not tasks:
        raise UnusablePeriodError(f"period {t} has no task with a non-empty query set")
    return tasks


def _ensure_theta(params: ParamSet, t: int, config: TrainConfig) -> None:
    if t in params.theta:
        return
    prev = [s for s in params.theta if s < t]
    if config.warm_start and prev:
        params.theta[t] = {k: v.copy() for k, v in params.theta[max(prev)].items()}
    else:
        rng = np.random.default_rng([config.seed, t])
        params.theta[t] = meta.init_meta(params.d, rng)


def train_period(
    dataset: PeriodizedDataset,
    t: int,
    params: ParamSet,
    config: TrainConfig,
    rng: np.random.Generator | None = None,
    adam: Adam | None = None,
) -> tuple[ParamSet, list[TraceRow]]:
    """Run ``config.epochs`` epochs of episodic training for period ``t``.

    Returns a new ParamSet; the input is left untouched.
    """
    dataset.check_period(t)
    params = params.copy()
    _ensure_theta(params, t, config)
    if rng is None:
        rng = np.random.default_rng([config.seed, t, 1])
    if adam is None and config.optimizer == "adam":
        adam = Adam()
    tasks = training_tasks(dataset, t, config)
    size = config.tasks_per_batch or len(tasks)
    trace = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(tasks))
        losses = []
        for start in range(0, len(order), size):
            batch = [tasks[i] for i in order[start : start + size]]
            bg = batch_gradients(batch, params, t, dataset.catalog, config)
            worst = max(bg.losses)
            if not math.isfinite(worst) or worst > DIVERGENCE_LIMIT:
                bad = batch[int(np.argmax(np.nan_to_num(bg.losses, nan=np.inf)))]
                raise NumericError(
                    f"training diverged in period {t}, epoch {epoch}, task of user {bad.user!r} (loss {worst})"
                )
            losses.extend(bg.losses)
            apply_updates(params, t, bg, config, adam)
        mean_loss = float(np.mean(losses))
        trace.append(TraceRow(epoch, t, mean_loss))
        log.debug("period %d epoch %d mean query loss %.5f", t, epoch, mean_loss)
    return params, trace


def train_all(dataset: PeriodizedDataset, config: TrainConfig, params: ParamSet | None = None):
    """Train every period in order; returns (ParamSet, loss trace)."""
    if dataset.n_periods < 1:
        raise ValueError("dataset has no periods")
    if params is None:
        params = init_params(config, dataset.catalog)
    adam = Adam() if config.optimizer == "adam" else None
    trace: list[TraceRow] = []
    for t in range(1, dataset.n_periods + 1):
        try:
            params, rows = train_period(dataset, t, params, config, adam=adam)
        except UnusablePeriodError as exc:
            log.warning("skipping period %d: %s", t, exc)
            params = params.copy()
            _ensure_theta(params, t, config)
            continue
        trace.extend(rows)
    return params, trace


def write_trace(path, trace: list[TraceRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,period,mean_query_loss\n")
        for row in trace:
            fh.write(f"{row.epoch},{row.period},{row.mean_query_loss!r}\n")


def default_threads() -> int:
    return os.cpu_count() or 1


def with_variant(config: TrainConfig, variant: str) -> TrainConfig:
    return replace(config, variant=variant)
