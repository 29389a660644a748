"""Planted-factor synthetic data with time-evolving and time-specific user factors.

Generative story, per user ``u`` and period ``t``::

    v[u, t] = rho * v[u, t-1] + sqrt(1 - rho^2) * N(0, I)      (time-evolving)
    s[u, t] = shock_scale * N(0, I) + trend[t]                   (time-specific)
    r       = (v[u, t] + s[u, t]) . q[i] + noise_scale * N(0, 1)

``trend[t]`` is shared by every user in period ``t``.  Items have one
attribute value per family and ``q[i] = A z[i]`` for a random Gaussian ``A``
scaled so that each coordinate of ``q`` has variance ``1 / latent_dim``.  An
optional constant ``offset`` is added to every value (0 keeps the data
mean-centred).

Cold users interact normally until the final period, where they make between
``cold_min_support`` (default ``k``) and ``k`` interactions early in the period;
their later interactions go to a separate held-out file used only for
evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import Interaction, ItemCatalog, write_catalog, write_interactions
from .errors import ConfigError

DAY = 86400


@dataclass
class SynthConfig:
    users: int = 200
    items: int = 300
    periods: int = 8
    attributes: int = 24
    families: int = 4
    latent_dim: int = 16
    rho: float = 0.9
    shock_scale: float = 0.5
    noise_scale: float = 0.3
    trend_scale: float = 0.5
    offset: float = 0.0
    rate: float = 15.0
    cold_fraction: float = 0.25
    heldout_rate: float = 10.0
    k: int = 5
    cold_min_support: int = 0  # 0 means k: cold users get exactly k shots
    period_days: int = 90
    origin: int = 1_577_836_800  # 2020-01-01T00:00:00Z
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("users", "items", "periods", "attributes", "families", "latent_dim", "k", "period_days"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.attributes % self.families:
            raise ConfigError("attributes must be a multiple of families")
        if not 0 <= self.rho < 1:
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho}")
        for name in ("shock_scale", "noise_scale", "trend_scale", "rate", "heldout_rate"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0 <= self.cold_fraction <= 1:
            raise ConfigError("cold_fraction must lie in [0, 1]")
        if not 0 <= self.cold_min_support <= self.k:
            raise ConfigError(f"cold_min_support must lie in [0, k], got {self.cold_min_support}")
        if self.origin < 0:
            raise ConfigError("origin must be non-negative")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @property
    def period_length(self) -> int:
        return self.period_days * DAY


@dataclass(eq=False)
class SynthData:
    config: SynthConfig
    catalog: ItemCatalog
    interactions: list[Interaction]
    heldout: list[Interaction]
    user_ids: list[str]
    cold_users: list[str]
    q: np.ndarray  # items x latent
    v: np.ndarray  # users x periods x latent
    s: np.ndarray  # users x periods x latent (shock + trend)


def _ids(prefix: str, n: int) -> list[str]:
    width = len(str(n - 1))
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


def generate_data(config: SynthConfig) -> SynthData:
    rng = np.random.default_rng(config.seed)
    c = config
    per_family = c.attributes // c.families
    names = [f"f{g}:v{j}" for g in range(c.families) for j in range(per_family)]
    z = np.zeros((c.items, c.attributes))
    for g in range(c.families):
        picks = rng.integers(0, per_family, size=c.items)
        z[np.arange(c.items), g * per_family + picks] = 1.0
    item_ids = _ids("i", c.items)
    catalog = ItemCatalog.from_mapping(
        {item_ids[i]: [names[j] for j in np.flatnonzero(z[i])] for i in range(c.items)}
    )
    zc = catalog.matrix  # columns sorted by token name

    A = rng.normal(0.0, 1.0 / math.sqrt(c.families * c.latent_dim), size=(c.latent_dim, c.attributes))
    q = zc @ A.T

    T, U, L = c.periods, c.users, c.latent_dim
    v = np.empty((U, T, L))
    v[:, 0] = rng.normal(size=(U, L))
    innov = math.sqrt(1.0 - c.rho**2)
    for t in range(1, T):
        v[:, t] = c.rho * v[:, t - 1] + innov * rng.normal(size=(U, L))
    trend = c.trend_scale * rng.normal(size=(T, L))
    s = c.shock_scale * rng.normal(size=(U, T, L)) + trend[None]

    user_ids = _ids("u", U)
    n_cold = int(round(c.cold_fraction * U))
    cold = set(rng.choice(U, size=n_cold, replace=False).tolist()) if n_cold else set()
    length = c.period_length
    interactions, heldout = [], []

    def rating(u, t, i):
        return float((v[u, t] + s[u, t]) @ q[i] + c.offset + c.noise_scale * rng.normal())

    for u in range(U):
        for t in range(T):
            start = c.origin + t * length
            if u in cold and t == T - 1:
                n_sup = int(rng.integers(c.cold_min_support or c.k, c.k + 1))
                n_held = max(3, int(rng.poisson(c.heldout_rate)))
                items = rng.choice(c.items, size=min(c.items, n_sup + n_held), replace=False)
                window = length // 3
                sup_ts = np.sort(rng.integers(0, window, size=n_sup))
                held_ts = np.sort(rng.integers(window, length, size=len(items) - n_sup))
                for i, off in zip(items[:n_sup], sup_ts):
                    interactions.append(Interaction(user_ids[u], item_ids[i], rating(u, t, i), float(start + off)))
                for i, off in zip(items[n_sup:], held_ts):
                    heldout.append(Interaction(user_ids[u], item_ids[i], rating(u, t, i), float(start + off)))
                continue
            n = int(rng.poisson(c.rate))
            if u in cold:
                n = max(n, 1)
            items = rng.choice(c.items, size=min(c.items, n), replace=False)
            offs = np.sort(rng.integers(0, length, size=len(items)))
            for i, off in zip(items, offs):
                interactions.append(Interaction(user_ids[u], item_ids[i], rating(u, t, i), float(start + off)))

    # anchor the earliest event on the grid origin so default partitioning matches
    if interactions:
        first = min(range(len(interactions)), key=lambda j: interactions[j].timestamp)
        r = interactions[first]
        interactions[first] = Interaction(r.user, r.item, r.value, float(c.origin))
    cold_ids = sorted(user_ids[u] for u in cold)
    return SynthData(c, catalog, interactions, heldout, user_ids, cold_ids, q, v, s)


def _vec(x: np.ndarray) -> str:
    return "|".join(repr(float(a)) for a in x)


def _unvec(s: str) -> np.ndarray:
    return np.array([float(a) for a in s.split("|")])


FILES = {
    "interactions": "interactions.csv",
    "attributes": "attributes.csv",
    "heldout": "heldout.csv",
    "truth": "truth.csv",
    "items": "item_vectors.csv",
}


def write(data: SynthData, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / name for k, name in FILES.items()}
    write_interactions(paths["interactions"], data.interactions)
    write_interactions(paths["heldout"], data.heldout)
    write_catalog(paths["attributes"], data.catalog)
    with paths["truth"].open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("user,period,v_vector,s_vector\n")
        for u, uid in enumerate(data.user_ids):
            for t in range(data.config.periods):
                fh.write(f"{uid},{t + 1},{_vec(data.v[u, t])},{_vec(data.s[u, t])}\n")
    with paths["items"].open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("item,q_vector\n")
        for i, item in enumerate(data.catalog.items):
            fh.write(f"{item},{_vec(data.q[i])}\n")
    return paths


def generate(config: SynthConfig, out_dir) -> dict[str, Path]:
    """Generate and write the dataset files; returns their paths."""
    return write(generate_data(config), out_dir)


@dataclass
class GroundTruth:
    items: list[str]
    q: np.ndarray
    factors: dict[tuple[str, int], tuple[np.ndarray, np.ndarray]]

    def oracle_scores(self, user: str, period: int) -> np.ndarray:
        """Noise-free preference ``(v + s) . q_i`` for every item."""
        try:
            v, s = self.factors[(user, period)]
        except KeyError:
            raise KeyError(f"no ground truth for user {user!r} in period {period}") from None
        return self.q @ (v + s)


def load_truth(truth_path, items_path) -> GroundTruth:
    factors = {}
    with open(truth_path, encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            user, period, v, s = line.rstrip("\n").split(",")
            factors[(user, int(period))] = (_unvec(v), _unvec(s))
    items, qs = [], []
    with open(items_path, encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            item, qv = line.rstrip("\n").split(",")
            items.append(item)
            qs.append(_unvec(qv))
    return GroundTruth(items, np.array(qs), factors)


def oracle_scores(truth: GroundTruth, user: str, period: int) -> np.ndarray:
    return truth.oracle_scores(user, period)
