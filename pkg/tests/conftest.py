"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from chronorec import data, synth

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DAY = 86400.0


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Numerical gradient of scalar ``f`` at ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    # central differences with h=1e-5 cannot resolve gradients much below
    # 1e-6 (roundoff is about eps*|f|/h), so tiny gradients are compared
    # on an absolute scale
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-6)
    return float(np.max(np.abs(a - b)) / scale)


def tiny_catalog(n_items: int = 6) -> data.ItemCatalog:
    families = ["genre:a", "genre:b", "year:x", "year:y"]
    mapping = {}
    for i in range(n_items):
        mapping[f"i{i}"] = [families[i % 2], families[2 + (i // 2) % 2]]
    return data.ItemCatalog.from_mapping(mapping)


def make_dataset(events_by_user: dict, catalog=None, period_days: float = 1.0, holdout=None):
    """Build a dataset from ``{user: [(item, value, day), ...]}``."""
    catalog = catalog or tiny_catalog()
    rows = [
        data.Interaction(u, it, float(v), float(day) * DAY)
        for u, evs in events_by_user.items()
        for it, v, day in evs
    ]
    return data.partition(rows, catalog, period_days * DAY, origin=0.0, holdout=holdout)


@pytest.fixture
def catalog():
    return tiny_catalog()


@pytest.fixture(scope="session")
def small_synth():
    cfg = synth.SynthConfig(users=40, items=60, periods=3, attributes=12, families=3, latent_dim=3, rate=14, seed=3)
    sd = synth.generate_data(cfg)
    ds = data.partition(sd.interactions, sd.catalog, cfg.period_length, holdout=sd.heldout)
    return cfg, sd, ds
