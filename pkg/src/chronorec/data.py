"""Interaction ingestion, period bucketing and episodic task construction.

File formats
------------
Interactions: UTF-8 CSV with header ``user,item,value,timestamp``.
Attributes:   ``item,attr1|attr2|...`` with namespaced tokens such as
``genre:Drama``; an optional ``item,attributes`` header is skipped.

Period indices are 1-based; item and attribute indices are 0-based.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ConfigError, EmptyTaskError, ParseError, UnusablePeriodError

log = logging.getLogger(__name__)

INTERACTION_HEADER = "user,item,value,timestamp"
ATTRIBUTE_HEADER = "item,attributes"


@dataclass(frozen=True)
class Interaction:
    user: str
    item: str
    value: float
    timestamp: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite value {self.value!r}")
        if not (self.timestamp >= 0):
            raise ValueError(f"negative timestamp {self.timestamp!r}")


class Event(NamedTuple):
    """An interaction inside a periodized dataset (item as catalog index)."""

    item: int
    value: float
    timestamp: float


@dataclass(frozen=True, eq=False)
class ItemCatalog:
    items: tuple[str, ...]
    attributes: tuple[str, ...]
    matrix: np.ndarray  # n_items x m, entries 0/1

    def __post_init__(self):
        z = self.matrix
        if z.shape != (len(self.items), len(self.attributes)):
            raise ValueError("attribute matrix shape does not match catalog")
        if not np.all((z == 0) | (z == 1)):
            raise ValueError("attribute matrix must be binary")
        if len(self.items) and not np.all(z.sum(axis=1) > 0):
            raise ValueError("every item needs at least one attribute")
        z.flags.writeable = False
        object.__setattr__(self, "_item_index", {it: i for i, it in enumerate(self.items)})
        object.__setattr__(self, "_attr_index", {a: j for j, a in enumerate(self.attributes)})

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_attributes(self) -> int:
        return len(self.attributes)

    @property
    def attribute_index(self) -> dict[str, int]:
        return dict(self._attr_index)

    def index(self, item: str) -> int:
        return self._item_index[item]

    def __contains__(self, item: str) -> bool:
        return item in self._item_index

    def groups(self) -> list[tuple[str, list[int]]]:
        """Attribute namespaces in dictionary order, with their column indices."""
        out: dict[str, list[int]] = {}
        for j, name in enumerate(self.attributes):
            ns = name.split(":", 1)[0] if ":" in name else ""
            out.setdefault(ns, []).append(j)
        return list(out.items())

    @classmethod
    def from_mapping(cls, mapping: dict[str, Iterable[str]]) -> "ItemCatalog":
        items = tuple(mapping)
        tokens = sorted({tok for toks in mapping.values() for tok in toks})
        col = {tok: j for j, tok in enumerate(tokens)}
        z = np.zeros((len(items), len(tokens)))
        for i, it in enumerate(items):
            for tok in mapping[it]:
                z[i, col[tok]] = 1.0
        return cls(items, tuple(tokens), z)


# ---------------------------------------------------------------------------
# file IO


def _fmt_number(x: float) -> str:
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def read_interactions(path, with_lines: bool = False) -> list:
    """Parse an interaction file; ``with_lines`` yields ``(line, Interaction)`` pairs."""
    path = Path(path)
    out: list = []
    seen: Counter = Counter()
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header.replace(" ", "") != INTERACTION_HEADER:
            raise ParseError(path, 1, f"expected header {INTERACTION_HEADER!r}, got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 4:
                raise ParseError(path, lineno, f"expected 4 fields, got {len(parts)}")
            user, item, value, ts = parts
            try:
                value_f = float(value)
            except ValueError:
                raise ParseError(path, lineno, f"non-numeric value {value!r}") from None
            try:
                ts_f = float(ts)
            except ValueError:
                raise ParseError(path, lineno, f"non-numeric timestamp {ts!r}") from None
            if not math.isfinite(value_f):
                raise ParseError(path, lineno, f"non-finite value {value!r}")
            if not math.isfinite(ts_f) or ts_f < 0:
                raise ParseError(path, lineno, f"invalid timestamp {ts!r}")
            key = (user, item, ts_f)
            seen[key] += 1
            if seen[key] == 2:
                log.warning("%s:%d: duplicate (user, item, timestamp) %s kept", path, lineno, key)
            rec = Interaction(user, item, value_f, ts_f)
            out.append((lineno, rec) if with_lines else rec)
    return out


def write_interactions(path, interactions: Iterable[Interaction]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(INTERACTION_HEADER + "\n")
        for r in interactions:
            fh.write(f"{r.user},{r.item},{_fmt_number(r.value)},{_fmt_number(r.timestamp)}\n")


def read_catalog(path) -> ItemCatalog:
    path = Path(path)
    mapping: dict[str, list[str]] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if lineno == 1 and line.replace(" ", "") == ATTRIBUTE_HEADER:
                continue
            if "," not in line:
                raise ParseError(path, lineno, "expected 'item,attr1|attr2|...'")
            item, attrs = line.split(",", 1)
            item = item.strip()
            toks = [a.strip() for a in attrs.split("|") if a.strip()]
            if not item:
                raise ParseError(path, lineno, "empty item id")
            if not toks:
                raise ParseError(path, lineno, f"item {item!r} has no attributes")
            if item in mapping:
                raise ParseError(path, lineno, f"item {item!r} listed twice")
            mapping[item] = toks
    if not mapping:
        raise ParseError(path, 1, "no items found")
    return ItemCatalog.from_mapping(mapping)


def write_catalog(path, catalog: ItemCatalog) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(ATTRIBUTE_HEADER + "\n")
        for i, item in enumerate(catalog.items):
            toks = [catalog.attributes[j] for j in np.flatnonzero(catalog.matrix[i])]
            fh.write(f"{item},{'|'.join(toks)}\n")


def ingest(interaction_path, attribute_path) -> tuple[list[Interaction], ItemCatalog]:
    """Parse both input files and check every interaction names a known item."""
    catalog = read_catalog(attribute_path)
    numbered = read_interactions(interaction_path, with_lines=True)
    interactions = [r for _, r in numbered]
    unknown = [(ln, r.item) for ln, r in numbered if r.item not in catalog]
    if unknown:
        shown = ", ".join(f"line {ln} ({it})" for ln, it in unknown[:10])
        more = f" and {len(unknown) - 10} more" if len(unknown) > 10 else ""
        raise ParseError(interaction_path, unknown[0][0], f"unknown items: {shown}{more}")
    return interactions, catalog


# ---------------------------------------------------------------------------
# periods


@dataclass(frozen=True, eq=False)
class PeriodizedDataset:
    catalog: ItemCatalog
    periods: tuple[tuple[float, float], ...]
    # period -> user -> chronologically sorted events
    by_period: dict[int, dict[str, tuple[Event, ...]]]
    scale: str = "explicit"
    # later interactions withheld from modelling, used only as evaluation queries
    holdout: dict[int, dict[str, tuple[Event, ...]]] = field(default_factory=dict)

    @property
    def n_periods(self) -> int:
        return len(self.periods)

    @cached_property
    def users(self) -> list[str]:
        seen = set()
        for per in self.by_period.values():
            seen.update(per)
        return sorted(seen)

    def events(self, user: str, t: int) -> tuple[Event, ...]:
        return self.by_period.get(t, {}).get(user, ())

    def heldout(self, user: str, t: int) -> tuple[Event, ...]:
        return self.holdout.get(t, {}).get(user, ())

    def has_history(self, user: str, t: int) -> bool:
        return any(self.events(user, s) for s in range(1, t))

    def check_period(self, t: int) -> None:
        if not 1 <= t <= self.n_periods:
            raise ConfigError(f"period {t} outside 1..{self.n_periods}")

    def count(self) -> int:
        return sum(len(ev) for per in self.by_period.values() for ev in per.values())

    def without_period_events(self, users: Iterable[str], t: int) -> "PeriodizedDataset":
        """Copy with every period-``t`` interaction of ``users`` removed."""
        drop = set(users)
        by_period = dict(self.by_period)
        by_period[t] = {u: ev for u, ev in self.by_period.get(t, {}).items() if u not in drop}
        return PeriodizedDataset(self.catalog, self.periods, by_period, self.scale, self.holdout)


def _sort_key(ev: Event):
    return (ev.timestamp, ev.item, ev.value)


def _bucket(interactions, catalog, origin, length, n_periods, scale):
    grouped: dict[int, dict[str, list[Event]]] = defaultdict(lambda: defaultdict(list))
    for r in interactions:
        t = min(int((r.timestamp - origin) // length), n_periods - 1) + 1
        if t < 1:
            raise ConfigError(f"timestamp {r.timestamp} precedes period origin {origin}")
        value = r.value
        if scale == "implicit-log":
            if value < 0:
                raise ValueError(f"negative count {value} in implicit data")
            value = math.log1p(value)
        grouped[t][r.user].append(Event(catalog.index(r.item), value, r.timestamp))
    return {
        t: {u: tuple(sorted(ev, key=_sort_key)) for u, ev in sorted(per.items())}
        for t, per in sorted(grouped.items())
    }


def partition(
    interactions: list[Interaction],
    catalog: ItemCatalog,
    period_length: float,
    scale: str = "explicit",
    origin: float | None = None,
    holdout: list[Interaction] | None = None,
) -> PeriodizedDataset:
    """Bucket interactions into contiguous fixed-length periods.

    The grid starts at ``origin`` (default: earliest timestamp) and holds
    ``ceil(span / period_length)`` periods, at least one; an interaction lying
    exactly on the final boundary belongs to the last period.
    """
    if not period_length > 0:
        raise ConfigError(f"period length must be positive, got {period_length}")
    if not interactions:
        raise ConfigError("cannot partition an empty interaction list")
    if scale not in ("explicit", "implicit-log"):
        raise ConfigError(f"unknown value scale {scale!r}")
    lo = min(r.timestamp for r in interactions)
    hi = max(r.timestamp for r in interactions)
    if origin is None:
        origin = lo
    elif origin > lo:
        raise ConfigError(f"period origin {origin} after earliest timestamp {lo}")
    n = max(1, math.ceil((hi - origin) / period_length))
    periods = tuple((origin + k * period_length, origin + (k + 1) * period_length) for k in range(n))
    by_period = _bucket(interactions, catalog, origin, period_length, n, scale)
    held = {}
    if holdout:
        held = _bucket(holdout, catalog, origin, period_length, n, scale)
    return PeriodizedDataset(catalog, periods, by_period, scale, held)


def split_users(
    dataset: PeriodizedDataset,
    t: int,
    k: int = 5,
    min_train_interactions: int | None = None,
    cold_max: int | None = None,
) -> tuple[list[str], list[str]]:
    """Split the users active in period ``t`` into meta-train and meta-test.

    Meta-train: at least ``min_train_interactions`` (default ``2k``) current
    interactions.  Meta-test: between 1 and ``cold_max`` (default ``k``)
    current interactions and some activity in an earlier period.
    """
    dataset.check_period(t)
    if min_train_interactions is None:
        min_train_interactions = 2 * k
    if cold_max is None:
        cold_max = k
    train, test = [], []
    for user, events in dataset.by_period.get(t, {}).items():
        n = len(events)
        if n >= min_train_interactions:
            train.append(user)
        elif 1 <= n <= cold_max and dataset.has_history(user, t):
            test.append(user)
    if not train:
        raise UnusablePeriodError(f"period {t} has no user with >= {min_train_interactions} interactions")
    return sorted(train), sorted(test)


@dataclass(frozen=True)
class Task:
    user: str
    period: int
    support: tuple[Event, ...]
    query: tuple[Event, ...]


def make_task(dataset: PeriodizedDataset, user: str, t: int, k: int = 5) -> Task:
    """Earliest ``min(k, N_t)`` interactions form the support, the rest the query."""
    events = dataset.events(user, t)
    if not events:
        raise EmptyTaskError(f"user {user!r} has no interactions in period {t}")
    return Task(user, t, events[:k], events[k:])


def emit_interactions(dataset: PeriodizedDataset) -> list[Interaction]:
    """Flatten a dataset back to interaction records (inverse of partition)."""
    out = []
    for t in sorted(dataset.by_period):
        for user, events in dataset.by_period[t].items():
            for ev in events:
                value = ev.value
                if dataset.scale == "implicit-log":
                    value = math.expm1(value)
                out.append(Interaction(user, dataset.catalog.items[ev.item], value, ev.timestamp))
    return out
