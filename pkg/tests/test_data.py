import math
import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chronorec import data
from chronorec.errors import ConfigError, EmptyTaskError, ParseError, UnusablePeriodError

from conftest import DAY, make_dataset, tiny_catalog


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def files(tmp_path):
    attrs = write(tmp_path / "attrs.csv", "item,attributes\ni0,genre:a|year:x\ni1,genre:b\ni2,genre:a|director:z\n")
    inter = write(
        tmp_path / "inter.csv",
        "user,item,value,timestamp\nu1,i0,4,100\nu1,i1,3.5,200\nu2,i2,1,300\n",
    )
    return inter, attrs


# --- catalog -----------------------------------------------------------------


def test_catalog_builds_dictionary_from_union_of_tokens(files):
    _, attrs = files
    cat = data.read_catalog(attrs)
    assert cat.attributes == ("director:z", "genre:a", "genre:b", "year:x")
    assert cat.matrix.shape == (3, 4)
    assert set(np.unique(cat.matrix)) <= {0.0, 1.0}
    assert np.all(cat.matrix.sum(axis=1) >= 1)
    assert cat.matrix[cat.index("i0"), cat.attribute_index["year:x"]] == 1.0


def test_catalog_groups_by_namespace():
    cat = tiny_catalog()
    names = dict(cat.groups())
    assert set(names) == {"genre", "year"}
    assert sorted(c for cols in names.values() for c in cols) == list(range(cat.n_attributes))


def test_catalog_rejects_item_without_attributes(tmp_path):
    p = write(tmp_path / "a.csv", "item,attributes\ni0,genre:a\ni1,\n")
    with pytest.raises(ParseError) as exc:
        data.read_catalog(p)
    assert ":3:" in str(exc.value)


# --- ingest ------------------------------------------------------------------


def test_ingest_three_lines(files):
    inter, attrs = files
    rows, cat = data.ingest(inter, attrs)
    assert len(rows) == 3
    assert rows[1] == data.Interaction("u1", "i1", 3.5, 200.0)


def test_non_numeric_value_names_line_two(tmp_path, files):
    _, attrs = files
    p = write(tmp_path / "bad.csv", "user,item,value,timestamp\nu1,i0,lots,100\n")
    with pytest.raises(ParseError) as exc:
        data.ingest(p, attrs)
    assert exc.value.line == 2
    assert "bad.csv:2:" in str(exc.value)


def test_unknown_item_reports_line_numbers(tmp_path, files):
    _, attrs = files
    p = write(tmp_path / "x.csv", "user,item,value,timestamp\nu1,i0,1,1\n\nu1,nope,1,2\n")
    with pytest.raises(ParseError) as exc:
        data.ingest(p, attrs)
    assert exc.value.line == 4
    assert "nope" in str(exc.value)


def test_missing_header_rejected(tmp_path):
    p = write(tmp_path / "x.csv", "u1,i0,1,1\n")
    with pytest.raises(ParseError):
        data.read_interactions(p)


def test_duplicates_kept_with_warning(tmp_path, caplog):
    p = write(tmp_path / "x.csv", "user,item,value,timestamp\nu1,i0,1,5\nu1,i0,2,5\n")
    with caplog.at_level("WARNING"):
        rows = data.read_interactions(p)
    assert len(rows) == 2
    assert "duplicate" in caplog.text


def test_interaction_invariants():
    with pytest.raises(ValueError):
        data.Interaction("u", "i", float("nan"), 0.0)
    with pytest.raises(ValueError):
        data.Interaction("u", "i", 1.0, -1.0)


def test_thousand_line_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    cat = tiny_catalog(10)
    rows = [
        data.Interaction(f"u{rng.integers(50)}", f"i{rng.integers(10)}", float(rng.integers(1, 6)), float(rng.integers(0, 10**8)))
        for _ in range(1000)
    ]
    ip, ap = tmp_path / "i.csv", tmp_path / "a.csv"
    data.write_interactions(ip, rows)
    data.write_catalog(ap, cat)
    back, cat2 = data.ingest(ip, ap)
    assert back == rows
    assert cat2.items == cat.items and np.array_equal(cat2.matrix, cat.matrix)
    # emit(partition(x)) is a permutation of x
    ds = data.partition(back, cat2, 30 * DAY)
    assert Counter(data.emit_interactions(ds)) == Counter(rows)


# --- partition ---------------------------------------------------------------


def test_single_period_when_span_is_short(catalog):
    rows = [data.Interaction("u", "i0", 1.0, float(t)) for t in (0, 10, 20)]
    assert data.partition(rows, catalog, 100.0).n_periods == 1


def test_twelve_months_in_quarters(catalog):
    month = 30 * DAY
    rows = [data.Interaction("u", "i0", 1.0, float(k * month)) for k in range(13)]
    ds = data.partition(rows, catalog, 3 * month)
    assert ds.n_periods == 4
    # the final boundary belongs to the last period
    assert len(ds.events("u", 4)) == 4


def test_periods_contiguous_and_cover_span(catalog):
    rows = [data.Interaction("u", "i0", 1.0, float(t)) for t in (5, 17, 99)]
    ds = data.partition(rows, catalog, 10.0)
    assert ds.periods[0][0] == 5.0
    for (a, b), (c, _) in zip(ds.periods, ds.periods[1:]):
        assert b == c and b > a
    assert ds.periods[-1][1] >= 99.0


def test_partition_rejects_bad_length(catalog):
    rows = [data.Interaction("u", "i0", 1.0, 0.0)]
    with pytest.raises(ConfigError):
        data.partition(rows, catalog, 0.0)
    with pytest.raises(ConfigError):
        data.partition(rows, catalog, -5.0)


def brute_force_counts(stamps, length):
    origin = min(stamps)
    n = max(1, math.ceil((max(stamps) - origin) / length))
    counts = [0] * n
    for s in stamps:
        k = 0
        while k < n - 1 and not (origin + k * length <= s < origin + (k + 1) * length):
            k += 1
        counts[k] += 1
    return counts


@given(stamps=st.lists(st.integers(0, 10_000), min_size=1, max_size=60), length=st.integers(1, 3000))
def test_bucketing_matches_brute_force(stamps, length):
    cat = tiny_catalog()
    rows = [data.Interaction(f"u{j % 3}", "i0", 1.0, float(s)) for j, s in enumerate(stamps)]
    ds = data.partition(rows, cat, float(length))
    got = [sum(len(ev) for ev in ds.by_period.get(t, {}).values()) for t in range(1, ds.n_periods + 1)]
    assert got == brute_force_counts(stamps, length)
    # bijection: every interaction lands in exactly one period
    assert ds.count() == len(rows)


@given(counts=st.lists(st.integers(0, 10**6), min_size=1, max_size=20))
def test_implicit_log_is_invertible(counts):
    cat = tiny_catalog()
    rows = [data.Interaction("u", "i0", float(c), float(j)) for j, c in enumerate(counts)]
    ds = data.partition(rows, cat, 1000.0, scale="implicit-log")
    values = sorted(ev.value for ev in ds.events("u", 1))
    assert values == sorted(values)
    back = sorted(math.expm1(v) for v in values)
    assert np.allclose(back, sorted(counts), atol=1e-9, rtol=1e-12)
    emitted = sorted(r.value for r in data.emit_interactions(ds))
    assert np.allclose(emitted, sorted(counts), atol=1e-9, rtol=1e-12)


def test_implicit_log_rejects_negative_counts(catalog):
    with pytest.raises(ValueError):
        data.partition([data.Interaction("u", "i0", -1.0, 0.0)], catalog, 10.0, scale="implicit-log")


# --- split_users -------------------------------------------------------------


def _history_and_current(n_current, with_history=True):
    evs = [("i0", 3.0, 0.1)] if with_history else []
    evs += [(f"i{j % 6}", 4.0, 1.0 + j / 1000) for j in range(n_current)]
    return evs


def test_heavy_user_is_meta_train():
    ds = make_dataset({"heavy": _history_and_current(40), "pad": [("i1", 1.0, 1.5)]})
    train, test = data.split_users(ds, 2, k=5, min_train_interactions=20)
    assert "heavy" in train and "heavy" not in test


def test_cold_user_with_history_is_meta_test():
    ds = make_dataset({"heavy": _history_and_current(12), "cold": _history_and_current(3)})
    train, test = data.split_users(ds, 2, k=5)
    assert train == ["heavy"] and test == ["cold"]


def test_new_user_excluded_from_meta_test():
    ds = make_dataset({"heavy": _history_and_current(12), "new": _history_and_current(3, with_history=False)})
    _, test = data.split_users(ds, 2, k=5)
    assert test == []


def test_empty_meta_train_is_unusable():
    ds = make_dataset({"cold": _history_and_current(3)})
    with pytest.raises(UnusablePeriodError):
        data.split_users(ds, 2, k=5)


def test_split_counts_match_brute_force(small_synth):
    _, _, ds = small_synth
    for t in range(1, ds.n_periods + 1):
        try:
            train, test = data.split_users(ds, t, k=5)
        except UnusablePeriodError:
            continue
        bf_train, bf_test = [], []
        for u in ds.users:
            n = len(ds.events(u, t))
            hist = sum(len(ds.events(u, s)) for s in range(1, t))
            if n >= 10:
                bf_train.append(u)
            elif 1 <= n <= 5 and hist > 0:
                bf_test.append(u)
        assert train == bf_train and test == bf_test
        assert not set(train) & set(test)


# --- make_task ---------------------------------------------------------------


def test_task_twelve_interactions():
    ds = make_dataset({"u": [(f"i{j % 6}", float(j), 0.01 * j) for j in range(12)]})
    task = data.make_task(ds, "u", 1, k=5)
    assert len(task.support) == 5 and len(task.query) == 7
    assert [e.value for e in task.support] == [0.0, 1.0, 2.0, 3.0, 4.0]


def test_task_clamps_to_available():
    ds = make_dataset({"u": [("i0", 1.0, 0.1), ("i1", 2.0, 0.2), ("i2", 3.0, 0.3)]})
    task = data.make_task(ds, "u", 1, k=5)
    assert len(task.support) == 3 and task.query == ()


def test_empty_task_signal():
    ds = make_dataset({"u": [("i0", 1.0, 0.1)], "v": [("i0", 1.0, 1.5)]})
    with pytest.raises(EmptyTaskError):
        data.make_task(ds, "u", 2)


@given(seed=st.integers(0, 10**6), n=st.integers(1, 20), k=st.integers(1, 8))
def test_task_invariant_under_input_order(seed, n, k):
    evs = [(f"i{j % 6}", float(j % 5), 0.001 * (j * 7 % 23)) for j in range(n)]
    shuffled = list(evs)
    random.Random(seed).shuffle(shuffled)
    a = data.make_task(make_dataset({"u": evs}), "u", 1, k)
    b = data.make_task(make_dataset({"u": shuffled}), "u", 1, k)
    assert a == b
    # support and query partition the period exactly; support is earliest
    whole = make_dataset({"u": evs}).events("u", 1)
    assert Counter(a.support + a.query) == Counter(whole)
    if a.query:
        assert max(e.timestamp for e in a.support) <= min(e.timestamp for e in a.query)
