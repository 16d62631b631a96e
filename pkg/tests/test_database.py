import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from detnas_bench import database as db
from detnas_bench.database import (
    RECORD_KEYS, ArchRecord, DatabaseError, MergeConflictError, Pool,
)
from detnas_bench.hashing import config_id, fnv1a_64
from detnas_bench.space import CARDINALITY, FIRST_CONFIG, config_from_index


def rec(i, m=None, lat=None, source="random", rnd=0):
    return ArchRecord.new(config_from_index(i), source, rnd, m, lat)


def evaluated_pool(n, start=0, step=1):
    return Pool(rec(start + k * step, 0.2 + (k % 97) * 1e-3, 10.0 + k) for k in range(n))


record_st = st.builds(
    lambda i, ev, m, lat, src, rnd: ArchRecord.new(
        config_from_index(i), src, rnd, m if ev else None, lat if ev else None),
    st.integers(0, CARDINALITY - 1), st.booleans(),
    st.floats(0, 1, allow_nan=False), st.floats(1e-3, 1e4, allow_nan=False),
    st.sampled_from(["random", "stratified", "lhs", "search", "self_evolve_round_3"]),
    st.integers(0, 20))


def pool_of(records):
    pool = Pool()
    for r in records:
        if r.id not in pool:
            pool.add(r)
    return pool


def test_id_is_fnv_hash_of_canonical():
    r = rec(0)
    assert r.id == f"{fnv1a_64(FIRST_CONFIG.canonical().encode()):016x}" == config_id(FIRST_CONFIG.canonical())
    assert len(r.id) == 16


def test_jsonl_key_order():
    line = rec(5, 0.3, 12.0).to_json()
    assert list(json.loads(line)) == list(RECORD_KEYS)
    assert json.loads(line)["config"] == config_from_index(5).canonical()


@settings(max_examples=50)
@given(st.lists(record_st, max_size=30))
def test_save_load_round_trip(tmp_path_factory, records):
    pool = pool_of(records)
    path = tmp_path_factory.mktemp("db") / "pool.jsonl"
    db.save(pool, path)
    loaded = db.load(path)
    assert loaded == pool
    assert list(loaded) == list(pool)


def test_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert len(db.load(path)) == 0


def test_duplicate_id_names_line(tmp_path):
    lines = [rec(i).to_json() for i in range(6)] + [rec(2).to_json()]
    path = tmp_path / "dup.jsonl"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatabaseError, match="line 7") as info:
        db.load(path)
    assert info.value.line == 7


@pytest.mark.parametrize("mutate,msg", [
    (lambda o: o.update(map_50_95=1.5, latency_ms=10.0), "outside"),
    (lambda o: o.update(map_50_95=0.3), "both present"),
    (lambda o: o.update(id="0000000000000000"), "hash"),
    (lambda o: o.update(source="magic"), "source"),
    (lambda o: o.update(source="self_evolve_round_0"), "source"),
    (lambda o: o.update(created_round=-1), "created_round"),
    (lambda o: o.update(config="ch_p2=128"), "config"),
    (lambda o: o.pop("source"), "keys"),
    (lambda o: o.update(config=FIRST_CONFIG.replace(ch_p3=512).canonical()), "invalid config"),
])
def test_invariant_violations_name_line(mutate, msg):
    obj = json.loads(rec(1).to_json())
    mutate(obj)
    text = rec(0).to_json() + "\n" + json.dumps(obj) + "\n"
    with pytest.raises(DatabaseError, match=msg) as info:
        db.loads(text)
    assert info.value.line == 2


def test_parse_error_line():
    with pytest.raises(DatabaseError, match="line 3"):
        db.loads(rec(0).to_json() + "\n" + rec(1).to_json() + "\n{broken\n")


def test_truncated_file_is_rejected(tmp_path):
    text = db.dumps(evaluated_pool(3))
    with pytest.raises(DatabaseError):
        db.loads(text[:-20])


def test_atomic_save_leaves_no_temp(tmp_path):
    path = tmp_path / "p.jsonl"
    db.save(evaluated_pool(4), path)
    db.save(evaluated_pool(5), path)
    assert [p.name for p in tmp_path.iterdir()] == ["p.jsonl"]
    assert len(db.load(path)) == 5


# --- merge -----------------------------------------------------------------------

def test_merge_identity():
    p = evaluated_pool(20)
    assert db.merge(p, Pool()) == p
    assert db.merge(Pool(), p) == p


def test_merge_disjoint_sizes():
    a = evaluated_pool(1000, start=0)
    b = evaluated_pool(50, start=5000)
    assert len(db.merge(a, b)) == 1050


def test_merge_evaluated_wins():
    a = Pool([rec(3)])
    b = Pool([rec(3, 0.31, 40.0)])
    assert db.merge(a, b)[rec(3).id].map_50_95 == 0.31
    assert db.merge(b, a)[rec(3).id].map_50_95 == 0.31


def test_merge_conflict():
    with pytest.raises(MergeConflictError):
        db.merge(Pool([rec(3, 0.30, 40.0)]), Pool([rec(3, 0.31, 40.0)]))


@settings(max_examples=50)
@given(st.lists(record_st, max_size=15), st.lists(record_st, max_size=15),
       st.lists(record_st, max_size=15))
def test_merge_associative_commutative(xs, ys, zs):
    # make inputs conflict-free: one ground truth per config
    truth = {}
    for r in xs + ys + zs:
        if r.evaluated:
            truth.setdefault(r.id, r)

    def canon(records):
        out = []
        for r in records:
            t = truth.get(r.id)
            out.append(r if not r.evaluated or t is None else t)
        return pool_of(out)

    a, b, c = canon(xs), canon(ys), canon(zs)
    as_set = lambda p: {(r.id, r.map_50_95) for r in p}  # noqa: E731
    assert as_set(db.merge(a, b)) == as_set(db.merge(b, a))
    assert db.merge(db.merge(a, b), c) == db.merge(a, db.merge(b, c))


# --- split -----------------------------------------------------------------------

def test_split_sizes_and_disjoint():
    pool = evaluated_pool(1000, step=37)
    train, val = db.split(pool, 0.2, 3)
    assert (len(train), len(val)) == (800, 200)
    assert set(train.ids()).isdisjoint(val.ids())
    assert set(train.ids()) | set(val.ids()) == set(pool.ids())


def test_split_deterministic_and_order_free():
    pool = evaluated_pool(100)
    shuffled = Pool(reversed(list(pool)))
    a = db.split(pool, 0.2, 3)
    b = db.split(shuffled, 0.2, 3)
    assert set(a[1].ids()) == set(b[1].ids())
    assert db.split(pool, 0.2, 3)[1].ids() == a[1].ids()
    assert db.split(pool, 0.2, 4)[1].ids() != a[1].ids()


def test_split_ceiling_rule():
    train, val = db.split(evaluated_pool(3), 0.5, 0)
    assert (len(train), len(val)) == (1, 2)


def test_split_skips_unevaluated():
    pool = evaluated_pool(10)
    pool.add(rec(999_999))
    train, val = db.split(pool, 0.2, 1)
    assert len(train) + len(val) == 10


def test_split_errors():
    with pytest.raises(DatabaseError):
        db.split(Pool([rec(1, 0.3, 10.0), rec(2)]), 0.2, 0)
    with pytest.raises(ValueError):
        db.split(evaluated_pool(10), 1.0, 0)


# --- reporting -------------------------------------------------------------------

def test_stats():
    pool = evaluated_pool(4)
    pool.add(rec(999_999, source="lhs"))
    s = db.stats(pool)
    assert s["records"] == 5 and s["evaluated"] == 4
    assert s["by_source"] == {"lhs": 1, "random": 4}


def test_export_csv_columns():
    text = db.export_csv(Pool([rec(0, 0.3, 82.0), rec(7)]))
    rows = [line.split(",") for line in text.strip().split("\n")]
    assert rows[0] == ["id", "total_cost", "latency_ms", "map_50_95", "predicted_map", "source"]
    assert rows[1] == [rec(0).id, "38.5", "82.0", "0.3", "", "random"]
    assert rows[2][2:5] == ["", "", ""]


def test_pool_arrays():
    pool = evaluated_pool(5)
    np.testing.assert_array_equal(pool.latencies(), [10, 11, 12, 13, 14])
    assert pool.digest() == evaluated_pool(5).digest()
    assert pool.digest() != evaluated_pool(6).digest()
