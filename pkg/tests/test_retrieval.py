from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparsehash.codes import hamming_distance
from sparsehash.retrieval import (
    brute_force,
    build_index,
    load_index,
    lut_probe,
    plan_query,
    probe_count,
    query,
    rank_all,
    save_index,
)


def random_db(rng, n, m, density=0.3, alphabet="ternary"):
    if alphabet == "binary":
        return rng.choice(np.array([-1, 1], dtype=np.int8), size=(n, m))
    p = density / 2
    return rng.choice(np.array([-1, 0, 1], dtype=np.int8), size=(n, m), p=[p, 1 - density, p])


def oracle(db, q, r):
    return [i for i, c in enumerate(db) if hamming_distance(c, q) <= r]


def test_probe_count_examples():
    assert probe_count(4, 0) == 1
    assert probe_count(4, 1) == 1 + 4 * 2
    assert probe_count(4, 2) == 1 + 8 + 6 * 4
    assert probe_count(4, 2, "binary") == 1 + 4 + 6
    # m = 64, r = 2: 1 + 128 + 2016 * 4
    assert probe_count(64, 2) == 8193


@given(st.integers(1, 12), st.integers(0, 4), st.sampled_from(["ternary", "binary"]))
def test_probe_count_formula(m, r, alphabet):
    b = 2 if alphabet == "ternary" else 1
    assert probe_count(m, r, alphabet) == sum(comb(m, j) * b**j for j in range(min(r, m) + 1))


@given(st.integers(0, 10_000), st.integers(1, 10), st.integers(0, 3), st.sampled_from(["ternary", "binary"]))
def test_probe_equals_scan(seed, m, r, alphabet):
    r = min(r, m)
    rng = np.random.default_rng(seed)
    db = random_db(rng, int(rng.integers(1, 60)), m, 0.4, alphabet)
    index = build_index(db, alphabet)
    for q in (db[0], random_db(rng, 1, m, 0.4, alphabet)[0]):
        ids, n_probes = lut_probe(index, q, r)
        assert ids.tolist() == brute_force(index, q, r).tolist() == oracle(db, q, r)
        assert n_probes == probe_count(m, r, alphabet)


def test_exact_lookup_returns_self(rng):
    db = random_db(rng, 200, 16)
    index = build_index(db)
    for i in rng.choice(200, 10, replace=False):
        assert i in query(index, db[i], 0)


def test_binary_mode_rejects_zeros():
    with pytest.raises(ValueError):
        build_index(np.array([[1, 0, -1]]), "binary")
    index = build_index(np.array([[1, 1, -1]]), "binary")
    with pytest.raises(ValueError):
        lut_probe(index, np.array([1, 0, -1]), 1)


def test_radius_and_length_checks(rng):
    index = build_index(random_db(rng, 10, 8))
    with pytest.raises(ValueError):
        query(index, np.zeros(8), -1)
    with pytest.raises(ValueError):
        query(index, np.zeros(8), 9)
    with pytest.raises(ValueError):
        query(index, np.zeros(7), 1)
    with pytest.raises(ValueError):
        query(index, np.zeros(8), 1, strategy="magic")


def test_strategies_agree(rng):
    db = random_db(rng, 300, 12)
    index = build_index(db)
    for r in range(4):
        q = db[int(rng.integers(300))]
        assert query(index, q, r, "probe").tolist() == query(index, q, r, "scan").tolist() == query(index, q, r).tolist()


def test_plan_query():
    db = np.zeros((10, 64), dtype=np.int8)
    index = build_index(db)
    assert plan_query(index, 0).strategy == "lut_exact"
    plan = plan_query(index, 2)
    assert plan.probe_cost == 8193 and plan.scan_cost == 10.0
    assert plan.strategy == "brute_force"
    assert plan_query(index, 1, kappa=1000.0).strategy == "lut_probe"


def test_rank_all_orders_by_distance_then_id(rng):
    db = random_db(rng, 80, 10)
    index = build_index(db)
    q = db[3]
    ranked = rank_all(index, q)
    keys = [(hamming_distance(db[i], q), i) for i in ranked]
    assert keys == sorted(keys) and len(ranked) == 80
    assert rank_all(index, q, 5).tolist() == ranked[:5].tolist()


@given(st.integers(0, 1000), st.sampled_from(["ternary", "binary"]))
def test_index_file_roundtrip(tmp_path_factory, seed, alphabet):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 20))
    db = random_db(rng, int(rng.integers(1, 50)), m, 0.3, alphabet)
    index = build_index(db, alphabet)
    d = tmp_path_factory.mktemp("idx")
    save_index(d / "a.idx", index)
    back = load_index(d / "a.idx")
    assert back.alphabet == alphabet and back.m == m
    np.testing.assert_array_equal(back.codes, db)
    assert {k: v.tolist() for k, v in back.lut.items()} == {k: v.tolist() for k, v in index.lut.items()}
    save_index(d / "b.idx", back)
    assert (d / "a.idx").read_bytes() == (d / "b.idx").read_bytes()


def test_index_file_rejects_garbage(tmp_path):
    (tmp_path / "x").write_bytes(b"SHIX" + b"\0" * 3)
    with pytest.raises(ValueError):
        load_index(tmp_path / "x")
