import numpy as np
import pytest

import hybridivf


def test_default_k():
    assert hybridivf.default_k(500_000) == 500
    assert hybridivf.default_k(10**9) == 31623


def test_canonical_filter_and_syntax_error():
    assert hybridivf.canonical_filter("a0 >= 1 and not a1 = 2", 2) == "a0 >= 1 AND NOT a1 = 2"
    with pytest.raises(hybridivf.UsageError):
        hybridivf.canonical_filter("a9 =", 4)


def test_build_search_matches_brute_force(tmp_path):
    vectors, attrs = hybridivf.gen_synthetic(2000, 16, 3, seed=7)
    assert vectors.shape == (2000, 16) and attrs.shape == (2000, 3)
    index = hybridivf.Index.build(vectors, attrs, str(tmp_path / "idx"), num_lists=20, seed=3)
    assert len(index) == 2000 and index.num_lists == 20

    query = vectors[42]
    flt = "a0 >= 0 AND a1 < 10000"
    got = index.search(query, k=10, probes=20, filter=flt)
    want = hybridivf.brute_force(vectors, attrs, query, k=10, filter=flt)
    assert [n[0] for n in got["neighbors"]] == [n[0] for n in want]
    assert set(got["timings"]) == {"centroid_search", "filtering", "detailed_search", "total"}


def test_add_then_find(tmp_path):
    vectors, attrs = hybridivf.gen_synthetic(500, 8, 2, seed=1)
    index = hybridivf.Index.build(vectors, attrs, str(tmp_path / "idx"), num_lists=5)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(8).astype(np.float32)
    rid, cell = index.add(v, np.array([5, 6]))
    assert rid == 500 and 0 <= cell < 5
    reopened = hybridivf.Index.open(str(tmp_path / "idx"))
    res = reopened.search(v, k=1, probes=5, filter="a0 = 5 AND a1 = 6")
    assert res["neighbors"][0][0] == 500


def test_dimension_mismatch(tmp_path):
    vectors, attrs = hybridivf.gen_synthetic(100, 4, 1)
    index = hybridivf.Index.build(vectors, attrs, str(tmp_path / "idx"), num_lists=2)
    with pytest.raises(hybridivf.UsageError):
        index.search(np.zeros(5, dtype=np.float32))
