"""Exact-parity checks between the compiled and pure-Python kernels.

Vectors here are integer-valued floats so BLAS and C-loop dot products
are bitwise identical; with float noise the two accumulate rounding in a
different order and only rank agreement is meaningful.
"""

import numpy as np
import pytest

from ragdag.vindex import IndexParams, VectorIndex, available_backends
from ragdag.vindex import _kernels_py

compiled_available = available_backends().get("compiled", False)
pytestmark = pytest.mark.skipif(
    not compiled_available, reason="compiled kernels not built"
)

if compiled_available:
    from ragdag.vindex import _kernels_cy


def int_vectors(n, dims, seed, lo=-4, hi=5):
    rng = np.random.default_rng(seed)
    return rng.integers(lo, hi, size=(n, dims)).astype(np.float64)


def random_graph(n, m_max, seed):
    rng = np.random.default_rng(seed)
    neigh = np.full((n, m_max), -1, dtype=np.intc)
    deg = np.zeros(n, dtype=np.intc)
    for i in range(n):
        d = int(rng.integers(0, m_max + 1))
        if d:
            others = rng.choice([j for j in range(n) if j != i], size=min(d, n - 1),
                                replace=False)
            neigh[i, : len(others)] = others
            deg[i] = len(others)
    return neigh, deg


@pytest.mark.parametrize("ef", [1, 3, 17, 64])
def test_search_layer_parity(ef):
    n, dims = 120, 12
    vectors = int_vectors(n, dims, seed=ef)
    neigh, deg = random_graph(n, 6, seed=ef + 100)
    rng = np.random.default_rng(ef + 7)
    for trial in range(10):
        q = rng.integers(-4, 5, size=dims).astype(np.float64)
        entries = np.array(
            sorted(rng.choice(n, size=3, replace=False).tolist()), dtype=np.intc
        )
        ids_p, sc_p = _kernels_py.search_layer(vectors, neigh, deg, q, entries, ef)
        ids_c, sc_c = _kernels_cy.search_layer(vectors, neigh, deg, q, entries, ef)
        assert np.array_equal(np.asarray(ids_p), np.asarray(ids_c)), f"trial {trial}"
        assert np.array_equal(np.asarray(sc_p), np.asarray(sc_c))


@pytest.mark.parametrize("m_max", [2, 5, 9])
@pytest.mark.parametrize("keep", [True, False])
def test_select_heuristic_parity(m_max, keep):
    n, dims = 60, 10
    vectors = int_vectors(n, dims, seed=m_max * 10 + keep)
    rng = np.random.default_rng(m_max)
    for _ in range(20):
        base = int(rng.integers(0, n))
        size = int(rng.integers(1, 20))
        cand = rng.choice([j for j in range(n) if j != base], size=min(size, n - 1),
                          replace=False).astype(np.intc)
        got_p = _kernels_py.select_heuristic(vectors, base, cand, m_max, keep)
        got_c = _kernels_cy.select_heuristic(vectors, base, cand, m_max, keep)
        assert list(got_p) == list(got_c)


def test_full_index_parity_on_integer_vectors():
    n, dims = 400, 16
    vectors = int_vectors(n, dims, seed=42)
    ids = [f"v{i:05d}" for i in range(n)]
    params = IndexParams(dims=dims, max_neighbors=8, ef_construction=60,
                         ef_search=40, seed=3)
    idx_p = VectorIndex.build(zip(ids, vectors), params, kernels=_kernels_py)
    idx_c = VectorIndex.build(zip(ids, vectors), params, kernels=_kernels_cy)
    rng = np.random.default_rng(9)
    for _ in range(20):
        q = rng.integers(-4, 5, size=dims).astype(np.float64)
        got_p = [(h.chunk_id, h.score) for h in idx_p.search(q, 10)]
        got_c = [(h.chunk_id, h.score) for h in idx_c.search(q, 10)]
        assert got_p == got_c


def test_saved_graphs_identical_across_backends(tmp_path):
    vectors = int_vectors(150, 8, seed=5)
    ids = [f"v{i:04d}" for i in range(150)]
    params = IndexParams(dims=8, max_neighbors=6, ef_construction=40, seed=1)
    VectorIndex.build(zip(ids, vectors), params, kernels=_kernels_py).save(
        tmp_path / "p.idx"
    )
    VectorIndex.build(zip(ids, vectors), params, kernels=_kernels_cy).save(
        tmp_path / "c.idx"
    )
    assert (tmp_path / "p.idx").read_bytes() == (tmp_path / "c.idx").read_bytes()


def test_pure_python_env_override(monkeypatch):
    import importlib

    from ragdag.vindex import _backend

    monkeypatch.setenv("RAGDAG_PURE_PYTHON", "1")
    importlib.reload(_backend)
    try:
        assert _backend.BACKEND_NAME == "python"
        assert _backend.get_kernels() is not None
    finally:
        monkeypatch.delenv("RAGDAG_PURE_PYTHON")
        importlib.reload(_backend)
    assert _backend.BACKEND_NAME == "compiled"
