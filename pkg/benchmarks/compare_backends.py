"""Compare the compiled and pure-Python search kernels.

Builds the same index with each backend, times construction and queries,
and reports recall@10 against exact brute force. Run:

    python3 benchmarks/compare_backends.py [--n 10000] [--dims 64] [--queries 200]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ragdag.vindex import IndexParams, VectorIndex, available_backends
from ragdag.vindex import _backend


def make_data(n: int, dims: int, n_queries: int, seed: int = 42):
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(50, dims))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    assign = rng.integers(0, 50, size=n)
    vectors = centers[assign] + 0.35 * rng.normal(size=(n, dims))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    q_assign = rng.integers(0, 50, size=n_queries)
    queries = centers[q_assign] + 0.35 * rng.normal(size=(n_queries, dims))
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)
    return vectors, queries


def true_topk(vectors: np.ndarray, queries: np.ndarray, k: int) -> list[set[int]]:
    out = []
    scores = queries @ vectors.T
    for row in scores:
        idx = np.argsort(-row, kind="stable")[:k]
        out.append(set(int(i) for i in idx))
    return out


def run_backend(name: str, kernels, vectors, queries, truth, k: int) -> dict:
    params = IndexParams(dims=vectors.shape[1], seed=0)
    entries = [(f"c{i:06d}", vectors[i]) for i in range(len(vectors))]

    t0 = time.perf_counter()
    index = VectorIndex.build(entries, params, kernels=kernels)
    build_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    hits = 0
    for qi, q in enumerate(queries):
        found = index.search(q, k)
        got = {int(h.chunk_id[1:]) for h in found}
        hits += len(got & truth[qi])
    search_s = time.perf_counter() - t0

    return {
        "backend": name,
        "build_s": build_s,
        "per_query_ms": 1000.0 * search_s / len(queries),
        "recall": hits / (k * len(queries)),
    }


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=10000)
    ap.add_argument("--dims", type=int, default=64)
    ap.add_argument("--queries", type=int, default=200)
    ap.add_argument("--k", type=int, default=10)
    args = ap.parse_args()

    vectors, queries = make_data(args.n, args.dims, args.queries)
    truth = true_topk(vectors, queries, args.k)

    rows = []
    status = available_backends()
    from ragdag.vindex import _kernels_py

    rows.append(run_backend("python", _kernels_py, vectors, queries, truth, args.k))
    if status.get("compiled"):
        from ragdag.vindex import _kernels_cy

        rows.append(run_backend("compiled", _kernels_cy, vectors, queries, truth, args.k))
    else:
        print("compiled kernels unavailable, timing the python backend only")

    print(f"\nn={args.n} dims={args.dims} queries={args.queries} k={args.k}")
    print(f"{'backend':<10} {'build_s':>9} {'ms/query':>9} {'recall':>8}")
    for r in rows:
        print(
            f"{r['backend']:<10} {r['build_s']:>9.2f} "
            f"{r['per_query_ms']:>9.3f} {r['recall']:>8.4f}"
        )
    if len(rows) == 2:
        speedup = rows[0]["per_query_ms"] / rows[1]["per_query_ms"]
        print(f"\ncompiled speedup: {speedup:.1f}x per query")
        if rows[0]["recall"] != rows[1]["recall"]:
            print("note: recall differs between backends on this float data; "
                  "bitwise parity is only guaranteed for integer-valued vectors")
    print(f"active default backend: {_backend.BACKEND_NAME}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
