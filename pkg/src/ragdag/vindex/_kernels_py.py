"""Pure-Python/numpy graph-search kernels.

Reference implementation of the two hot kernels behind the layered
proximity-graph index: best-first beam search over one layer, and the
diversity-aware neighbor selection used while wiring the graph. The
compiled backend (``_kernels_cy``) implements exactly the same contracts;
this module is the fallback when that extension is not built.

Ordering contract shared by both backends: a node A beats node B when
A.score > B.score, or scores are equal and A's index is lower. All loops
visit neighbors in adjacency-row order, so for a fixed input the result
is fully deterministic.
"""

from __future__ import annotations

import heapq

import numpy as np


def search_layer(
    vectors: np.ndarray,
    neigh: np.ndarray,
    deg: np.ndarray,
    query: np.ndarray,
    entries: np.ndarray,
    ef: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Beam search one graph layer, maximizing dot-product score.

    Returns up to ``ef`` node indices with their scores, best first
    (descending score, ascending index on ties). ``entries`` must be
    distinct node indices alive on this layer.
    """
    n = vectors.shape[0]
    visited = np.zeros(n, dtype=np.uint8)

    # candidates: max-heap via (-score, id); results: min-heap with the
    # worst element at the root via (score, -id).
    candidates: list[tuple[float, int]] = []
    results: list[tuple[float, int]] = []

    entry_scores = vectors[entries] @ query
    for idx in range(entries.shape[0]):
        node = int(entries[idx])
        if visited[node]:
            continue
        visited[node] = 1
        score = float(entry_scores[idx])
        heapq.heappush(candidates, (-score, node))
        heapq.heappush(results, (score, -node))
        if len(results) > ef:
            heapq.heappop(results)

    while candidates:
        neg_score, node = heapq.heappop(candidates)
        score = -neg_score
        if len(results) == ef and score < results[0][0]:
            break
        row = neigh[node, : deg[node]]
        fresh = row[visited[row] == 0]
        if fresh.size == 0:
            continue
        visited[fresh] = 1
        fresh_scores = vectors[fresh] @ query
        for j in range(fresh.size):
            cand = int(fresh[j])
            cand_score = float(fresh_scores[j])
            if len(results) < ef:
                admit = True
            else:
                worst_score, neg_worst = results[0]
                admit = cand_score > worst_score or (
                    cand_score == worst_score and cand < -neg_worst
                )
            if admit:
                heapq.heappush(candidates, (-cand_score, cand))
                heapq.heappush(results, (cand_score, -cand))
                if len(results) > ef:
                    heapq.heappop(results)

    ordered = sorted(((s, -ni) for s, ni in results), key=lambda t: (-t[0], t[1]))
    ids = np.array([i for _, i in ordered], dtype=np.int32)
    scores = np.array([s for s, _ in ordered], dtype=np.float64)
    return ids, scores


def select_heuristic(
    vectors: np.ndarray,
    base: int,
    cand_ids: np.ndarray,
    m_max: int,
    keep_pruned: bool,
) -> np.ndarray:
    """Pick up to ``m_max`` diverse neighbors for node ``base``.

    Candidates are taken in order of descending score to the base
    (ascending index on ties); a candidate is kept only if it is closer
    to the base than to every neighbor already kept. With ``keep_pruned``
    the rejects backfill, in rejection order, until ``m_max`` is reached.
    """
    if cand_ids.size == 0:
        return np.empty(0, dtype=np.int32)
    base_scores = vectors[cand_ids] @ vectors[base]
    order = sorted(range(cand_ids.size), key=lambda j: (-base_scores[j], cand_ids[j]))

    selected: list[int] = []
    pruned: list[int] = []
    for j in order:
        if len(selected) == m_max:
            break
        cand = int(cand_ids[j])
        if selected:
            inter = vectors[selected] @ vectors[cand]
            if float(inter.max()) > float(base_scores[j]):
                pruned.append(cand)
                continue
        selected.append(cand)
    if keep_pruned:
        for cand in pruned:
            if len(selected) == m_max:
                break
            selected.append(cand)
    return np.array(selected, dtype=np.int32)
