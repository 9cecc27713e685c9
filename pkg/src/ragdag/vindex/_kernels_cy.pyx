#cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled graph-search kernels.

Same contracts and ordering rules as ``_kernels_py``: beam search and
neighbor selection maximize dot-product score, ties break toward the lower
node index, neighbors are visited in adjacency-row order. Distances are
accumulated left-to-right in float64.
"""

import numpy as np

cimport numpy as cnp


cdef inline bint _better(double s1, int i1, double s2, int i2) nogil:
    return s1 > s2 or (s1 == s2 and i1 < i2)


cdef inline double _dot_q(const double[:, ::1] vectors, int node,
                          const double[::1] query, int d) nogil:
    cdef double acc = 0.0
    cdef int j
    for j in range(d):
        acc += vectors[node, j] * query[j]
    return acc


cdef inline double _dot_nn(const double[:, ::1] vectors, int a, int b,
                           int d) nogil:
    cdef double acc = 0.0
    cdef int j
    for j in range(d):
        acc += vectors[a, j] * vectors[b, j]
    return acc


# Max-heap keyed by _better: root is the best (highest score, lowest id).
cdef inline void _best_push(double* hs, int* hi, int* size, double s,
                            int node) nogil:
    cdef int j = size[0]
    cdef int parent
    cdef double ts
    cdef int ti
    hs[j] = s
    hi[j] = node
    size[0] += 1
    while j > 0:
        parent = (j - 1) >> 1
        if _better(hs[j], hi[j], hs[parent], hi[parent]):
            ts = hs[j]; hs[j] = hs[parent]; hs[parent] = ts
            ti = hi[j]; hi[j] = hi[parent]; hi[parent] = ti
            j = parent
        else:
            break


cdef inline void _best_pop(double* hs, int* hi, int* size) nogil:
    cdef int n = size[0] - 1
    cdef int j = 0
    cdef int l, r, m
    cdef double ts
    cdef int ti
    size[0] = n
    hs[0] = hs[n]
    hi[0] = hi[n]
    while True:
        l = 2 * j + 1
        r = l + 1
        m = j
        if l < n and _better(hs[l], hi[l], hs[m], hi[m]):
            m = l
        if r < n and _better(hs[r], hi[r], hs[m], hi[m]):
            m = r
        if m == j:
            break
        ts = hs[j]; hs[j] = hs[m]; hs[m] = ts
        ti = hi[j]; hi[j] = hi[m]; hi[m] = ti
        j = m


# Min-heap keyed by _better: root is the worst (lowest score, highest id).
cdef inline void _worst_push(double* hs, int* hi, int* size, double s,
                             int node) nogil:
    cdef int j = size[0]
    cdef int parent
    cdef double ts
    cdef int ti
    hs[j] = s
    hi[j] = node
    size[0] += 1
    while j > 0:
        parent = (j - 1) >> 1
        if _better(hs[parent], hi[parent], hs[j], hi[j]):
            ts = hs[j]; hs[j] = hs[parent]; hs[parent] = ts
            ti = hi[j]; hi[j] = hi[parent]; hi[parent] = ti
            j = parent
        else:
            break


cdef inline void _worst_pop(double* hs, int* hi, int* size) nogil:
    cdef int n = size[0] - 1
    cdef int j = 0
    cdef int l, r, m
    cdef double ts
    cdef int ti
    size[0] = n
    hs[0] = hs[n]
    hi[0] = hi[n]
    while True:
        l = 2 * j + 1
        r = l + 1
        m = j
        if l < n and _better(hs[m], hi[m], hs[l], hi[l]):
            m = l
        if r < n and _better(hs[m], hi[m], hs[r], hi[r]):
            m = r
        if m == j:
            break
        ts = hs[j]; hs[j] = hs[m]; hs[m] = ts
        ti = hi[j]; hi[j] = hi[m]; hi[m] = ti
        j = m


def search_layer(const double[:, ::1] vectors, const int[:, ::1] neigh,
                 const int[::1] deg, const double[::1] query,
                 const int[::1] entries, int ef):
    """Beam search one layer; see the pure-Python twin for the contract."""
    cdef int n = vectors.shape[0]
    cdef int d = vectors.shape[1]
    cdef int n_entries = entries.shape[0]

    visited_arr = np.zeros(n, dtype=np.uint8)
    cand_s_arr = np.empty(n + 1, dtype=np.float64)
    cand_i_arr = np.empty(n + 1, dtype=np.intc)
    res_s_arr = np.empty(ef + 1, dtype=np.float64)
    res_i_arr = np.empty(ef + 1, dtype=np.intc)
    cdef unsigned char[::1] visited = visited_arr
    cdef double[::1] cand_s = cand_s_arr
    cdef int[::1] cand_i = cand_i_arr
    cdef double[::1] res_s = res_s_arr
    cdef int[::1] res_i = res_i_arr

    cdef int nc = 0, nr = 0
    cdef int idx, node, cand, j, dn
    cdef double score, cand_score
    cdef bint admit

    for idx in range(n_entries):
        node = entries[idx]
        if visited[node]:
            continue
        visited[node] = 1
        score = _dot_q(vectors, node, query, d)
        _best_push(&cand_s[0], &cand_i[0], &nc, score, node)
        _worst_push(&res_s[0], &res_i[0], &nr, score, node)
        if nr > ef:
            _worst_pop(&res_s[0], &res_i[0], &nr)

    while nc > 0:
        score = cand_s[0]
        node = cand_i[0]
        _best_pop(&cand_s[0], &cand_i[0], &nc)
        if nr == ef and score < res_s[0]:
            break
        dn = deg[node]
        for j in range(dn):
            cand = neigh[node, j]
            if visited[cand]:
                continue
            visited[cand] = 1
            cand_score = _dot_q(vectors, cand, query, d)
            if nr < ef:
                admit = True
            else:
                admit = cand_score > res_s[0] or (
                    cand_score == res_s[0] and cand < res_i[0]
                )
            if admit:
                _best_push(&cand_s[0], &cand_i[0], &nc, cand_score, cand)
                _worst_push(&res_s[0], &res_i[0], &nr, cand_score, cand)
                if nr > ef:
                    _worst_pop(&res_s[0], &res_i[0], &nr)

    # Drain into (-score, id)-ascending order by repeatedly removing the
    # worst element and filling the output back to front.
    ids = np.empty(nr, dtype=np.int32)
    scores = np.empty(nr, dtype=np.float64)
    cdef int[::1] ids_v = ids
    cdef double[::1] scores_v = scores
    j = nr - 1
    while nr > 0:
        scores_v[j] = res_s[0]
        ids_v[j] = res_i[0]
        _worst_pop(&res_s[0], &res_i[0], &nr)
        j -= 1
    return ids, scores


def select_heuristic(const double[:, ::1] vectors, int base,
                     const int[::1] cand_ids, int m_max, bint keep_pruned):
    """Diversity-aware neighbor pick; see the pure-Python twin."""
    cdef int m = cand_ids.shape[0]
    cdef int d = vectors.shape[1]
    if m == 0:
        return np.empty(0, dtype=np.int32)

    scores_arr = np.empty(m, dtype=np.float64)
    order_arr = np.empty(m, dtype=np.intc)
    cdef double[::1] base_scores = scores_arr
    cdef int[::1] order = order_arr
    cdef int i, j, k, cand, nsel = 0, npr = 0
    cdef double s
    cdef bint ok

    for i in range(m):
        base_scores[i] = _dot_nn(vectors, cand_ids[i], base, d)

    # Insertion sort of candidate positions by (-score, id).
    for i in range(m):
        j = i
        while j > 0 and _better(
            base_scores[i], cand_ids[i],
            base_scores[order[j - 1]], cand_ids[order[j - 1]],
        ):
            order[j] = order[j - 1]
            j -= 1
        order[j] = i

    selected_arr = np.empty(m_max if m_max < m else m, dtype=np.int32)
    pruned_arr = np.empty(m, dtype=np.intc)
    cdef int[::1] selected = selected_arr
    cdef int[::1] pruned = pruned_arr

    for i in range(m):
        if nsel == m_max:
            break
        k = order[i]
        cand = cand_ids[k]
        ok = True
        for j in range(nsel):
            if _dot_nn(vectors, cand, selected[j], d) > base_scores[k]:
                ok = False
                break
        if ok:
            selected[nsel] = cand
            nsel += 1
        else:
            pruned[npr] = cand
            npr += 1
    if keep_pruned:
        for i in range(npr):
            if nsel == m_max:
                break
            selected[nsel] = pruned[i]
            nsel += 1
    return np.asarray(selected_arr[:nsel])
