"""Compiled CART split search and tree growth.

Split quality is scored as ``S = sum_k L_k^2 / n_L + sum_k R_k^2 / n_R`` over
(weighted) class counts, which is ``n`` minus the weighted Gini impurity of the
two children times ``n``. Maximizing ``S`` maximizes Gini gain.

Candidates are scanned in (ascending column, ascending threshold) order and a
candidate replaces the incumbent only if it is better by more than ``tol``, so
ties resolve to the lowest column and then the lowest threshold.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# a node with m rows is scanned through the forest-level presorted order
# (cost n) instead of being sorted (cost m log m) when m log2 m > FILTER_RATIO n
FILTER_RATIO = 0.35


@njit(cache=True, nogil=True)
def midpoint(a, b):
    t = 0.5 * (a + b)
    if t >= b:
        t = a
    return t


@njit(cache=True, nogil=True)
def scan_column(vals, rows, m, y, w, tot, W, base2, min_leaf, lft, best_s, tol):
    """Best split of one column given ``vals[:m]`` sorted ascending with row ids ``rows``.

    Returns (score, threshold, found) where found is False when nothing beats
    ``best_s + tol``.
    """
    n_classes = tot.shape[0]
    for k in range(n_classes):
        lft[k] = 0.0
    nl = 0.0
    sl2 = 0.0
    sr2 = base2
    out_s = best_s
    out_t = 0.0
    found = False
    for p in range(m - 1):
        r = rows[p]
        k = y[r]
        wr = w[r]
        sl2 += 2.0 * lft[k] * wr + wr * wr
        sr2 -= 2.0 * (tot[k] - lft[k]) * wr - wr * wr
        lft[k] += wr
        nl += wr
        a = vals[p]
        b = vals[p + 1]
        if b > a:
            nr = W - nl
            if nl >= min_leaf and nr >= min_leaf:
                s = sl2 / nl + sr2 / nr
                if s > out_s + tol:
                    out_s = s
                    out_t = midpoint(a, b)
                    found = True
    return out_s, out_t, found


@njit(cache=True, nogil=True)
def node_split(X, y, w, idx, s, e, cols, tot, W, min_leaf, tol,
               Xs, order, mark, node, vals, rows, lft):
    """Best (column, threshold, score) over ``cols`` for rows ``idx[s:e]``.

    Returns column -1 when no split improves on the parent by more than ``tol``.
    ``Xs``/``order`` are the per-column presorted values and row ids of the
    whole training matrix; ``mark`` is scratch for node membership.
    """
    m = e - s
    base2 = 0.0
    for k in range(tot.shape[0]):
        base2 += tot[k] * tot[k]
    base = base2 / W
    best_s = base
    best_c = -1
    best_t = 0.0
    n_all = order.shape[1]
    use_filter = m * np.log2(m + 1.0) > FILTER_RATIO * n_all
    if use_filter:
        for i in range(s, e):
            mark[idx[i]] = node
    for ci in range(cols.shape[0]):
        c = cols[ci]
        if use_filter:
            q = 0
            for j in range(n_all):
                r = order[c, j]
                if mark[r] == node:
                    vals[q] = Xs[c, j]
                    rows[q] = r
                    q += 1
        else:
            for i in range(m):
                vals[i] = X[idx[s + i], c]
            o = np.argsort(vals[:m])
            tmp = vals[:m][o]
            for i in range(m):
                rows[i] = idx[s + o[i]]
            vals[:m] = tmp
        sc, t, found = scan_column(vals, rows, m, y, w, tot, W, base2, min_leaf, lft, best_s, tol)
        if found:
            best_s = sc
            best_c = c
            best_t = t
    return best_c, best_t, best_s, base


@njit(cache=True, nogil=True)
def grow_tree(X, y, w, idx, n_classes, n_sample, U, max_depth, min_split, min_leaf, tol,
              Xs, order):
    """Grow one tree depth-first, numbering nodes in preorder.

    ``idx`` holds the distinct rows in the sample, ``w`` their multiplicities.
    Node ``i`` samples its candidate columns with a partial Fisher-Yates
    shuffle driven by ``U[i]``. Returns trimmed node arrays and the per-column
    weighted impurity decrease.
    """
    d = X.shape[1]
    m_all = idx.shape[0]
    cap = 2 * m_all + 1
    feat = np.full(cap, -1, np.int64)
    thr = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    counts = np.zeros((cap, n_classes))
    imp = np.zeros(d)
    st_s = np.empty(cap, np.int64)
    st_e = np.empty(cap, np.int64)
    st_d = np.empty(cap, np.int64)
    st_p = np.empty(cap, np.int64)
    st_l = np.empty(cap, np.int64)
    st_s[0] = 0
    st_e[0] = m_all
    st_d[0] = 0
    st_p[0] = -1
    st_l[0] = 0
    sp = 1
    nn = 0
    perm = np.arange(d)
    vals = np.empty(max(m_all, 1))
    rows = np.empty(max(m_all, 1), np.int64)
    mark = np.full(X.shape[0], -1, np.int64)
    tot = np.zeros(n_classes)
    lft = np.zeros(n_classes)
    cols = np.empty(n_sample, np.int64)
    while sp > 0:
        sp -= 1
        s = st_s[sp]
        e = st_e[sp]
        dep = st_d[sp]
        par = st_p[sp]
        node = nn
        nn += 1
        if par >= 0:
            if st_l[sp] == 1:
                left[par] = node
            else:
                right[par] = node
        for k in range(n_classes):
            tot[k] = 0.0
        W = 0.0
        for i in range(s, e):
            r = idx[i]
            tot[y[r]] += w[r]
            W += w[r]
        counts[node, :] = tot
        pure = False
        for k in range(n_classes):
            if tot[k] == W:
                pure = True
        if pure or dep >= max_depth or W < min_split or e - s < 2:
            continue
        for i in range(d):
            perm[i] = i
        for i in range(n_sample):
            j = i + int(U[node, i] * (d - i))
            if j >= d:
                j = d - 1
            t_ = perm[i]
            perm[i] = perm[j]
            perm[j] = t_
        cols[:] = np.sort(perm[:n_sample])
        c, t, sc, base = node_split(X, y, w, idx, s, e, cols, tot, W, min_leaf, tol,
                                    Xs, order, mark, node, vals, rows, lft)
        if c < 0:
            continue
        feat[node] = c
        thr[node] = t
        imp[c] += sc - base
        i = s
        j = e - 1
        while i <= j:
            if X[idx[i], c] <= t:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        st_s[sp] = i
        st_e[sp] = e
        st_d[sp] = dep + 1
        st_p[sp] = node
        st_l[sp] = 0
        sp += 1
        st_s[sp] = s
        st_e[sp] = i
        st_d[sp] = dep + 1
        st_p[sp] = node
        st_l[sp] = 1
        sp += 1
    return (feat[:nn].copy(), thr[:nn].copy(), left[:nn].copy(), right[:nn].copy(),
            counts[:nn].copy(), imp)


@njit(cache=True, nogil=True)
def apply_tree(X, feat, thr, left, right):
    """Leaf index reached by each row of ``X``."""
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        node = 0
        while feat[node] >= 0:
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out
