"""Compiled kernels for honest tree growth and forest prediction.

Everything here is deterministic given its inputs: feature subsampling uses a
splitmix64 counter seeded per tree, and no kernel touches global state, so
trees grown on worker threads are bitwise identical to serial growth.
"""

from __future__ import annotations

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True, nogil=True, inline="always")
def _splitmix64(state):
    # state is a length-1 uint64 array used as a mutable cell.
    state[0] = state[0] + np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def grow_tree(xs, us, vs, min_node_size, mtry, seed):
    """Grow one tree on structure data, maximizing split heterogeneity.

    Node-level effects are the ratio sum(u*v)/sum(v*v); a split's score is
    nl*nr/(nl+nr)^2 * (tau_l - tau_r)^2 evaluated at midpoints between
    consecutive distinct values of each of ``mtry`` sampled features.

    Returns (feature, threshold, left, right, n_nodes); feature == -1 marks a
    leaf, child ids index into the same arrays.
    """
    ns, p = xs.shape
    cap = 2 * ns + 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, LEAF, dtype=np.int64)
    right = np.full(cap, LEAF, dtype=np.int64)

    idx = np.arange(ns)
    uv = us * vs
    vv = vs * vs

    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    feat_pool = np.empty(p, dtype=np.int64)

    # stack rows: (node_id, start, end) over spans of idx
    stack = np.empty((cap, 3), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = ns
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        n_node = end - start
        if n_node < 2 * min_node_size:
            continue

        for k in range(p):
            feat_pool[k] = k
        m = mtry if mtry < p else p

        best_score = 0.0
        best_feat = -1
        best_thresh = 0.0
        for k in range(m):
            r = _splitmix64(state)
            j = k + int(r % np.uint64(p - k))
            tmp = feat_pool[k]
            feat_pool[k] = feat_pool[j]
            feat_pool[j] = tmp
            f = feat_pool[k]

            vals = np.empty(n_node, dtype=np.float64)
            for i in range(n_node):
                vals[i] = xs[idx[start + i], f]
            order = np.argsort(vals)

            total_uv = 0.0
            total_vv = 0.0
            for i in range(n_node):
                row = idx[start + order[i]]
                total_uv += uv[row]
                total_vv += vv[row]

            cum_uv = 0.0
            cum_vv = 0.0
            for i in range(n_node - 1):
                row = idx[start + order[i]]
                cum_uv += uv[row]
                cum_vv += vv[row]
                lo = vals[order[i]]
                hi = vals[order[i + 1]]
                if lo == hi:
                    continue
                nl = i + 1
                nr = n_node - nl
                if nl < min_node_size or nr < min_node_size:
                    continue
                tau_l = cum_uv / cum_vv
                tau_r = (total_uv - cum_uv) / (total_vv - cum_vv)
                gap = tau_l - tau_r
                score = (nl * nr) / float(n_node * n_node) * gap * gap
                if score > best_score:
                    best_score = score
                    best_feat = f
                    t = 0.5 * (lo + hi)
                    if t >= hi:
                        t = lo
                    best_thresh = t

        if best_feat < 0:
            continue

        # in-place partition of the span: x <= threshold goes left
        lo_ptr = start
        hi_ptr = end - 1
        while lo_ptr <= hi_ptr:
            if xs[idx[lo_ptr], best_feat] <= best_thresh:
                lo_ptr += 1
            else:
                tmp = idx[lo_ptr]
                idx[lo_ptr] = idx[hi_ptr]
                idx[hi_ptr] = tmp
                hi_ptr -= 1
        mid = lo_ptr

        left_id = n_nodes
        right_id = n_nodes + 1
        n_nodes += 2
        feature[node] = best_feat
        threshold[node] = best_thresh
        left[node] = left_id
        right[node] = right_id
        stack[top, 0] = left_id
        stack[top, 1] = start
        stack[top, 2] = mid
        top += 1
        stack[top, 0] = right_id
        stack[top, 1] = mid
        stack[top, 2] = end
        top += 1

    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], n_nodes


@njit(cache=True, nogil=True)
def route_raw(feature, threshold, left, right, X):
    """Leaf id for each row of X, ignoring estimation occupancy."""
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True, nogil=True)
def subtree_counts(feature, left, right, leaf_counts):
    """Propagate leaf occupancy up the tree (children have larger ids)."""
    n_nodes = feature.shape[0]
    counts = leaf_counts.copy()
    for node in range(n_nodes - 1, -1, -1):
        if feature[node] >= 0:
            counts[node] = counts[left[node]] + counts[right[node]]
    return counts


@njit(cache=True, nogil=True)
def route_pruned(feature, threshold, left, right, est_count, X):
    """Leaf id per row, detouring around subtrees with no estimation units."""
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            l = left[node]
            r = right[node]
            if est_count[l] == 0:
                node = r
            elif est_count[r] == 0:
                node = l
            elif X[i, feature[node]] <= threshold[node]:
                node = l
            else:
                node = r
        out[i] = node
    return out


@njit(cache=True, nogil=True)
def accumulate_predictions(
    feature_all,
    threshold_all,
    left_all,
    right_all,
    est_count_all,
    leaf_uv_all,
    leaf_vv_all,
    leaf_n_all,
    offsets,
    X,
    skip,
    use_skip,
    num,
    den,
    used,
):
    """Add every tree's leaf averages into per-point accumulators.

    ``skip`` has one row per tree flagging points that tree must not score
    (out-of-bag prediction); pass ``use_skip=False`` to score all points.
    Trees are flattened: node arrays concatenated, ``offsets`` delimiting.
    """
    n_trees = offsets.shape[0] - 1
    n_points = X.shape[0]
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n_points):
            if use_skip and skip[t, i] != 0:
                continue
            node = 0
            while feature_all[base + node] >= 0:
                l = left_all[base + node]
                r = right_all[base + node]
                if est_count_all[base + l] == 0:
                    node = r
                elif est_count_all[base + r] == 0:
                    node = l
                elif X[i, feature_all[base + node]] <= threshold_all[base + node]:
                    node = l
                else:
                    node = r
            g = base + node
            cnt = leaf_n_all[g]
            num[i] += leaf_uv_all[g] / cnt
            den[i] += leaf_vv_all[g] / cnt
            used[i] += 1
