"""Numba kernels for leaf-wise regression-tree growth and prediction.

Features are pre-coded as ranks into their sorted distinct values, so a
per-leaf histogram over codes is an exact split search: every boundary between
consecutive distinct values present in the leaf is a candidate threshold.
"""
import numba
import numpy as np

LEAF = -1
# Rounding guard: centered gains this small come from float noise, not signal.
MIN_GAIN = 1e-20


@numba.njit(cache=True)
def _best_split(codes, residual, rows, start, end, features, n_bins, bin_values,
                min_leaf, hist_sum, hist_cnt):
    """Return (gain, feature, threshold, left_max_code) for rows[start:end]."""
    n = end - start
    best_gain = MIN_GAIN
    best_f = -1
    best_thr = 0.0
    best_code = -1
    if n < 2 * min_leaf:
        return best_gain, best_f, best_thr, best_code
    total = 0.0
    for i in range(start, end):
        total += residual[rows[i]]
    for fi in range(features.shape[0]):
        f = features[fi]
        nb = n_bins[f]
        if nb < 2:
            continue
        for b in range(nb):
            hist_sum[b] = 0.0
            hist_cnt[b] = 0
        for i in range(start, end):
            r = rows[i]
            c = codes[r, f]
            hist_sum[c] += residual[r]
            hist_cnt[c] += 1
        left_sum = 0.0
        left_cnt = 0
        prev = -1
        for b in range(nb):
            if hist_cnt[b] == 0:
                continue
            if prev >= 0 and left_cnt >= min_leaf and n - left_cnt >= min_leaf:
                right_cnt = n - left_cnt
                right_sum = total - left_sum
                diff = left_sum / left_cnt - right_sum / right_cnt
                gain = (left_cnt * right_cnt / n) * diff * diff
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_thr = 0.5 * (bin_values[f, prev] + bin_values[f, b])
                    best_code = prev
            left_sum += hist_sum[b]
            left_cnt += hist_cnt[b]
            prev = b
    return best_gain, best_f, best_thr, best_code


@numba.njit(cache=True)
def grow_tree(codes, residual, rows, features, n_bins, bin_values, max_leaves, min_leaf):
    """Grow one tree leaf-wise on ``rows`` (a scratch buffer, permuted in place).

    Returns node arrays (feature, threshold, left, right, value, count); leaves
    carry ``feature == LEAF``.
    """
    cap = 2 * max_leaves
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap, dtype=np.float64)
    count = np.zeros(cap, dtype=np.int64)

    max_bins = bin_values.shape[1]
    hist_sum = np.zeros(max_bins, dtype=np.float64)
    hist_cnt = np.zeros(max_bins, dtype=np.int64)
    scratch = np.empty(rows.shape[0], dtype=rows.dtype)

    # per-node bookkeeping for open leaves
    seg_start = np.zeros(cap, dtype=np.int64)
    seg_end = np.zeros(cap, dtype=np.int64)
    cand_gain = np.zeros(cap, dtype=np.float64)
    cand_f = np.full(cap, -1, dtype=np.int64)
    cand_thr = np.zeros(cap, dtype=np.float64)
    cand_code = np.full(cap, -1, dtype=np.int64)
    is_open = np.zeros(cap, dtype=np.bool_)

    n_nodes = 1
    seg_start[0] = 0
    seg_end[0] = rows.shape[0]
    g, f, t, c = _best_split(codes, residual, rows, 0, rows.shape[0], features, n_bins,
                             bin_values, min_leaf, hist_sum, hist_cnt)
    cand_gain[0], cand_f[0], cand_thr[0], cand_code[0] = g, f, t, c
    is_open[0] = True
    n_leaves = 1

    while n_leaves < max_leaves:
        node = -1
        best = MIN_GAIN
        for j in range(n_nodes):
            if is_open[j] and cand_f[j] >= 0 and cand_gain[j] > best:
                best = cand_gain[j]
                node = j
        if node < 0:
            break
        f = cand_f[node]
        code = cand_code[node]
        s = seg_start[node]
        e = seg_end[node]
        # stable partition: codes <= code go left
        nl = 0
        nr = 0
        for i in range(s, e):
            r = rows[i]
            if codes[r, f] <= code:
                rows[s + nl] = r
                nl += 1
            else:
                scratch[nr] = r
                nr += 1
        for i in range(nr):
            rows[s + nl + i] = scratch[i]

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        feature[node] = f
        threshold[node] = cand_thr[node]
        left[node] = lc
        right[node] = rc
        is_open[node] = False
        seg_start[lc] = s
        seg_end[lc] = s + nl
        seg_start[rc] = s + nl
        seg_end[rc] = e
        for child in (lc, rc):
            is_open[child] = True
            g, ff, t, c = _best_split(codes, residual, rows, seg_start[child], seg_end[child],
                                      features, n_bins, bin_values, min_leaf, hist_sum, hist_cnt)
            cand_gain[child], cand_f[child], cand_thr[child], cand_code[child] = g, ff, t, c
        n_leaves += 1

    for j in range(n_nodes):
        if feature[j] == LEAF:
            acc = 0.0
            for i in range(seg_start[j], seg_end[j]):
                acc += residual[rows[i]]
            cnt = seg_end[j] - seg_start[j]
            count[j] = cnt
            value[j] = acc / cnt if cnt > 0 else 0.0
        else:
            count[j] = seg_end[j] - seg_start[j]
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), count[:n_nodes].copy())


@numba.njit(cache=True)
def predict_tree(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0], dtype=np.float64)
    for i in range(X.shape[0]):
        j = 0
        while feature[j] != LEAF:
            if X[i, feature[j]] <= threshold[j]:
                j = left[j]
            else:
                j = right[j]
        out[i] = value[j]
    return out


@numba.njit(cache=True)
def predict_forest(X, offsets, feature, threshold, left, right, value):
    """Sum of tree outputs, trees concatenated with child indices local to each tree."""
    n_trees = offsets.shape[0] - 1
    out = np.zeros(X.shape[0], dtype=np.float64)
    for i in range(X.shape[0]):
        acc = 0.0
        for t in range(n_trees):
            base = offsets[t]
            j = 0
            while feature[base + j] != LEAF:
                if X[i, feature[base + j]] <= threshold[base + j]:
                    j = left[base + j]
                else:
                    j = right[base + j]
            acc += value[base + j]
        out[i] = acc
    return out
