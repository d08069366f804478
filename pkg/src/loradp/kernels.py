"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public names at the bottom of the module are bound to one of the two
paths according to ``loradp._accel.BACKEND``. Random draws never happen
inside a kernel: callers sample with numpy generators and pass arrays in, so
both backends consume identical inputs and differ only in reduction order.
"""

import numpy as np

from ._accel import BACKEND, njit

# ---------------------------------------------------------------------------
# element i of q (A^T A - I) for a stack of A draws


def _np_row_noise_element(draws, q, index):
    # draws: (t, r, m); returns (t,)
    proj = draws @ q
    return np.einsum("tk,tk->t", draws[:, :, index], proj) - q[index]


@njit(cache=True)
def _nb_row_noise_element(draws, q, index):
    t, r, m = draws.shape
    out = np.empty(t)
    for s in range(t):
        acc = 0.0
        for k in range(r):
            proj = 0.0
            for l in range(m):
                proj += draws[s, k, l] * q[l]
            acc += draws[s, k, index] * proj
        out[s] = acc - q[index]
    return out


# ---------------------------------------------------------------------------
# diagonal (0,0) and off-diagonal (0,1) entries of A^T A - I


def _np_gram_pair(draws):
    # draws: (t, r, 2)
    diag = np.einsum("tk,tk->t", draws[:, :, 0], draws[:, :, 0]) - 1.0
    off = np.einsum("tk,tk->t", draws[:, :, 0], draws[:, :, 1])
    return diag, off


@njit(cache=True)
def _nb_gram_pair(draws):
    t, r, _ = draws.shape
    diag = np.empty(t)
    off = np.empty(t)
    for s in range(t):
        d = 0.0
        o = 0.0
        for k in range(r):
            a0 = draws[s, k, 0]
            d += a0 * a0
            o += a0 * draws[s, k, 1]
        diag[s] = d - 1.0
        off[s] = o
    return diag, off


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov statistics


def _np_ks_one_sample(sorted_x_cdf):
    n = sorted_x_cdf.shape[0]
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - sorted_x_cdf)
    d_minus = np.max(sorted_x_cdf - (i - 1) / n)
    return max(d_plus, d_minus, 0.0)


@njit(cache=True)
def _nb_ks_one_sample(sorted_x_cdf):
    n = sorted_x_cdf.shape[0]
    d = 0.0
    for i in range(n):
        f = sorted_x_cdf[i]
        hi = (i + 1) / n - f
        lo = f - i / n
        if hi > d:
            d = hi
        if lo > d:
            d = lo
    return d


def _np_ks_two_sample(x_sorted, y_sorted):
    grid = np.concatenate([x_sorted, y_sorted])
    fx = np.searchsorted(x_sorted, grid, side="right") / x_sorted.shape[0]
    fy = np.searchsorted(y_sorted, grid, side="right") / y_sorted.shape[0]
    return float(np.max(np.abs(fx - fy)))


@njit(cache=True)
def _nb_ks_two_sample(x_sorted, y_sorted):
    n1 = x_sorted.shape[0]
    n2 = y_sorted.shape[0]
    i = 0
    j = 0
    d = 0.0
    while i < n1 and j < n2:
        v = min(x_sorted[i], y_sorted[j])
        while i < n1 and x_sorted[i] <= v:
            i += 1
        while j < n2 and y_sorted[j] <= v:
            j += 1
        gap = abs(i / n1 - j / n2)
        if gap > d:
            d = gap
    return d


# ---------------------------------------------------------------------------
# AUC as P(member < non-member) + P(tie) / 2


def _np_auc_lower(members, nonmembers):
    from scipy.stats import rankdata

    n1 = members.shape[0]
    n2 = nonmembers.shape[0]
    ranks = rankdata(np.concatenate([members, nonmembers]))
    u = ranks[n1:].sum() - n2 * (n2 + 1) / 2.0
    return float(u / (n1 * n2))


@njit(cache=True)
def _nb_auc_lower(members, nonmembers):
    a = np.sort(members)
    b = np.sort(nonmembers)
    n1 = a.shape[0]
    n2 = b.shape[0]
    # for each non-member value, count members strictly below and equal
    below = 0
    upto = 0
    total = 0.0
    for j in range(n2):
        v = b[j]
        while below < n1 and a[below] < v:
            below += 1
        if upto < below:
            upto = below
        while upto < n1 and a[upto] <= v:
            upto += 1
        total += below + 0.5 * (upto - below)
    return total / (n1 * n2)


# ---------------------------------------------------------------------------
# per-sample clipping of flattened gradients


def _np_clip_rows(flat, c):
    norms = np.sqrt(np.einsum("bp,bp->b", flat, flat))
    scale = np.ones_like(norms)
    big = norms > c
    scale[big] = c / norms[big]
    return flat * scale[:, None]


@njit(cache=True)
def _nb_clip_rows(flat, c):
    b, p = flat.shape
    out = np.empty_like(flat)
    for i in range(b):
        ss = 0.0
        for j in range(p):
            ss += flat[i, j] * flat[i, j]
        norm = np.sqrt(ss)
        scale = c / norm if norm > c else 1.0
        for j in range(p):
            out[i, j] = flat[i, j] * scale
    return out


# ---------------------------------------------------------------------------
# per-row first and second moments of G (A^T A - I) over a stack of A draws


def _np_lora_row_moments(grad, draws):
    # grad: (n, m), draws: (t, r, m) -> sums (n,), sums of squares (n,)
    proj = np.matmul(grad, draws.transpose(0, 2, 1))  # (t, n, r)
    noise = np.matmul(proj, draws) - grad  # (t, n, m)
    return noise.sum(axis=(0, 2)), np.einsum("tnm,tnm->n", noise, noise)


@njit(cache=True)
def _nb_lora_row_moments(grad, draws):
    n, m = grad.shape
    t = draws.shape[0]
    sums = np.zeros(n)
    sumsq = np.zeros(n)
    for s in range(t):
        a = draws[s]
        # np.dot dispatches to BLAS inside numba
        noise = np.dot(np.dot(grad, np.ascontiguousarray(a.T)), a)
        for i in range(n):
            for l in range(m):
                v = noise[i, l] - grad[i, l]
                sums[i] += v
                sumsq[i] += v * v
    return sums, sumsq


# ---------------------------------------------------------------------------
# histogram against a fixed set of interior bin edges


def _np_bin_counts(samples, inner_edges):
    idx = np.searchsorted(inner_edges, samples, side="right")
    return np.bincount(idx, minlength=inner_edges.shape[0] + 1).astype(np.int64)


@njit(cache=True)
def _nb_bin_counts(samples, inner_edges):
    counts = np.zeros(inner_edges.shape[0] + 1, dtype=np.int64)
    idx = np.searchsorted(inner_edges, samples, side="right")
    for i in range(idx.shape[0]):
        counts[idx[i]] += 1
    return counts


IMPLEMENTATIONS = {
    "row_noise_element": (_np_row_noise_element, _nb_row_noise_element),
    "gram_pair": (_np_gram_pair, _nb_gram_pair),
    "ks_one_sample": (_np_ks_one_sample, _nb_ks_one_sample),
    "ks_two_sample": (_np_ks_two_sample, _nb_ks_two_sample),
    "auc_lower": (_np_auc_lower, _nb_auc_lower),
    "clip_rows": (_np_clip_rows, _nb_clip_rows),
    "lora_row_moments": (_np_lora_row_moments, _nb_lora_row_moments),
    "bin_counts": (_np_bin_counts, _nb_bin_counts),
}

_pick = 1 if BACKEND == "numba" else 0

row_noise_element = IMPLEMENTATIONS["row_noise_element"][_pick]
gram_pair = IMPLEMENTATIONS["gram_pair"][_pick]
ks_one_sample = IMPLEMENTATIONS["ks_one_sample"][_pick]
ks_two_sample = IMPLEMENTATIONS["ks_two_sample"][_pick]
auc_lower = IMPLEMENTATIONS["auc_lower"][_pick]
clip_rows = IMPLEMENTATIONS["clip_rows"][_pick]
lora_row_moments = IMPLEMENTATIONS["lora_row_moments"][_pick]
bin_counts = IMPLEMENTATIONS["bin_counts"][_pick]
