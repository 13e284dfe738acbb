"""Numba-backed inner loops for the two hot network shapes.

The proposal nets are tiny MLPs evaluated over (instance, particle, point,
cluster) grids; materializing their hidden layers dominates step time on
memory-bound hosts.  These kernels fuse the backward reductions into a
single pass over the stored activations.  The kernels run
single-threaded: the surrounding numpy/BLAS calls own the cores, and a
second spinning thread pool costs more in contention than it buys.
"""

import numpy as np
from numba import njit


@njit(fastmath=True, cache=True)
def pair_sum(a, b, out):
    """out[i, l, n, m, :] = a[i, n, :] + b[i, l, m, :]"""
    n_i, n_n, n_h = a.shape
    n_l, n_m = b.shape[1], b.shape[2]
    for i in range(n_i):
        for l in range(n_l):
            for n in range(n_n):
                for m in range(n_m):
                    for j in range(n_h):
                        out[i, l, n, m, j] = a[i, n, j] + b[i, l, m, j]


@njit(fastmath=True, cache=True)
def pair_bwd(h, g, w2, ga, gb, gw2_part, gb2_part):
    """Backward of dot(tanh(a + b), w2) + b2 in one pass over h = tanh(a+b).

    Accumulates ga over (l, m), gb over n, and per-instance partials for
    (w2, b2) that the caller reduces in index order.
    """
    n_i, n_l, n_n, n_m, n_h = h.shape
    for i in range(n_i):
        for l in range(n_l):
            for n in range(n_n):
                for m in range(n_m):
                    go = g[i, l, n, m]
                    gb2_part[i] += go
                    for j in range(n_h):
                        hv = h[i, l, n, m, j]
                        gw2_part[i, j] += go * hv
                        gpre = go * w2[j] * (1.0 - hv * hv)
                        ga[i, n, j] += gpre
                        gb[i, l, m, j] += gpre


@njit(fastmath=True, cache=True)
def mlp2_bwd(x, h, g, w1, w2, gx, gw1_part, gb1_part, gw2_part, gb2_part):
    """Backward of (tanh(x @ w1 + b1)) @ w2 + b2 over flattened rows.

    x (R, fin), h (R, H), g (R, F); partial parameter grads are indexed by
    a fixed row-block id derived from the row index, so the reduction the
    caller performs afterwards is order-independent of scheduling.
    """
    n_rows, fin = x.shape
    n_h = h.shape[1]
    n_f = g.shape[1]
    n_chunks = gw1_part.shape[0]
    chunk = (n_rows + n_chunks - 1) // n_chunks
    for c in range(n_chunks):
        lo = c * chunk
        hi = min(n_rows, lo + chunk)
        for r in range(lo, hi):
            for f in range(n_f):
                gb2_part[c, f] += g[r, f]
            for j in range(n_h):
                gh = 0.0
                for f in range(n_f):
                    gh += g[r, f] * w2[j, f]
                    gw2_part[c, j, f] += h[r, j] * g[r, f]
                gpre = gh * (1.0 - h[r, j] * h[r, j])
                gb1_part[c, j] += gpre
                for k in range(fin):
                    gw1_part[c, k, j] += x[r, k] * gpre
                    gx[r, k] += w1[k, j] * gpre


def zeros_partials(n_chunks, *shapes):
    return [np.zeros((n_chunks,) + s) for s in shapes]


LOG_2PI = float(np.log(2.0 * np.pi))


@njit(fastmath=True, cache=True)
def stat_sums_fwd(t, s, counts, sum1, sum2):
    """counts[.., m] = sum_n t; sum1[.., m, d] = sum_n t s; sum2: t s^2.

    t (R, N, M), s (R, N, D) with R = flattened lead dims."""
    n_r, n_n, n_m = t.shape
    n_d = s.shape[2]
    for r in range(n_r):
        for n in range(n_n):
            for m in range(n_m):
                tv = t[r, n, m]
                counts[r, m] += tv
                for d in range(n_d):
                    sv = s[r, n, d]
                    sum1[r, m, d] += tv * sv
                    sum2[r, m, d] += tv * sv * sv


@njit(fastmath=True, cache=True)
def stat_sums_bwd(t, s, gc, g1, g2, gt, gs):
    """Backward of stat_sums_fwd for both inputs."""
    n_r, n_n, n_m = t.shape
    n_d = s.shape[2]
    for r in range(n_r):
        for n in range(n_n):
            for m in range(n_m):
                acc = gc[r, m]
                tv = t[r, n, m]
                for d in range(n_d):
                    sv = s[r, n, d]
                    acc += g1[r, m, d] * sv + g2[r, m, d] * sv * sv
                    gs[r, n, d] += tv * (g1[r, m, d] + 2.0 * g2[r, m, d] * sv)
                gt[r, n, m] = acc




@njit(fastmath=True, cache=True)
def gmm_loglik(x, mu, tau, logtau, c, out):
    """Mixture Gaussian log-likelihood summed over points and coordinates.

    x (I,N,D), mu/tau/logtau (I,L,M,D), c (I,L,N) -> out (I,L)."""
    n_i, n_n, n_d = x.shape
    n_l = mu.shape[1]
    for i in range(n_i):
        for l in range(n_l):
            acc = 0.0
            for n in range(n_n):
                m = c[i, l, n]
                for d in range(n_d):
                    diff = x[i, n, d] - mu[i, l, m, d]
                    acc += 0.5 * (logtau[i, l, m, d] - LOG_2PI) \
                        - 0.5 * tau[i, l, m, d] * diff * diff
            out[i, l] = acc




class BufferPool:
    """Reuses large scratch arrays by shape.

    Fresh multi-megabyte allocations go through mmap and fault in pages on
    every call; renting from a small pool keeps the hot loop off that path.
    """

    def __init__(self):
        self._free: dict[tuple, list] = {}

    def rent(self, shape) -> np.ndarray:
        stack = self._free.get(tuple(shape))
        if stack:
            return stack.pop()
        return np.empty(shape)

    def give_back(self, arr: np.ndarray) -> None:
        self._free.setdefault(arr.shape, []).append(arr)


POOL = BufferPool()


@njit(fastmath=True, cache=True)
def mlp2_bwd_nogx(x, h, g, w2, gw1_part, gb1_part, gw2_part, gb2_part):
    """mlp2_bwd without the input gradient (constant-input nets)."""
    n_rows, fin = x.shape
    n_h = h.shape[1]
    n_f = g.shape[1]
    n_chunks = gw1_part.shape[0]
    chunk = (n_rows + n_chunks - 1) // n_chunks
    for c in range(n_chunks):
        lo = c * chunk
        hi = min(n_rows, lo + chunk)
        for r in range(lo, hi):
            for f in range(n_f):
                gb2_part[c, f] += g[r, f]
            for j in range(n_h):
                gh = 0.0
                for f in range(n_f):
                    gh += g[r, f] * w2[j, f]
                    gw2_part[c, j, f] += h[r, j] * g[r, f]
                gpre = gh * (1.0 - h[r, j] * h[r, j])
                gb1_part[c, j] += gpre
                for k in range(fin):
                    gw1_part[c, k, j] += x[r, k] * gpre


@njit(fastmath=True, cache=True)
def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """In-place Adam step over flattened parameter arrays."""
    for i in range(p.size):
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        p[i] -= lr * (m[i] / bc1) / (np.sqrt(v[i] / bc2) + eps)
        g[i] = 0.0
