"""NumPy reference implementations of the hot kernels.

These define the numerical contract; ``_ckernels.pyx`` mirrors them loop for loop.
"""

from __future__ import annotations

import numpy as np


def bp_decode(llr, row_ptr, edge_col, max_iters, clip):
    """Flooding tanh-rule sum-product decoding.

    Returns ``(posterior_llr, iterations, syndrome_ok)``.
    """
    n = llr.shape[0]
    m = row_ptr.shape[0] - 1
    deg = np.diff(row_ptr)
    dmax = int(deg.max()) if m else 0
    # padded (m, dmax) layout; padding slots point at a dummy variable n
    slot = np.arange(dmax)[None, :] < deg[:, None]
    var = np.full((m, dmax), n, dtype=np.int64)
    var[slot] = edge_col
    ext = np.concatenate([llr, [0.0]])
    c2v = np.zeros((m, dmax))
    total = llr.copy()
    ok = False
    it = 0
    for it in range(1, max_iters + 1):
        v2c = np.clip(ext[var] - c2v, -clip, clip) if it > 1 else ext[var]
        t = np.tanh(0.5 * v2c)
        t[~slot] = 1.0
        # leave-one-out products via prefix / suffix cumulative products
        pre = np.ones_like(t)
        suf = np.ones_like(t)
        if dmax > 1:
            pre[:, 1:] = np.cumprod(t[:, :-1], axis=1)
            suf[:, :-1] = np.cumprod(t[:, :0:-1], axis=1)[:, ::-1]
        prod = pre * suf
        with np.errstate(divide="ignore"):
            c2v = np.clip(2.0 * np.arctanh(prod), -clip, clip)
        c2v[~slot] = 0.0
        total = llr + np.bincount(var.ravel(), weights=c2v.ravel(), minlength=n + 1)[:n]
        ext[:n] = total
        hard = (total < 0).astype(np.int64)
        hard_ext = np.concatenate([hard, [0]])
        if not np.any(hard_ext[var].sum(axis=1) & 1):
            ok = True
            break
    return total, it, ok


def forward_backward(local, kernel):
    """Forward/backward sum-product over a quantized phase grid.

    ``local[k]`` is the (normalized) likelihood message at symbol k and
    ``kernel[m, l]`` the transition probability from grid point m to l.
    Returns ``(forward, backward, posterior, n_degenerate)``; every row of every
    output is normalized to sum 1.
    """
    L, nq = local.shape
    uniform = np.full(nq, 1.0 / nq)
    fwd = np.empty((L, nq))
    bwd = np.empty((L, nq))
    bad = 0
    fwd[0] = uniform
    for k in range(1, L):
        v = (fwd[k - 1] * local[k - 1]) @ kernel
        s = v.sum()
        if s > 0 and np.isfinite(s):
            fwd[k] = v / s
        else:
            fwd[k] = uniform
            bad += 1
    bwd[L - 1] = uniform
    for k in range(L - 2, -1, -1):
        v = kernel @ (bwd[k + 1] * local[k + 1])
        s = v.sum()
        if s > 0 and np.isfinite(s):
            bwd[k] = v / s
        else:
            bwd[k] = uniform
            bad += 1
    post = local * fwd * bwd
    s = post.sum(axis=1, keepdims=True)
    dead = ~(s[:, 0] > 0)
    if np.any(dead):
        bad += int(dead.sum())
        post[dead] = 1.0
        s[dead] = nq
    return fwd, bwd, post / s, bad
