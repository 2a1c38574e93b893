"""Independent reference implementations used as test oracles.

These are deliberately naive (definition-level loops and sums) and stay
independent of the library's vectorized paths.
"""

import math

import numpy as np


def naive_dft(x: np.ndarray) -> np.ndarray:
    """O(n^2) DFT straight from the definition."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[0]
    k = np.arange(n)
    twiddle = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return twiddle @ x


def naive_conv2d(x, w, stride=1, pad=1):
    """Direct nested-loop cross-correlation, channels-last (n, h, w, c)."""
    n, h, wid, cin = x.shape
    cout, cin_w, kh, kw = w.shape
    assert cin == cin_w
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wid + 2 * pad - kw) // stride + 1
    out = np.zeros((n, oh, ow, cout), dtype=x.dtype)
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                for o in range(cout):
                    acc = 0.0
                    for di in range(kh):
                        for dj in range(kw):
                            for c in range(cin):
                                acc += xp[b, i * stride + di, j * stride + dj, c] \
                                    * w[o, c, di, dj]
                    out[b, i, j, o] = acc
    return out


def cosine(u, v):
    nu = math.sqrt(sum(float(a) * float(a) for a in u))
    nv = math.sqrt(sum(float(b) * float(b) for b in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    dot = sum(float(a) * float(b) for a, b in zip(u, v))
    return dot / (nu * nv)


def brute_force_class_score(query_desc, pool, k):
    """Exhaustive sort-based top-k cosine sum; returns (score, neighbor sets)."""
    score = 0.0
    neighbor_sets = []
    for q in query_desc:
        sims = [(cosine(q, p), -idx) for idx, p in enumerate(pool)]
        sims.sort(reverse=True)
        top = sims[:k]
        score += sum(s for s, _ in top)
        neighbor_sets.append(frozenset(-negidx for _, negidx in top))
    return score, neighbor_sets


def finite_difference(fn, param: np.ndarray, indices, eps=1e-5):
    """Central differences of scalar fn() with respect to param[indices]."""
    grads = {}
    flat = param.reshape(-1)
    for i in indices:
        orig = flat[i]
        flat[i] = orig + eps
        lp = fn()
        flat[i] = orig - eps
        lm = fn()
        flat[i] = orig
        grads[i] = (lp - lm) / (2.0 * eps)
    return grads


def fd_relative_errors(make_loss, params, n_per_param=8, eps=1e-5, seed=0):
    """Max relative error between analytic grads and central differences.

    ``make_loss`` rebuilds the scalar loss Tensor; params is a list of
    Tensors with populated .grad (call after backward).
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(n_per_param, flat.size), replace=False)
        fd = finite_difference(lambda: float(make_loss().data), p.data, picks, eps)
        for i, g_fd in fd.items():
            g_an = p.grad.reshape(-1)[i]
            rel = abs(g_fd - g_an) / max(abs(g_fd), abs(g_an), 1e-8)
            worst = max(worst, rel)
    return worst
