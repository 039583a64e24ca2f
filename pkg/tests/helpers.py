"""Shared reference implementations and checking utilities for the tests.

Everything here is written as plainly as possible (explicit loops, no
vectorisation tricks) so that it can serve as an independent oracle for
the optimised code under test.
"""

import numpy as np


def conv2d_loop(x, weights, bias):
    """Direct quadruple-loop 3x3 convolution, stride 1, zero padding 1."""
    co, ci, kh, kw = weights.shape
    c, h, w = x.shape
    assert (kh, kw) == (3, 3) and c == ci
    xpad = np.zeros((c, h + 2, w + 2), dtype=np.float64)
    xpad[:, 1:-1, 1:-1] = x
    out = np.zeros((co, h, w), dtype=np.float64)
    for o in range(co):
        for i in range(h):
            for j in range(w):
                acc = float(bias[o])
                for cc in range(ci):
                    for di in range(3):
                        for dj in range(3):
                            acc += float(weights[o, cc, di, dj]) * xpad[cc, i + di, j + dj]
                out[o, i, j] = acc
    return out


def pool_loop(x, kind):
    """Direct-loop 2x2 stride-2 pooling; max ties go to the first element."""
    c, h, w = x.shape
    ho, wo = h // 2, w // 2
    out = np.zeros((c, ho, wo), dtype=np.float64)
    for cc in range(c):
        for i in range(ho):
            for j in range(wo):
                vals = [x[cc, 2 * i + a, 2 * j + b] for a in range(2) for b in range(2)]
                out[cc, i, j] = sum(map(float, vals)) / 4.0 if kind == "average" else max(vals)
    return out


def gram_loop(feats):
    """Reference channel cross-correlation matrix: G[a, b] = sum_p F[a, p] F[b, p] / M."""
    n = feats.shape[0]
    fv = feats.reshape(n, -1).astype(np.float64)
    m = fv.shape[1]
    g = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            g[a, b] = float(np.dot(fv[a], fv[b])) / m
    return g


def guided_gram_loop(feats, channel):
    """Reference guided statistic: rows weighted by the guidance channel, no 1/M."""
    n = feats.shape[0]
    fv = feats.reshape(n, -1).astype(np.float64)
    t = channel.reshape(-1).astype(np.float64)
    g = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            g[a, b] = float(np.sum(t * fv[a] * t * fv[b]))
    return g


def central_diff(f, x, eps=1e-5):
    """Full central finite-difference gradient of scalar f at x (small x only)."""
    x = x.astype(np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def central_diff_at(f, x, coords, eps=1e-5):
    """Central differences of scalar f at selected flat coordinates of x."""
    x = x.astype(np.float64).copy()
    flat = x.reshape(-1)
    out = np.zeros(len(coords))
    for k, i in enumerate(coords):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        out[k] = (fp - fm) / (2 * eps)
    return out


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a.reshape(-1)), np.linalg.norm(b.reshape(-1)), 1e-12)
    return float(np.linalg.norm((a - b).reshape(-1)) / denom)


def make_image(seed, c=3, h=8, w=8, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, size=(c, h, w)).astype(dtype)
