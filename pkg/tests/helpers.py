"""Reference implementations used as oracles by several test modules."""
import functools
import itertools
import math

import numpy as np


def loop_conv2d(x, w, b, stride, pad):
    """Direct nested-loop convolution, float64."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for i in range(n):
        for f in range(o):
            for r in range(oh):
                for s in range(ow):
                    acc = 0.0
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[i, ch, r * stride + u, s * stride + v] * w[f, ch, u, v]
                    out[i, f, r, s] = acc + (0.0 if b is None else b[f])
    return out


def central_difference(f, x, h=1e-4):
    """Numerical gradient of scalar f at array x (modified in place and restored)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def max_rel_err(analytic, numeric, floor=1e-3):
    """Largest entrywise |a - n| / max(|a|, |n|, floor).

    Entries smaller than ``floor`` in magnitude are compared on that
    absolute scale so that near-zero gradients do not blow up the ratio.
    """
    a, n = np.asarray(analytic, np.float64), np.asarray(numeric, np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max())


def argmin_level(x, levels):
    """Exhaustive nearest level with ties toward zero; scalar, pure python."""
    lo, hi = float(levels[0]), float(levels[-1])
    xc = min(max(x, lo), hi)
    best = None
    for lv in levels:
        d = abs(float(lv) - xc)
        key = (d, abs(float(lv)))
        if best is None or key < best[0]:
            best = (key, float(lv))
    return best[1]


def brute_distance_sums(filters):
    """O(n^2 d) pairwise Euclidean distance sums with explicit loops."""
    flat = [np.asarray(f, np.float64).ravel() for f in filters]
    sums = []
    for a in flat:
        total = 0.0
        for b in flat:
            total += math.sqrt(sum((p - q) ** 2 for p, q in zip(a, b)))
        sums.append(total)
    return sums


def brute_prune_set(filters, rate):
    """Indices of the floor(rate*O) smallest distance sums, lowest index on ties.

    Sums within 1e-9 of the largest sum, relatively, are ties.
    """
    sums = brute_distance_sums(filters)
    count = int(math.floor(rate * len(filters) + 1e-9))
    tol = 1e-9 * max(abs(s) for s in sums)

    def cmp(i, j):
        if abs(sums[i] - sums[j]) <= tol:
            return i - j
        return -1 if sums[i] < sums[j] else 1

    ranked = sorted(range(len(filters)), key=functools.cmp_to_key(cmp))
    return set(ranked[:count])


def apot_raw_sums(b, k):
    """Unsigned raw level sums enumerated straight from the term sets."""
    n = b // k
    term_sets = [[0.0] + [2.0 ** -(i + j * n) for j in range(2 ** k - 1)] for i in range(n)]
    return sorted({sum(c) for c in itertools.product(*term_sets)})
