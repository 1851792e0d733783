"""Independent brute-force oracles for the tests.

Deliberately written with plain loops and their own formulas so they
share no code path with the package implementations they check.
"""

import math

import numpy as np


def oracle_cosine(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    num = sum(float(x) * float(y) for x, y in zip(a, b))
    na = math.sqrt(sum(float(x) ** 2 for x in a))
    nb = math.sqrt(sum(float(y) ** 2 for y in b))
    return max(-1.0, min(1.0, num / (na * nb + 1e-12)))


def oracle_softmax(values):
    exps = [math.exp(v) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


def oracle_distribution(batch, i):
    sims = [oracle_cosine(batch[i], batch[j])
            for j in range(len(batch)) if j != i]
    return oracle_softmax(sims)


def oracle_pairwise_loss(source_batch, adapted_batch):
    n = len(adapted_batch)
    total = 0.0
    for i in range(n):
        p = oracle_distribution(adapted_batch, i)
        q = oracle_distribution(source_batch, i)
        for pk, qk in zip(p, q):
            total += pk * math.log(pk / qk)
    return total


# explicit Haar outer-product kernels; row index = height, column = width
_L = np.array([1.0, 1.0]) / math.sqrt(2.0)
_H = np.array([-1.0, 1.0]) / math.sqrt(2.0)
HAAR_KERNELS = {
    "ll": np.outer(_L, _L),
    "lh": np.outer(_L, _H),
    "hl": np.outer(_H, _L),
    "hh": np.outer(_H, _H),
}


def oracle_haar_band(img_2d, band):
    """Stride-2 valid correlation of one channel with one 2x2 kernel."""
    k = HAAR_KERNELS[band]
    h, w = img_2d.shape
    out = np.zeros((h // 2, w // 2))
    for i in range(h // 2):
        for j in range(w // 2):
            block = img_2d[2 * i:2 * i + 2, 2 * j:2 * j + 2]
            out[i, j] = float(np.sum(block * k))
    return out
