"""Numba-jitted 3x3 convolution kernels.

Parallelism is over the batch (and output channels for the weight
gradient) only: every prange iteration writes a disjoint output slice and
accumulates in a fixed sequential order, so results are reproducible
regardless of thread count. No fastmath: IEEE semantics keep the numba
and numpy paths within rounding of each other.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def conv3x3_forward(x, w, b, stride=1):
    n, cin, h, wd = x.shape
    cout = w.shape[0]
    ho = (h - 1) // stride + 1
    wo = (wd - 1) // stride + 1
    out = np.empty((n, cout, ho, wo))
    for nn in prange(n):
        for co in range(cout):
            for oh in range(ho):
                hi0 = oh * stride - 1
                for ow in range(wo):
                    wi0 = ow * stride - 1
                    acc = b[co]
                    for ci in range(cin):
                        for i in range(3):
                            hi = hi0 + i
                            if hi < 0 or hi >= h:
                                continue
                            for j in range(3):
                                wi = wi0 + j
                                if wi < 0 or wi >= wd:
                                    continue
                                acc += x[nn, ci, hi, wi] * w[co, ci, i, j]
                    out[nn, co, oh, ow] = acc
    return out


@njit(cache=True, parallel=True)
def conv3x3_backward_input(dout, w, x_shape, stride=1):
    n, cin, h, wd = x_shape
    cout = w.shape[0]
    ho = dout.shape[2]
    wo = dout.shape[3]
    dx = np.zeros((n, cin, h, wd))
    for nn in prange(n):
        for ci in range(cin):
            for hi in range(h):
                for wi in range(wd):
                    acc = 0.0
                    for i in range(3):
                        hh = hi + 1 - i
                        if hh < 0 or hh % stride != 0:
                            continue
                        oh = hh // stride
                        if oh >= ho:
                            continue
                        for j in range(3):
                            ww = wi + 1 - j
                            if ww < 0 or ww % stride != 0:
                                continue
                            ow = ww // stride
                            if ow >= wo:
                                continue
                            for co in range(cout):
                                acc += w[co, ci, i, j] * dout[nn, co, oh, ow]
                    dx[nn, ci, hi, wi] = acc
    return dx


@njit(cache=True, parallel=True)
def conv3x3_backward_params(dout, x, stride=1):
    n, cin, h, wd = x.shape
    cout = dout.shape[1]
    ho = dout.shape[2]
    wo = dout.shape[3]
    dw = np.zeros((cout, cin, 3, 3))
    db = np.zeros(cout)
    for co in prange(cout):
        acc_b = 0.0
        for nn in range(n):
            for oh in range(ho):
                hi0 = oh * stride - 1
                for ow in range(wo):
                    g = dout[nn, co, oh, ow]
                    acc_b += g
                    wi0 = ow * stride - 1
                    for ci in range(cin):
                        for i in range(3):
                            hi = hi0 + i
                            if hi < 0 or hi >= h:
                                continue
                            for j in range(3):
                                wi = wi0 + j
                                if wi < 0 or wi >= wd:
                                    continue
                                dw[co, ci, i, j] += g * x[nn, ci, hi, wi]
        db[co] = acc_b
    return dw, db
