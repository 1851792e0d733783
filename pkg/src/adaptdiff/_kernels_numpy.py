"""Pure-numpy reference kernels for the 3x3 convolutions used by the denoiser.

All convolutions in this package are 3x3 with padding 1 and stride 1 or 2,
which keeps the kernel surface small. The numpy path goes through im2col +
BLAS matmul; the numba path (see _kernels_numba) uses explicit loops. Both
must agree to ~1e-12 relative, which tests/test_backends.py enforces.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_hw(h, w, stride):
    # padding 1, kernel 3: output is h for stride 1, h//2 for even h at stride 2
    return (h - 1) // stride + 1, (w - 1) // stride + 1


def _im2col(x, stride):
    """x (N,C,H,W) -> columns (N, Ho*Wo, C*9)."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * 9)
    return np.ascontiguousarray(cols), ho, wo


def conv3x3_forward(x, w, b, stride=1):
    """Correlate x (N,Cin,H,W) with w (Cout,Cin,3,3), padding 1."""
    n = x.shape[0]
    cout = w.shape[0]
    cols, ho, wo = _im2col(x, stride)
    out = cols @ w.reshape(cout, -1).T + b
    return out.transpose(0, 2, 1).reshape(n, cout, ho, wo)


def conv3x3_backward_input(dout, w, x_shape, stride=1):
    """Gradient w.r.t. the conv input; col2im scatter-add of W^T dout."""
    n, cin, h, wd = x_shape
    cout = w.shape[0]
    ho, wo = dout.shape[2], dout.shape[3]
    dcols = dout.reshape(n, cout, ho * wo).transpose(0, 2, 1) @ w.reshape(cout, -1)
    d6 = dcols.reshape(n, ho, wo, cin, 3, 3)
    dxp = np.zeros((n, cin, h + 2, wd + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                d6[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return dxp[:, :, 1:1 + h, 1:1 + wd]


def conv3x3_backward_params(dout, x, stride=1):
    """Gradients w.r.t. weights (Cout,Cin,3,3) and bias (Cout,)."""
    n, cout = dout.shape[0], dout.shape[1]
    cols, ho, wo = _im2col(x, stride)
    dflat = dout.reshape(n, cout, ho * wo)
    dw = np.einsum("nol,nlk->ok", dflat, cols, optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    return dw.reshape(cout, x.shape[1], 3, 3), db
