"""Single-level orthonormal Haar decomposition and the summed detail bands.

Filters: low pass L = (1/sqrt(2))[1, 1], high pass H = (1/sqrt(2))[-1, 1].
Band naming convention (pinned here and by the tests): the first letter is
the filter applied along HEIGHT (rows), the second along WIDTH (columns).
So HL is high-pass vertically / low-pass horizontally and responds to
horizontal edges. Each output band has half the spatial resolution. On a
2x2 block [[a, b], [c, d]]:

    ll = ( a + b + c + d) / 2        lh = (-a + b - c + d) / 2
    hl = (-a - b + c + d) / 2        hh = ( a - b - c + d) / 2

The transform is orthonormal: energy is conserved exactly and
``haar_reconstruct`` inverts ``haar_decompose`` to rounding error. Odd
spatial sizes are an error; nothing is padded.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import check_same_shape


@dataclass
class FrequencyBands:
    """The four Haar subbands of an image, each (..., H/2, W/2)."""

    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray


def _check_even(img):
    if img.ndim < 2:
        raise ValueError("haar: need at least 2 spatial dimensions")
    h, w = img.shape[-2], img.shape[-1]
    if h % 2 != 0 or w % 2 != 0:
        raise ValueError(f"haar: spatial dims must be even, got {h}x{w}")


def haar_decompose(img):
    """Split (..., H, W) into FrequencyBands via non-overlapping 2x2 blocks."""
    img = np.asarray(img, dtype=np.float64)
    _check_even(img)
    h, w = img.shape[-2], img.shape[-1]
    blocks = img.reshape(img.shape[:-2] + (h // 2, 2, w // 2, 2))
    a = blocks[..., 0, :, 0]
    b = blocks[..., 0, :, 1]
    c = blocks[..., 1, :, 0]
    d = blocks[..., 1, :, 1]
    return FrequencyBands(
        ll=(a + b + c + d) * 0.5,
        lh=(-a + b - c + d) * 0.5,
        hl=(-a - b + c + d) * 0.5,
        hh=(a - b - c + d) * 0.5,
    )


def haar_reconstruct(bands):
    """Exact inverse of haar_decompose."""
    ll, lh, hl, hh = bands.ll, bands.lh, bands.hl, bands.hh
    check_same_shape(ll, lh, hl, hh, context="haar_reconstruct")
    hh2, ww2 = ll.shape[-2], ll.shape[-1]
    out = np.empty(ll.shape[:-2] + (hh2, 2, ww2, 2), dtype=np.float64)
    out[..., 0, :, 0] = (ll - lh - hl + hh) * 0.5
    out[..., 0, :, 1] = (ll + lh - hl - hh) * 0.5
    out[..., 1, :, 0] = (ll - lh + hl - hh) * 0.5
    out[..., 1, :, 1] = (ll + lh + hl + hh) * 0.5
    return out.reshape(ll.shape[:-2] + (2 * hh2, 2 * ww2))


def high_frequency(img):
    """Summed detail bands lh + hl + hh, shape (..., H/2, W/2).

    A linear map; exactly zero on constant images. This is the quantity
    the high-frequency losses operate on (raw, unnormalized)."""
    bands = haar_decompose(img)
    return bands.lh + bands.hl + bands.hh


def high_frequency_adjoint(grad):
    """Adjoint of high_frequency: maps a (..., H/2, W/2) cotangent back to
    image space. Satisfies <hf(x), g> == <x, hf_adjoint(g)>."""
    zero = np.zeros_like(grad)
    return haar_reconstruct(FrequencyBands(ll=zero, lh=grad, hl=grad, hh=grad))
