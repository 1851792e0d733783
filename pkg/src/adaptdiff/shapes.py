"""Procedural two-color shape images for self-contained experiments.

Each image is a flat background hue with one filled shape (square, disc,
or diamond) in a second hue, drawn from a 12-hue palette at varying
position and size. The textured variant re-renders the same kind of
layout blended with a fixed horizontal stripe pattern: the stripes are
the common high-frequency feature of the textured domain, the way a
style ties a few-shot target set together. The flat/textured pair acts
as a source domain and a few-shot target domain for adaptation runs.
"""

import numpy as np

from .numerics import SeededRng

N_HUES = 12
TEXTURE_MIX = 0.55  # weight of the fixed stripe pattern in textured renders


def _hue_rgb(index):
    """Hue index -> saturated RGB triple in [-1, 1]."""
    h = (index % N_HUES) / N_HUES * 6.0
    x = 1.0 - abs(h % 2.0 - 1.0)
    sector = int(h)
    rgb = [
        (1.0, x, 0.0), (x, 1.0, 0.0), (0.0, 1.0, x),
        (0.0, x, 1.0), (x, 0.0, 1.0), (1.0, 0.0, x),
    ][sector % 6]
    return np.array(rgb) * 2.0 - 1.0


def make_shape_dataset(n, seed, image_size=16, textured=False):
    """Render n shape images, deterministic given (n, seed, flags).

    Returns (n, 3, image_size, image_size) float64 in [-1, 1]."""
    rng = SeededRng(seed).child("shapes")
    s = image_size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    stripes = np.where(yy.astype(np.int64) % 2 == 0, 0.9, -0.9)[None, :, :]
    images = np.empty((n, 3, s, s))
    for i in range(n):
        bg_hue = int(rng.integers(0, N_HUES))
        fg_hue = (bg_hue + 1 + int(rng.integers(0, N_HUES - 1))) % N_HUES
        kind = int(rng.integers(0, 3))
        cx = s * (0.3 + 0.4 * rng.uniform())
        cy = s * (0.3 + 0.4 * rng.uniform())
        radius = s * (0.18 + 0.2 * rng.uniform())
        if kind == 0:
            mask = (np.abs(xx - cx) <= radius) & (np.abs(yy - cy) <= radius)
        elif kind == 1:
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2
        else:
            mask = np.abs(xx - cx) + np.abs(yy - cy) <= 1.2 * radius
        img = np.empty((3, s, s))
        img[:] = _hue_rgb(bg_hue)[:, None, None]
        img = np.where(mask[None], _hue_rgb(fg_hue)[:, None, None], img)
        if textured:
            img = np.clip((1.0 - TEXTURE_MIX) * img + TEXTURE_MIX * stripes, -1.0, 1.0)
        images[i] = img
    return images
