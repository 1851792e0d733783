"""Diversity and distribution-fit metrics over pluggable plug-ins.

Two small interfaces keep the metrics independent of any pretrained
network:

  distance plug-in: .name, .distance(a, b) -> nonnegative float,
      symmetric, zero on identical inputs;
  embedder plug-in: .name, .dim, .embed(image) -> fixed-length vector,
      deterministic.

The built-ins are deterministic and dependency-free stand-ins for learned
perceptual metrics -- useful for relative comparisons at desk scale, never
claimed equivalent to them:

  haar-ms     multi-scale Haar feature distance: per level of a 3-level
              pyramid, the detail coefficients (plus the final
              approximation) are scale-normalized by the pooled per-level
              standard deviation of the two images, and the distance is
              the RMS of the normalized differences.
  pixel-mse   plain mean squared pixel distance.
  haar-rp64   fixed seeded Gaussian random projection of the per-image
              normalized Haar feature vector to 64 dimensions.
"""

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numerics import SeededRng, check_same_shape
from .wavelet import haar_decompose

_FEATURE_EPS = 1e-12
_PROJECTION_SEED = 32030561  # fixed: embeddings must agree across processes


def _haar_blocks(img, levels=3):
    """Per-level coefficient blocks [details_1, ..., details_L, approx_L]."""
    img = np.asarray(img, dtype=np.float64)
    blocks = []
    current = img
    for _ in range(levels):
        bands = haar_decompose(current)
        blocks.append(np.concatenate(
            [bands.lh.reshape(-1), bands.hl.reshape(-1), bands.hh.reshape(-1)]))
        current = bands.ll
    blocks.append(current.reshape(-1))
    return blocks


class PixelMSEDistance:
    name = "pixel-mse"

    def distance(self, a, b):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        check_same_shape(a, b, context="pixel-mse")
        return float(np.mean((a - b) ** 2))


class HaarFeatureDistance:
    """Multi-scale Haar feature distance (see module docstring)."""

    name = "haar-ms"

    def __init__(self, levels=3):
        self.levels = levels

    def distance(self, a, b):
        blocks_a = _haar_blocks(a, self.levels)
        blocks_b = _haar_blocks(b, self.levels)
        sq_sum = 0.0
        count = 0
        for ba, bb in zip(blocks_a, blocks_b):
            scale = np.sqrt(0.5 * (ba.var() + bb.var()) + _FEATURE_EPS)
            diff = (ba - bb) / scale
            sq_sum += float(np.dot(diff, diff))
            count += diff.size
        return float(np.sqrt(sq_sum / count))


class HaarProjectionEmbedder:
    """Random projection of normalized Haar features to a fixed dimension."""

    name = "haar-rp64"

    def __init__(self, dim=64):
        self.dim = dim
        self._proj = {}

    def _projection(self, feat_dim):
        if feat_dim not in self._proj:
            rng = SeededRng(_PROJECTION_SEED).child(f"dim{feat_dim}")
            self._proj[feat_dim] = rng.normal((self.dim, feat_dim)) / np.sqrt(feat_dim)
        return self._proj[feat_dim]

    def embed(self, image):
        blocks = _haar_blocks(image)
        feat = np.concatenate(
            [b / np.sqrt(b.var() + _FEATURE_EPS) for b in blocks])
        return self._projection(feat.size) @ feat


DISTANCES = {
    "haar-ms": HaarFeatureDistance,
    "pixel-mse": PixelMSEDistance,
}

EMBEDDERS = {
    "haar-rp64": HaarProjectionEmbedder,
}


def _as_image_list(images):
    if isinstance(images, np.ndarray):
        return [images[i] for i in range(images.shape[0])]
    return list(images)


def nearest_distance_score(generated, training, d, include_flips=False):
    """Average over generated images of the minimum distance to any
    training sample; horizontal flips of the training set are added as
    candidates when include_flips. Zero means pure replication."""
    generated = _as_image_list(generated)
    training = _as_image_list(training)
    if not generated or not training:
        raise ValueError("nearest_distance_score: both image sets must be nonempty")
    candidates = list(training)
    if include_flips:
        candidates.extend(img[..., ::-1] for img in training)
    minima = [min(d.distance(g, c) for c in candidates) for g in generated]
    return float(np.mean(minima))


@dataclass
class ClusterReport:
    """Nearest-training-sample clustering of a generated set.

    member_counts has one entry per training sample. Clusters with fewer
    than 2 members carry no pairwise distance and are excluded from the
    overall mean/std; if no cluster qualifies the overall mean is None."""

    member_counts: list
    cluster_means: list  # None where a cluster has < 2 members
    overall_mean: Optional[float]
    std: Optional[float]
    included_clusters: int

    def to_dict(self):
        return {
            "member_counts": self.member_counts,
            "cluster_means": self.cluster_means,
            "overall_mean": self.overall_mean,
            "std": self.std,
            "included_clusters": self.included_clusters,
        }


def intra_cluster_diversity(generated, training, d):
    """Mean pairwise distance within nearest-sample clusters.

    Each generated image joins the cluster of its closest training sample
    (ties resolved to the lowest training index); the report carries the
    per-cluster means and their mean/std over clusters with >= 2 members."""
    generated = _as_image_list(generated)
    training = _as_image_list(training)
    if not generated or not training:
        raise ValueError("intra_cluster_diversity: both image sets must be nonempty")
    members = [[] for _ in training]
    for gi, g in enumerate(generated):
        dists = [d.distance(g, tr) for tr in training]
        members[int(np.argmin(dists))].append(gi)

    cluster_means = []
    for idx_list in members:
        if len(idx_list) < 2:
            cluster_means.append(None)
            continue
        pair_sum = 0.0
        pair_count = 0
        for i in range(len(idx_list)):
            for j in range(i + 1, len(idx_list)):
                pair_sum += d.distance(generated[idx_list[i]], generated[idx_list[j]])
                pair_count += 1
        cluster_means.append(pair_sum / pair_count)

    included = [m for m in cluster_means if m is not None]
    overall = float(np.mean(included)) if included else None
    std = float(np.std(included)) if included else None
    return ClusterReport(
        member_counts=[len(m) for m in members],
        cluster_means=cluster_means,
        overall_mean=overall,
        std=std,
        included_clusters=len(included),
    )


def average_pairwise_diversity(samples, d):
    """Mean distance over all unordered pairs of the sample set."""
    samples = _as_image_list(samples)
    if len(samples) < 2:
        raise ValueError("average_pairwise_diversity: need at least 2 samples")
    total = 0.0
    count = 0
    for i in range(len(samples)):
        for j in range(i + 1, len(samples)):
            total += d.distance(samples[i], samples[j])
            count += 1
    return total / count


def frechet_from_moments(mu1, cov1, mu2, cov2):
    """Fréchet distance between two Gaussians given their exact moments.

    ||mu1-mu2||^2 + Tr(C1 + C2 - 2 (C1 C2)^(1/2)), with the square-root
    trace computed from the symmetric product sqrt(C1) C2 sqrt(C1) via
    eigendecomposition; eigenvalues are clamped at zero."""
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=np.float64))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=np.float64))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=np.float64))
    check_same_shape(mu1, mu2, context="frechet means")
    check_same_shape(cov1, cov2, context="frechet covariances")

    vals1, vecs1 = np.linalg.eigh((cov1 + cov1.T) / 2.0)
    root1 = (vecs1 * np.sqrt(np.maximum(vals1, 0.0))) @ vecs1.T
    inner = root1 @ cov2 @ root1
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_sqrt = np.sum(np.sqrt(np.maximum(vals, 0.0)))

    diff = mu1 - mu2
    return float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * tr_sqrt)


def frechet_distance(set_a, set_b, e):
    """Fréchet distance between Gaussian fits of two embedded image sets."""
    set_a = _as_image_list(set_a)
    set_b = _as_image_list(set_b)
    if len(set_a) < 2 or len(set_b) < 2:
        raise ValueError("frechet_distance: each set needs at least 2 images")
    emb_a = np.stack([np.asarray(e.embed(img), dtype=np.float64) for img in set_a])
    emb_b = np.stack([np.asarray(e.embed(img), dtype=np.float64) for img in set_b])
    if not (np.all(np.isfinite(emb_a)) and np.all(np.isfinite(emb_b))):
        raise FloatingPointError("frechet_distance: non-finite embeddings")
    dim = emb_a.shape[1]
    if len(set_a) < dim or len(set_b) < dim:
        warnings.warn(
            f"frechet_distance: sample count ({len(set_a)}, {len(set_b)}) below the "
            f"embedding dimension {dim}; covariance estimates are rank-deficient",
            stacklevel=2,
        )
    mu_a, mu_b = emb_a.mean(axis=0), emb_b.mean(axis=0)
    cov_a = np.cov(emb_a, rowvar=False)
    cov_b = np.cov(emb_b, rowvar=False)
    return frechet_from_moments(mu_a, cov_a, mu_b, cov_b)
