"""Cosine-similarity distributions and the pairwise relative-distance losses.

For a batch of N items, each item i gets an (N-1)-way probability
distribution: softmax (temperature 1) over its cosine similarities to
every other item, in ascending-j order. The loss between an adapted batch
and a reference batch sums, over anchors i, the KL divergence

    KL(p_i_adapted || p_i_reference)

in exactly that direction: the adapted distribution is the left argument.
Zero vectors get similarity 0 by the epsilon in the denominator (the
summed detail bands of flat images are legitimately all-zero), so flat
batches produce uniform distributions and zero loss rather than NaNs.
"""

import numpy as np

from .numerics import check_same_shape
from .wavelet import high_frequency, high_frequency_adjoint

COSINE_EPS = 1e-12


def cosine_sim(a, b):
    """Cosine similarity of two same-shape arrays viewed as flat vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b, context="cosine_sim")
    av = a.reshape(-1)
    bv = b.reshape(-1)
    denom = np.linalg.norm(av) * np.linalg.norm(bv) + COSINE_EPS
    return float(np.clip(np.dot(av, bv) / denom, -1.0, 1.0))


def _as_matrix(batch):
    if isinstance(batch, np.ndarray):
        arr = np.asarray(batch, dtype=np.float64)
    else:
        arr = np.stack([np.asarray(x, dtype=np.float64) for x in batch])
    if arr.ndim < 2:
        raise ValueError("similarity: batch must be a sequence of arrays")
    return arr.reshape(arr.shape[0], -1), arr.shape


def _sim_matrix(mat):
    norms = np.linalg.norm(mat, axis=1)
    gram = mat @ mat.T
    denom = np.outer(norms, norms) + COSINE_EPS
    sims = np.clip(gram / denom, -1.0, 1.0)
    return sims, norms, gram, denom


def _offdiag_log_softmax(sims):
    """Row-wise log-softmax excluding the diagonal; diagonal slots get -inf
    (probability exactly 0)."""
    z = sims.copy()
    np.fill_diagonal(z, -np.inf)
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    logp = (z - zmax) - np.log(ez.sum(axis=1, keepdims=True))
    return logp


def sim_distribution(batch, i):
    """The (N-1)-entry similarity distribution for anchor i within a batch."""
    mat, _ = _as_matrix(batch)
    n = mat.shape[0]
    if n < 2:
        raise ValueError("sim_distribution: need at least 2 items")
    if not (0 <= i < n):
        raise ValueError(f"sim_distribution: anchor {i} out of range [0, {n})")
    sims, _, _, _ = _sim_matrix(mat)
    logp = _offdiag_log_softmax(sims)
    row = np.exp(logp[i])
    return np.delete(row, i)


def _offdiag_diff(logp, logq):
    """logp - logq with the -inf diagonals zeroed out instead of NaN."""
    diff = np.zeros_like(logp)
    off = ~np.eye(logp.shape[0], dtype=bool)
    diff[off] = logp[off] - logq[off]
    return diff


def _sim_grad_to_batch(m_coef, mat, norms, gram, denom):
    """Map d loss / d sims (zero diagonal) to d loss / d batch rows."""
    w1 = m_coef / denom
    s_over = gram / (denom * denom)
    w2 = m_coef * s_over * norms[None, :]
    w2p = m_coef * s_over * norms[:, None]
    scale = (w2.sum(axis=1) + w2p.sum(axis=0)) / (norms + COSINE_EPS)
    return (w1 + w1.T) @ mat - scale[:, None] * mat


def _pairwise_core(source_batch, adapted_batch, want_adapted_grad, want_source_grad):
    a_mat, a_shape = _as_matrix(adapted_batch)
    s_mat, s_shape = _as_matrix(source_batch)
    if a_mat.shape[0] != s_mat.shape[0]:
        raise ValueError(
            f"pairwise loss: batch sizes differ ({s_mat.shape[0]} vs {a_mat.shape[0]})"
        )
    n = a_mat.shape[0]
    if n < 2:
        raise ValueError("pairwise loss: need at least 2 items per batch")

    a_sims, a_norms, a_gram, a_denom = _sim_matrix(a_mat)
    s_sims, s_norms, s_gram, s_denom = _sim_matrix(s_mat)
    logp = _offdiag_log_softmax(a_sims)  # adapted
    logq = _offdiag_log_softmax(s_sims)  # reference
    p = np.exp(logp)
    diff = _offdiag_diff(logp, logq)
    loss = float(np.sum(p * diff))

    d_adapted = d_source = None
    if want_adapted_grad:
        kl_rows = np.sum(p * diff, axis=1, keepdims=True)
        m = p * (diff - kl_rows)  # d loss / d adapted sims, zero diagonal
        d_adapted = _sim_grad_to_batch(m, a_mat, a_norms, a_gram, a_denom).reshape(a_shape)
    if want_source_grad:
        mq = np.exp(logq) - np.exp(logp)  # d loss / d reference sims
        np.fill_diagonal(mq, 0.0)
        d_source = _sim_grad_to_batch(mq, s_mat, s_norms, s_gram, s_denom).reshape(s_shape)
    return loss, d_adapted, d_source


def pairwise_similarity_loss(source_batch, adapted_batch):
    """sum_i KL(p_i_adapted || p_i_source) over all anchors."""
    loss, _, _ = _pairwise_core(source_batch, adapted_batch, False, False)
    return loss


def pairwise_similarity_loss_grad(source_batch, adapted_batch, wrt_source=False):
    """Loss plus gradient w.r.t. the adapted batch (and, when wrt_source,
    also w.r.t. the source batch, for the mode where both sides are
    produced by the trainable model)."""
    loss, d_a, d_s = _pairwise_core(source_batch, adapted_batch, True, wrt_source)
    if wrt_source:
        return loss, d_a, d_s
    return loss, d_a


def hf_pairwise_similarity_loss(source_batch, adapted_batch):
    """Pairwise similarity loss on the summed Haar detail bands."""
    loss, _, _ = _pairwise_core(
        high_frequency(np.asarray(source_batch, dtype=np.float64)),
        high_frequency(np.asarray(adapted_batch, dtype=np.float64)),
        False, False,
    )
    return loss


def hf_pairwise_similarity_loss_grad(source_batch, adapted_batch, wrt_source=False):
    """hf loss with gradients mapped back to image space via the adjoint
    of the detail-band extraction."""
    src = np.asarray(source_batch, dtype=np.float64)
    ada = np.asarray(adapted_batch, dtype=np.float64)
    loss, d_a, d_s = _pairwise_core(
        high_frequency(src), high_frequency(ada), True, wrt_source
    )
    d_a_img = high_frequency_adjoint(d_a)
    if wrt_source:
        return loss, d_a_img, high_frequency_adjoint(d_s)
    return loss, d_a_img
