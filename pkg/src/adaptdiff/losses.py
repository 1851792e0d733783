"""Training objectives and their gradients at the model-output level.

Two overall objectives exist:

  unconditional adaptation (one shared batch of noised inputs, the frozen
  source model as reference):
      total = simple + l1*vlb + l2*img + l3*hf + l4*hfmse

  conditional adaptation (a target-condition batch plus a source-condition
  prior batch, no index correspondence between them; both pairwise sides
  come from the trainable model):
      total = simple + l1*pr + l2*img + l3*hf + l4*hfmse

The *_grad variants return cotangents w.r.t. the trainable model's noise
predictions (and variance channel); mapping through the network is the
denoiser backward's job. Gradients never flow into the frozen source
model's outputs.
"""

from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .diffusion import posterior_mean, vlb_term, x0_pred_eps_coeff
from .numerics import check_same_shape
from .similarity import (
    hf_pairwise_similarity_loss,
    hf_pairwise_similarity_loss_grad,
    pairwise_similarity_loss,
    pairwise_similarity_loss_grad,
)
from .wavelet import high_frequency, high_frequency_adjoint

MODE_UNCONDITIONAL = "unconditional"
MODE_CONDITIONAL = "conditional"


@dataclass(frozen=True)
class LossWeights:
    """lambda1..lambda4 plus the objective mode.

    lambda1 weights the variational-bound term in unconditional mode and
    the prior-preservation term in conditional mode. Working ranges that
    hold up at full scale: lambda2, lambda3 in [0.1, 1.0] and lambda4 in
    [0.01, 0.08] for unconditional adaptation; lambda2, lambda3 in
    [1e2, 5e2] and lambda4 in [0.1, 1.0] for conditional adaptation."""

    lambda1: float = 0.0
    lambda2: float = 0.0
    lambda3: float = 0.0
    lambda4: float = 0.0
    mode: str = MODE_UNCONDITIONAL

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"LossWeights: {name} must be >= 0")
        if self.mode not in (MODE_UNCONDITIONAL, MODE_CONDITIONAL):
            raise ValueError(f"LossWeights: unknown mode {self.mode!r}")

    @classmethod
    def adaptation_defaults(cls):
        """Default unconditional adaptation weights (0, 0.5, 0.5, 0.05)."""
        return cls(0.0, 0.5, 0.5, 0.05, MODE_UNCONDITIONAL)

    @classmethod
    def conditional_defaults(cls):
        return cls(1.0, 100.0, 100.0, 0.5, MODE_CONDITIONAL)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class LossReport:
    """Itemized loss components; total is their weighted sum."""

    simple: float
    vlb: float
    img: float
    hf: float
    hfmse: float
    pr: float
    total: float

    def to_dict(self):
        return asdict(self)


def l_simple(eps_pred, eps):
    """Mean squared error between predicted and true noise."""
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    check_same_shape(eps_pred, eps, context="l_simple")
    return float(np.mean((eps_pred - eps) ** 2))


def _l_simple_grad(eps_pred, eps):
    diff = np.asarray(eps_pred, dtype=np.float64) - np.asarray(eps, dtype=np.float64)
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def l_hfmse(x0_pred, x0_train):
    """MSE between the summed Haar detail bands of prediction and target."""
    x0_pred = np.asarray(x0_pred, dtype=np.float64)
    x0_train = np.asarray(x0_train, dtype=np.float64)
    check_same_shape(x0_pred, x0_train, context="l_hfmse")
    diff = high_frequency(x0_pred) - high_frequency(x0_train)
    return float(np.mean(diff**2))


def _l_hfmse_grad(x0_pred, x0_train):
    diff = high_frequency(np.asarray(x0_pred, dtype=np.float64)) \
        - high_frequency(np.asarray(x0_train, dtype=np.float64))
    value = float(np.mean(diff**2))
    return value, high_frequency_adjoint(2.0 * diff / diff.size)


def prior_preservation_loss(eps_src_out, eps_ada_out):
    """MSE tying the adapted model's source-condition predictions to the
    frozen source model's, on the same noised prior samples."""
    eps_src_out = np.asarray(eps_src_out, dtype=np.float64)
    eps_ada_out = np.asarray(eps_ada_out, dtype=np.float64)
    check_same_shape(eps_src_out, eps_ada_out, context="prior_preservation_loss")
    return float(np.mean((eps_src_out - eps_ada_out) ** 2))


def _prior_preservation_grad(eps_src_out, eps_ada_out):
    diff = np.asarray(eps_ada_out, dtype=np.float64) \
        - np.asarray(eps_src_out, dtype=np.float64)
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def _x0_cotangent_to_eps(d_x0, t, s):
    """Chain a clean-image cotangent through predict_x0 onto eps_pred."""
    coeff = np.asarray(x0_pred_eps_coeff(t, s), dtype=np.float64)
    if coeff.ndim == 0:
        return coeff * d_x0
    return coeff.reshape((-1,) + (1,) * (d_x0.ndim - 1)) * d_x0


@dataclass
class UnconditionalBatch:
    """Everything one unconditional adaptation step produced.

    Both models denoised the SAME noised inputs x_t, so batch indices
    correspond pairwise. x0_src/x0_ada are the clean-image predictions of
    the frozen source and trainable adapted model; var_ada is the adapted
    model's variance channel (None unless variance learning is on)."""

    x0: np.ndarray
    t: np.ndarray
    eps: np.ndarray
    x_t: np.ndarray
    eps_src: np.ndarray
    x0_src: np.ndarray
    eps_ada: np.ndarray
    x0_ada: np.ndarray
    schedule: object
    var_ada: Optional[np.ndarray] = None


@dataclass
class ConditionalBatch:
    """One conditional adaptation step: a target-condition training batch
    and a source-condition prior batch (generated by the frozen source
    model). x0_ada_tar / x0_ada_pr are the adapted model's clean-image
    predictions under the target and source condition respectively."""

    x0_tar: np.ndarray
    t_tar: np.ndarray
    eps_tar: np.ndarray
    xt_tar: np.ndarray
    eps_ada_tar: np.ndarray
    x0_ada_tar: np.ndarray
    x_pr: np.ndarray
    t_pr: np.ndarray
    eps_pr: np.ndarray
    zt_pr: np.ndarray
    eps_src_pr: np.ndarray
    eps_ada_pr: np.ndarray
    x0_ada_pr: np.ndarray
    schedule: object


def _report(simple, vlb, img, hf, hfmse, pr, w):
    lambda1_term = vlb if w.mode == MODE_UNCONDITIONAL else pr
    total = (simple + w.lambda1 * lambda1_term + w.lambda2 * img
             + w.lambda3 * hf + w.lambda4 * hfmse)
    return LossReport(simple=simple, vlb=vlb, img=img, hf=hf, hfmse=hfmse, pr=pr,
                      total=float(total))


def _check_pairwise_n(n, w):
    if n < 2 and (w.lambda2 > 0 or w.lambda3 > 0):
        raise ValueError("pairwise losses need a batch of at least 2 items")


def _uncond(ctx, w, want_grad):
    if w.mode != MODE_UNCONDITIONAL:
        raise ValueError(f"total_unconditional_loss: weights are in {w.mode!r} mode")
    n = ctx.x0.shape[0]
    _check_pairwise_n(n, w)

    simple, d_eps = _l_simple_grad(ctx.eps_ada, ctx.eps)

    vlb = 0.0
    d_var = None
    if w.lambda1 > 0:
        if ctx.var_ada is None:
            raise ValueError("lambda1 > 0 needs the variance channel (variance learning)")
        mean = posterior_mean(ctx.x0_ada, ctx.x_t, ctx.t, ctx.schedule)
        if want_grad:
            vlb, d_var = vlb_term(ctx.x0, ctx.x_t, ctx.t, mean, ctx.var_ada,
                                  ctx.schedule, want_grad=True)
            d_var = w.lambda1 * d_var
        else:
            vlb = vlb_term(ctx.x0, ctx.x_t, ctx.t, mean, ctx.var_ada, ctx.schedule)

    img = hf = hfmse = 0.0
    d_x0 = np.zeros_like(ctx.x0_ada)
    if n >= 2:
        if want_grad and w.lambda2 > 0:
            img, d_img = pairwise_similarity_loss_grad(ctx.x0_src, ctx.x0_ada)
            d_x0 += w.lambda2 * d_img
        else:
            img = pairwise_similarity_loss(ctx.x0_src, ctx.x0_ada)
        if want_grad and w.lambda3 > 0:
            hf, d_hf = hf_pairwise_similarity_loss_grad(ctx.x0_src, ctx.x0_ada)
            d_x0 += w.lambda3 * d_hf
        else:
            hf = hf_pairwise_similarity_loss(ctx.x0_src, ctx.x0_ada)
    if want_grad and w.lambda4 > 0:
        hfmse, d_hfmse = _l_hfmse_grad(ctx.x0_ada, ctx.x0)
        d_x0 += w.lambda4 * d_hfmse
    else:
        hfmse = l_hfmse(ctx.x0_ada, ctx.x0)

    report = _report(simple, vlb, img, hf, hfmse, 0.0, w)
    if not want_grad:
        return report
    d_eps = d_eps + _x0_cotangent_to_eps(d_x0, ctx.t, ctx.schedule)
    return report, d_eps, d_var


def total_unconditional_loss(ctx, weights):
    """Itemized unconditional objective over an UnconditionalBatch."""
    return _uncond(ctx, weights, want_grad=False)


def total_unconditional_loss_grad(ctx, weights):
    """(report, d_eps_ada, d_var_ada): cotangents for the adapted model."""
    return _uncond(ctx, weights, want_grad=True)


def _cond(ctx, w, want_grad):
    if w.mode != MODE_CONDITIONAL:
        raise ValueError(f"total_conditional_loss: weights are in {w.mode!r} mode")
    n = ctx.x0_tar.shape[0]
    if ctx.x_pr.shape[0] != n:
        raise ValueError("conditional loss: target and prior batch sizes must match")
    _check_pairwise_n(n, w)

    simple, d_eps_tar = _l_simple_grad(ctx.eps_ada_tar, ctx.eps_tar)
    pr, d_pr = _prior_preservation_grad(ctx.eps_src_pr, ctx.eps_ada_pr)
    d_eps_pr = w.lambda1 * d_pr

    img = hf = hfmse = 0.0
    d_x0_tar = np.zeros_like(ctx.x0_ada_tar)
    d_x0_pr = np.zeros_like(ctx.x0_ada_pr)
    if n >= 2:
        if want_grad and w.lambda2 > 0:
            img, d_p, d_q = pairwise_similarity_loss_grad(
                ctx.x0_ada_pr, ctx.x0_ada_tar, wrt_source=True)
            d_x0_tar += w.lambda2 * d_p
            d_x0_pr += w.lambda2 * d_q
        else:
            img = pairwise_similarity_loss(ctx.x0_ada_pr, ctx.x0_ada_tar)
        if want_grad and w.lambda3 > 0:
            hf, d_p, d_q = hf_pairwise_similarity_loss_grad(
                ctx.x0_ada_pr, ctx.x0_ada_tar, wrt_source=True)
            d_x0_tar += w.lambda3 * d_p
            d_x0_pr += w.lambda3 * d_q
        else:
            hf = hf_pairwise_similarity_loss(ctx.x0_ada_pr, ctx.x0_ada_tar)
    if want_grad and w.lambda4 > 0:
        hfmse, d_hfmse = _l_hfmse_grad(ctx.x0_ada_tar, ctx.x0_tar)
        d_x0_tar += w.lambda4 * d_hfmse
    else:
        hfmse = l_hfmse(ctx.x0_ada_tar, ctx.x0_tar)

    report = _report(simple, 0.0, img, hf, hfmse, pr, w)
    if not want_grad:
        return report
    d_eps_tar = d_eps_tar + _x0_cotangent_to_eps(d_x0_tar, ctx.t_tar, ctx.schedule)
    d_eps_pr = d_eps_pr + _x0_cotangent_to_eps(d_x0_pr, ctx.t_pr, ctx.schedule)
    return report, d_eps_tar, d_eps_pr


def total_conditional_loss(ctx, weights):
    """Itemized conditional objective over a ConditionalBatch."""
    return _cond(ctx, weights, want_grad=False)


def total_conditional_loss_grad(ctx, weights):
    """(report, d_eps_ada_target, d_eps_ada_prior) for the adapted model."""
    return _cond(ctx, weights, want_grad=True)
