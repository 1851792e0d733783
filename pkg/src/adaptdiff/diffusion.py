"""Noise schedules, forward noising, clean-image prediction, and sampling.

Timesteps are 0-based: t ranges over [0, T) and t=0 is the least-noisy
step (the literature's t=1). The linear schedule interpolates beta
inclusively from beta_start to beta_end.

Conventions pinned here:
  x_t     = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
  x0_pred = x_t / sqrt(alpha_bar_t) - sqrt(1 - alpha_bar_t) / sqrt(alpha_bar_t) * eps_pred
and sampling follows the full T-step ancestral chain with the Gaussian
posterior mean; no fast samplers. Per-step x0_pred clamping to [-1, 1] is
standard practice and on by default (clamp_x0 flag).
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .numerics import check_same_shape

_BIN_HALF_WIDTH = 1.0 / 255.0  # half of one 8-bit pixel bin in [-1, 1] units


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step beta/alpha/alpha_bar tables for T diffusion steps."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_start: float
    beta_end: float


def make_linear_schedule(T, beta_start=1e-4, beta_end=0.02):
    """Linear beta schedule; beta_start and beta_end are both included."""
    if T < 1:
        raise ValueError(f"make_linear_schedule: T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"make_linear_schedule: need 0 < beta_start <= beta_end < 1, "
            f"got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(
        T=int(T), beta=beta, alpha=alpha, alpha_bar=alpha_bar,
        beta_start=float(beta_start), beta_end=float(beta_end),
    )


def _check_t(s, t):
    t = np.asarray(t, dtype=np.int64)
    if np.any(t < 0) or np.any(t >= s.T):
        raise ValueError(f"timestep out of range [0, {s.T}): {t}")
    return t


def _per_item(vals, ndim):
    # reshape a (N,) coefficient vector for broadcasting against (N,C,H,W)
    vals = np.asarray(vals, dtype=np.float64)
    if vals.ndim == 0:
        return vals
    return vals.reshape(vals.shape + (1,) * (ndim - 1))


def forward_noise(x0, t, eps, s):
    """q(x_t | x0): mix the clean image with noise at step t.

    t may be a scalar or a per-item vector of length x0.shape[0]."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    check_same_shape(x0, eps, context="forward_noise")
    t = _check_t(s, t)
    ab = s.alpha_bar[t]
    return _per_item(np.sqrt(ab), x0.ndim) * x0 + _per_item(np.sqrt(1.0 - ab), x0.ndim) * eps


def predict_x0(x_t, eps_pred, t, s):
    """Algebraic clean-image estimate from a noised image and predicted noise."""
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    check_same_shape(x_t, eps_pred, context="predict_x0")
    t = _check_t(s, t)
    ab = s.alpha_bar[t]
    if np.any(ab <= 0.0):
        raise ValueError("predict_x0: alpha_bar must be positive")
    sqrt_ab = np.sqrt(ab)
    coeff = np.sqrt(1.0 - ab) / sqrt_ab
    return x_t / _per_item(sqrt_ab, x_t.ndim) - _per_item(coeff, x_t.ndim) * eps_pred


def x0_pred_eps_coeff(t, s):
    """d x0_pred / d eps_pred = -sqrt(1-alpha_bar_t)/sqrt(alpha_bar_t).

    Used by the loss backward passes to map clean-image cotangents onto
    noise-prediction cotangents."""
    t = _check_t(s, t)
    ab = s.alpha_bar[t]
    return -np.sqrt(1.0 - ab) / np.sqrt(ab)


def posterior_coefs(t, s):
    """Coefficients of q(x_{t-1} | x_t, x0): (coef_x0, coef_xt, beta_tilde).

    beta_tilde is the posterior variance; it is exactly 0 at t=0."""
    t = _check_t(s, t)
    ab_t = s.alpha_bar[t]
    ab_prev = np.where(t > 0, s.alpha_bar[np.maximum(t - 1, 0)], 1.0)
    beta_t = s.beta[t]
    coef_x0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    coef_xt = np.sqrt(s.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab_t)
    beta_tilde = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t
    return coef_x0, coef_xt, beta_tilde


def posterior_mean(x0, x_t, t, s):
    """Mean of q(x_{t-1} | x_t, x0)."""
    check_same_shape(np.asarray(x0), np.asarray(x_t), context="posterior_mean")
    c0, ct, _ = posterior_coefs(t, s)
    return _per_item(c0, x0.ndim) * x0 + _per_item(ct, x_t.ndim) * x_t


def beta_tilde_clipped(t, s):
    """Posterior variance with the t=0 value replaced by its t=1 neighbour
    (or beta_0 for T=1), so its log is finite everywhere. Used as the lower
    end of the learned-variance interpolation and for the t=0 likelihood."""
    t = _check_t(s, t)
    if s.T == 1:
        return np.full(t.shape, s.beta[0]) if t.ndim else np.float64(s.beta[0])
    _, _, bt = posterior_coefs(np.maximum(t, 1), s)
    return bt


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def model_log_variance(var_raw, t, s):
    """Log-variance from the learned interpolation channel.

    The raw channel is squashed to frac in (0, 1) with a sigmoid and
    interpolates in log space between beta_t (upper) and the clipped
    posterior variance (lower). Returns (log_var, frac)."""
    t = _check_t(s, t)
    frac = _sigmoid(np.asarray(var_raw, dtype=np.float64))
    log_hi = _per_item(np.log(s.beta[t]), frac.ndim)
    log_lo = _per_item(np.log(beta_tilde_clipped(t, s)), frac.ndim)
    return frac * log_hi + (1.0 - frac) * log_lo, frac


def _norm_cdf(z):
    return 0.5 * (1.0 + erf(z / np.sqrt(2.0)))


def _norm_pdf(z):
    return np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)


def vlb_term(x0, x_t, t, mean, var_raw, s, want_grad=False):
    """Per-step variational-bound term under variance-only learning.

    For items with t > 0 this is the KL between the true Gaussian
    posterior q(x_{t-1} | x_t, x0) and the model's Gaussian with the given
    mean and learned variance; at t = 0 it is the negative discretized
    log-likelihood of x0 over 8-bit pixel bins. The mean is treated as a
    constant: only the variance channel receives gradient, following the
    variance-learning convention of improved DDPM training. Averaged over
    all elements of the batch.

    Returns the scalar, or (scalar, d/d var_raw) when want_grad.
    """
    if var_raw is None:
        raise ValueError("vlb_term: variance learning is disabled (no variance channel)")
    x0 = np.asarray(x0, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    var_raw = np.asarray(var_raw, dtype=np.float64)
    check_same_shape(x0, x_t, mean, var_raw, context="vlb_term")
    if x0.ndim < 1:
        raise ValueError("vlb_term: expects batch-leading arrays")
    t = _check_t(s, t)
    tb = np.broadcast_to(t, (x0.shape[0],))

    log_var, frac = model_log_variance(var_raw, tb, s)
    sigma2 = np.exp(log_var)
    c0, ct, beta_til = posterior_coefs(tb, s)
    is_kl = (tb > 0).reshape((-1,) + (1,) * (x0.ndim - 1))

    # t > 0: Gaussian KL(q || p), elementwise
    q_mean = _per_item(c0, x0.ndim) * x0 + _per_item(ct, x0.ndim) * x_t
    bt = _per_item(np.maximum(beta_til, 1e-300), x0.ndim)
    delta2 = (q_mean - mean) ** 2
    kl = 0.5 * (log_var - np.log(bt)) + 0.5 * (bt + delta2) / sigma2 - 0.5

    # t = 0: negative log of the discretized Gaussian pixel likelihood
    sigma = np.exp(0.5 * log_var)
    z_plus = (x0 + _BIN_HALF_WIDTH - mean) / sigma
    z_minus = (x0 - _BIN_HALF_WIDTH - mean) / sigma
    top = x0 > 0.999
    bottom = x0 < -0.999
    cdf_plus = np.where(top, 1.0, _norm_cdf(z_plus))
    cdf_minus = np.where(bottom, 0.0, _norm_cdf(z_minus))
    prob = cdf_plus - cdf_minus
    clipped = prob < 1e-12
    prob = np.maximum(prob, 1e-12)
    nll = -np.log(prob)

    contrib = np.where(is_kl, kl, nll)
    value = float(contrib.mean())
    if not want_grad:
        return value

    n_elem = contrib.size
    # d KL / d log_var
    dkl = 0.5 - 0.5 * (bt + delta2) / sigma2
    # d NLL / d log_var via d sigma = sigma / 2
    dprob_dsigma = (
        np.where(bottom, 0.0, _norm_pdf(z_minus) * z_minus)
        - np.where(top, 0.0, _norm_pdf(z_plus) * z_plus)
    ) / sigma
    dnll = np.where(clipped, 0.0, -(dprob_dsigma / prob) * (sigma / 2.0))
    dlog_var = np.where(is_kl, dkl, dnll) / n_elem
    log_hi = _per_item(np.log(s.beta[tb]), x0.ndim)
    log_lo = _per_item(np.log(beta_tilde_clipped(tb, s)), x0.ndim)
    d_var_raw = dlog_var * (log_hi - log_lo) * frac * (1.0 - frac)
    return value, d_var_raw


def reverse_chain(params, x_start, cond, s, rng, clamp_x0=True):
    """Run the full ancestral chain from the given starting noise.

    Deterministic given the rng stream. Raises naming the step index if
    any intermediate goes non-finite."""
    from .denoiser import denoise_forward

    x = np.array(x_start, dtype=np.float64, copy=True)
    learned = params.cfg.variance_learning
    for t in range(s.T - 1, -1, -1):
        out = denoise_forward(params, x, t, cond)
        x0_hat = predict_x0(x, out.eps, t, s)
        if clamp_x0:
            np.clip(x0_hat, -1.0, 1.0, out=x0_hat)
        c0, ct, beta_til = posterior_coefs(t, s)
        x = c0 * x0_hat + ct * x
        if t > 0:
            if learned:
                log_var, _ = model_log_variance(out.var, t, s)
                sigma = np.exp(0.5 * log_var)
            else:
                sigma = np.sqrt(beta_til)
            x = x + sigma * rng.normal(x.shape)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"ancestral sampling diverged at step t={t}")
    return x


def ancestral_sample(params, cond, s, rng, n, clamp_x0=True):
    """Draw n images by running the full reverse chain from fresh noise."""
    cfg = params.cfg
    if cfg.image_size % 2 != 0:
        raise ValueError("ancestral_sample: image size must be even")
    shape = (int(n), cfg.channels_in, cfg.image_size, cfg.image_size)
    x = rng.normal(shape)
    return reverse_chain(params, x, cond, s, rng, clamp_x0=clamp_x0)
