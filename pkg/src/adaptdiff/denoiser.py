"""A small differentiable noise-prediction network.

Architecture (desk scale on purpose):
  * sinusoidal timestep embedding -> two affine+SiLU stages -> per-block
    affine projections added as channel biases;
  * optional learned condition embedding (one row per discrete token)
    added to the sinusoidal embedding before the MLP;
  * encoder/decoder over `depth` resolution levels with channel widths
    base_width * 2**level, one additive skip connection per level,
    stride-2 convs down and nearest-neighbour x2 + conv up;
  * residual blocks of [rms-norm, SiLU, conv, +time bias, rms-norm, SiLU,
    dropout, conv] with an identity shortcut;
  * output head: rms-norm, SiLU, conv to channels_in noise channels, or
    2*channels_in when the variance channel is enabled.

Everything is float64 and every nonlinearity is smooth, so analytic
gradients can be held to the central-difference oracle at ~1e-7 relative
error. The backward pass is written by hand; `denoise_forward(...,
want_cache=True)` returns the activations `denoise_backward` needs.

The normalization is a per-channel RMS norm over spatial positions with a
learned gain (no mean subtraction), chosen for its simple exact gradient.
"""

from dataclasses import dataclass, asdict
from typing import NamedTuple, Optional

import numpy as np

from .backend import conv3x3_forward, conv3x3_backward_input, conv3x3_backward_params

_NORM_EPS = 1e-6


@dataclass(frozen=True)
class DenoiserConfig:
    image_size: int
    channels_in: int = 3
    base_width: int = 16
    depth: int = 2
    time_embed_dim: int = 32
    num_conditions: int = 0
    variance_learning: bool = False
    dropout: float = 0.1
    channel_norm: bool = True

    def __post_init__(self):
        if self.image_size < 2 or self.image_size % 2 != 0:
            raise ValueError(f"image_size must be even and >= 2, got {self.image_size}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.image_size % (1 << (self.depth - 1)) != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by 2**(depth-1)={1 << (self.depth - 1)}"
            )
        if self.base_width < 4:
            raise ValueError(f"base_width must be >= 4, got {self.base_width}")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2 != 0:
            raise ValueError("time_embed_dim must be even and >= 2")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.num_conditions < 0:
            raise ValueError("num_conditions must be >= 0")

    @property
    def out_channels(self):
        return self.channels_in * (2 if self.variance_learning else 1)

    @property
    def widths(self):
        return [self.base_width << level for level in range(self.depth)]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class DenoiserParams:
    """Named, shaped float64 weight arrays plus the config they belong to."""

    def __init__(self, cfg, arrays):
        self.cfg = cfg
        self.arrays = dict(arrays)

    def clone(self):
        return DenoiserParams(self.cfg, {k: v.copy() for k, v in self.arrays.items()})

    @property
    def total_count(self):
        return sum(int(a.size) for a in self.arrays.values())

    def __getitem__(self, name):
        return self.arrays[name]

    def items(self):
        return self.arrays.items()

    def __repr__(self):
        return f"DenoiserParams({len(self.arrays)} arrays, {self.total_count} weights)"


def clone_for_adaptation(src):
    """Deep copy to seed an adapted model; the source stays frozen."""
    return src.clone()


class DenoiseOutput(NamedTuple):
    eps: np.ndarray
    var: Optional[np.ndarray]


def init_params(cfg, rng):
    """Fan-in-scaled random initialization, deterministic given the rng.

    Arrays are created (and random draws consumed) in forward-pass order;
    a block at width c holds 18c^2 + c*time_embed_dim + 5c weights
    (2 convs, the time-bias projection, 2 norm gains)."""
    e = cfg.time_embed_dim
    widths = cfg.widths
    arrays = {}

    def conv(name, cout, cin):
        arrays[name + ".w"] = rng.normal((cout, cin, 3, 3)) / np.sqrt(cin * 9.0)
        arrays[name + ".b"] = np.zeros(cout)

    def dense(name, cout, cin):
        arrays[name + ".w"] = rng.normal((cout, cin)) / np.sqrt(cin)
        arrays[name + ".b"] = np.zeros(cout)

    def block(prefix, width):
        if cfg.channel_norm:
            arrays[prefix + "norm1.g"] = np.ones(width)
        conv(prefix + "conv1", width, width)
        dense(prefix + "temb", width, e)
        if cfg.channel_norm:
            arrays[prefix + "norm2.g"] = np.ones(width)
        conv(prefix + "conv2", width, width)

    dense("time.fc1", e, e)
    dense("time.fc2", e, e)
    if cfg.num_conditions > 0:
        arrays["cond.embed"] = rng.normal((cfg.num_conditions, e)) / np.sqrt(e)
    conv("in.conv", widths[0], cfg.channels_in)
    for level in range(cfg.depth):
        block(f"enc{level}.", widths[level])
        if level < cfg.depth - 1:
            conv(f"down{level}.conv", widths[level + 1], widths[level])
    block("mid.", widths[-1])
    for level in range(cfg.depth - 2, -1, -1):
        conv(f"up{level}.conv", widths[level], widths[level + 1])
        block(f"dec{level}.", widths[level])
    if cfg.channel_norm:
        arrays["out.norm.g"] = np.ones(widths[0])
    conv("out.conv", cfg.out_channels, widths[0])

    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"init_params produced non-finite values in {name}")
    return DenoiserParams(cfg, arrays)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _silu(x):
    s = _sigmoid(x)
    return x * s, s


def _silu_bwd(d, x, s):
    return d * (s * (1.0 + x * (1.0 - s)))


def _rmsnorm_fwd(x, g):
    r = np.sqrt(np.mean(x * x, axis=(2, 3), keepdims=True) + _NORM_EPS)
    return g[None, :, None, None] * x / r, r


def _rmsnorm_bwd(dy, x, r, g):
    m = x.shape[2] * x.shape[3]
    dot = np.sum(dy * x, axis=(2, 3), keepdims=True)
    dx = g[None, :, None, None] / r * (dy - x * dot / (m * r * r))
    dg = np.sum(dy * x / r, axis=(0, 2, 3))
    return dx, dg


def _upsample2(x):
    return x.repeat(2, axis=2).repeat(2, axis=3)


def _upsample2_bwd(d):
    n, c, h, w = d.shape
    return d.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def time_embedding(t, dim):
    """Sinusoidal embedding of integer timesteps, shape (N, dim)."""
    half = dim // 2
    if half > 1:
        freqs = np.exp(-np.log(10000.0) * np.arange(half) / (half - 1))
    else:
        freqs = np.ones(1)
    ang = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _block_fwd(arrays, prefix, h, temb, cfg, train, dropout_rng):
    c = {"h": h}
    if cfg.channel_norm:
        x1, r1 = _rmsnorm_fwd(h, arrays[prefix + "norm1.g"])
        c["r1"] = r1
    else:
        x1 = h
    c["x1"] = x1
    s1, sig1 = _silu(x1)
    c["sig1"] = sig1
    c["s1"] = s1
    z = conv3x3_forward(s1, arrays[prefix + "conv1.w"], arrays[prefix + "conv1.b"])
    tb = temb @ arrays[prefix + "temb.w"].T + arrays[prefix + "temb.b"]
    z = z + tb[:, :, None, None]
    c["z"] = z
    if cfg.channel_norm:
        x2, r2 = _rmsnorm_fwd(z, arrays[prefix + "norm2.g"])
        c["r2"] = r2
    else:
        x2 = z
    c["x2"] = x2
    s2, sig2 = _silu(x2)
    c["sig2"] = sig2
    if train and cfg.dropout > 0.0:
        keep = 1.0 - cfg.dropout
        mask = (dropout_rng.uniform(s2.shape) >= cfg.dropout) / keep
        d = s2 * mask
        c["mask"] = mask
    else:
        d = s2
        c["mask"] = None
    c["d"] = d
    out = h + conv3x3_forward(d, arrays[prefix + "conv2.w"], arrays[prefix + "conv2.b"])
    return out, c


def _block_bwd(arrays, prefix, dout, c, cfg, acc, temb):
    dd = conv3x3_backward_input(dout, arrays[prefix + "conv2.w"], c["d"].shape)
    dw2, db2 = conv3x3_backward_params(dout, c["d"])
    acc(prefix + "conv2.w", dw2)
    acc(prefix + "conv2.b", db2)
    if c["mask"] is not None:
        dd = dd * c["mask"]
    dx2 = _silu_bwd(dd, c["x2"], c["sig2"])
    if cfg.channel_norm:
        dz, dg2 = _rmsnorm_bwd(dx2, c["z"], c["r2"], arrays[prefix + "norm2.g"])
        acc(prefix + "norm2.g", dg2)
    else:
        dz = dx2
    dtb = dz.sum(axis=(2, 3))
    acc(prefix + "temb.w", dtb.T @ temb)
    acc(prefix + "temb.b", dtb.sum(axis=0))
    dtemb = dtb @ arrays[prefix + "temb.w"]
    ds1 = conv3x3_backward_input(dz, arrays[prefix + "conv1.w"], c["s1"].shape)
    dw1, db1 = conv3x3_backward_params(dz, c["s1"])
    acc(prefix + "conv1.w", dw1)
    acc(prefix + "conv1.b", db1)
    dx1 = _silu_bwd(ds1, c["x1"], c["sig1"])
    if cfg.channel_norm:
        dh, dg1 = _rmsnorm_bwd(dx1, c["h"], c["r1"], arrays[prefix + "norm1.g"])
        acc(prefix + "norm1.g", dg1)
    else:
        dh = dx1
    return dout + dh, dtemb


def denoise_forward(params, x_t, t, cond=None, *, train=False, dropout_rng=None,
                    want_cache=False):
    """Predict the noise in x_t (and the variance channel when enabled).

    t and cond may be scalars (applied to the whole batch) or per-item
    vectors. Pure given (params, inputs, dropout stream); dropout only
    applies when train=True.
    """
    cfg = params.cfg
    arrays = params.arrays
    x = np.asarray(x_t, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != cfg.channels_in or x.shape[2] != cfg.image_size \
            or x.shape[3] != cfg.image_size:
        raise ValueError(
            f"denoise_forward: expected (N, {cfg.channels_in}, {cfg.image_size}, "
            f"{cfg.image_size}), got {x.shape}"
        )
    n = x.shape[0]
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
    if np.any(t_arr < 0):
        raise ValueError("denoise_forward: timesteps must be >= 0")
    if cfg.num_conditions > 0:
        if cond is None:
            raise ValueError("denoise_forward: conditional model needs a condition token")
        cond_arr = np.broadcast_to(np.asarray(cond, dtype=np.int64), (n,))
        if np.any(cond_arr < 0) or np.any(cond_arr >= cfg.num_conditions):
            raise ValueError(
                f"denoise_forward: condition out of range [0, {cfg.num_conditions})"
            )
    elif cond is not None:
        raise ValueError("denoise_forward: model is unconditional but got a condition")
    else:
        cond_arr = None
    if train and cfg.dropout > 0.0 and dropout_rng is None:
        raise ValueError("denoise_forward: train=True with dropout needs dropout_rng")

    se = time_embedding(t_arr, cfg.time_embed_dim)
    if cond_arr is not None:
        se = se + arrays["cond.embed"][cond_arr]
    a1 = se @ arrays["time.fc1.w"].T + arrays["time.fc1.b"]
    u1, sig_a1 = _silu(a1)
    a2 = u1 @ arrays["time.fc2.w"].T + arrays["time.fc2.b"]
    temb, sig_a2 = _silu(a2)

    cache = {"se": se, "a1": a1, "sig_a1": sig_a1, "u1": u1, "a2": a2,
             "sig_a2": sig_a2, "temb": temb, "cond": cond_arr, "x_in": x,
             "blocks": {}}

    h = conv3x3_forward(x, arrays["in.conv.w"], arrays["in.conv.b"])
    skips = {}
    for level in range(cfg.depth):
        h, c = _block_fwd(arrays, f"enc{level}.", h, temb, cfg, train, dropout_rng)
        cache["blocks"][f"enc{level}."] = c
        if level < cfg.depth - 1:
            skips[level] = h
            cache[f"down{level}_in"] = h
            h = conv3x3_forward(h, arrays[f"down{level}.conv.w"],
                                arrays[f"down{level}.conv.b"], stride=2)
    h, c = _block_fwd(arrays, "mid.", h, temb, cfg, train, dropout_rng)
    cache["blocks"]["mid."] = c
    for level in range(cfg.depth - 2, -1, -1):
        hu = _upsample2(h)
        cache[f"up{level}_in"] = hu
        h = conv3x3_forward(hu, arrays[f"up{level}.conv.w"], arrays[f"up{level}.conv.b"])
        h = h + skips[level]
        h, c = _block_fwd(arrays, f"dec{level}.", h, temb, cfg, train, dropout_rng)
        cache["blocks"][f"dec{level}."] = c

    if cfg.channel_norm:
        x_out, r_out = _rmsnorm_fwd(h, arrays["out.norm.g"])
        cache["h_out"] = h
        cache["r_out"] = r_out
    else:
        x_out = h
    cache["x_out"] = x_out
    s_out, sig_out = _silu(x_out)
    cache["sig_out"] = sig_out
    cache["s_out"] = s_out
    y = conv3x3_forward(s_out, arrays["out.conv.w"], arrays["out.conv.b"])

    cin = cfg.channels_in
    out = DenoiseOutput(eps=y[:, :cin], var=y[:, cin:] if cfg.variance_learning else None)
    if want_cache:
        return out, cache
    return out


def denoise_backward(params, cache, d_eps, d_var=None):
    """Parameter gradients given output cotangents; mirrors denoise_forward."""
    cfg = params.cfg
    arrays = params.arrays
    grads = {}

    def acc(name, g):
        if name in grads:
            grads[name] += g
        else:
            grads[name] = g

    d_eps = np.asarray(d_eps, dtype=np.float64)
    if cfg.variance_learning:
        if d_var is None:
            d_var = np.zeros_like(d_eps)
        dy = np.concatenate([d_eps, d_var], axis=1)
    else:
        if d_var is not None:
            raise ValueError("denoise_backward: variance cotangent without variance channel")
        dy = d_eps

    ds_out = conv3x3_backward_input(dy, arrays["out.conv.w"], cache["s_out"].shape)
    dw, db = conv3x3_backward_params(dy, cache["s_out"])
    acc("out.conv.w", dw)
    acc("out.conv.b", db)
    dx_out = _silu_bwd(ds_out, cache["x_out"], cache["sig_out"])
    if cfg.channel_norm:
        dh, dg = _rmsnorm_bwd(dx_out, cache["h_out"], cache["r_out"], arrays["out.norm.g"])
        acc("out.norm.g", dg)
    else:
        dh = dx_out

    temb = cache["temb"]
    dtemb = np.zeros_like(temb)
    dskips = {}
    for level in range(cfg.depth - 1):  # reverse of the decoder loop
        dh, dt = _block_bwd(arrays, f"dec{level}.", dh, cache["blocks"][f"dec{level}."],
                            cfg, acc, temb)
        dtemb += dt
        dskips[level] = dh
        hu = cache[f"up{level}_in"]
        dhu = conv3x3_backward_input(dh, arrays[f"up{level}.conv.w"], hu.shape)
        dw, db = conv3x3_backward_params(dh, hu)
        acc(f"up{level}.conv.w", dw)
        acc(f"up{level}.conv.b", db)
        dh = _upsample2_bwd(dhu)
    dh, dt = _block_bwd(arrays, "mid.", dh, cache["blocks"]["mid."], cfg, acc, temb)
    dtemb += dt
    for level in range(cfg.depth - 1, -1, -1):
        if level < cfg.depth - 1:
            down_in = cache[f"down{level}_in"]
            dw, db = conv3x3_backward_params(dh, down_in, stride=2)
            acc(f"down{level}.conv.w", dw)
            acc(f"down{level}.conv.b", db)
            dh = conv3x3_backward_input(dh, arrays[f"down{level}.conv.w"],
                                        down_in.shape, stride=2)
            dh = dh + dskips[level]
        dh, dt = _block_bwd(arrays, f"enc{level}.", dh, cache["blocks"][f"enc{level}."],
                            cfg, acc, temb)
        dtemb += dt

    dw, db = conv3x3_backward_params(dh, cache["x_in"])
    acc("in.conv.w", dw)
    acc("in.conv.b", db)

    da2 = _silu_bwd(dtemb, cache["a2"], cache["sig_a2"])
    acc("time.fc2.w", da2.T @ cache["u1"])
    acc("time.fc2.b", da2.sum(axis=0))
    du1 = da2 @ arrays["time.fc2.w"]
    da1 = _silu_bwd(du1, cache["a1"], cache["sig_a1"])
    acc("time.fc1.w", da1.T @ cache["se"])
    acc("time.fc1.b", da1.sum(axis=0))
    if cfg.num_conditions > 0 and cache["cond"] is not None:
        dse = da1 @ arrays["time.fc1.w"]
        dcond = np.zeros_like(arrays["cond.embed"])
        np.add.at(dcond, cache["cond"], dse)
        acc("cond.embed", dcond)

    for name, arr in arrays.items():
        if name not in grads:
            grads[name] = np.zeros_like(arr)
    return grads
