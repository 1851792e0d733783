"""Training loops: from-scratch pretraining, adaptation against a frozen
source model, the fixed-noise similarity probe, and the lambda sweep
harness.

Reproducibility contract: a run is a pure function of (data, configs,
seed). Every random consumer gets its own named child stream of the run
seed -- data order, flip decisions, timesteps, noise, dropout, probes,
prior pool -- so adding one consumer never shifts another's draws. With
all extra loss terms at zero, adapt() consumes the training streams
exactly like pretrain() and reproduces its parameter trajectory from the
same seed.

When an output directory is given, loops write JSON-lines loss logs
(loss_log.jsonl), probe records (probes.jsonl), and checkpoints
(checkpoint_final.dstu plus periodic snapshots). Log records contain no
timestamps, so reruns are byte-identical.
"""

import json
import warnings
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .dataio import Checkpoint, make_config_snapshot, save_checkpoint
from .denoiser import clone_for_adaptation, denoise_backward, denoise_forward, init_params
from .diffusion import ancestral_sample, forward_noise, posterior_mean, predict_x0, \
    reverse_chain, vlb_term
from .losses import (
    ConditionalBatch,
    LossReport,
    LossWeights,
    MODE_CONDITIONAL,
    UnconditionalBatch,
    _l_simple_grad,
    total_conditional_loss_grad,
    total_unconditional_loss_grad,
)
from .metrics import DISTANCES, intra_cluster_diversity
from .numerics import SeededRng, gaussian_noise
from .similarity import cosine_sim

SOURCE_CONDITION = 0
TARGET_CONDITION = 1


@dataclass
class TrainConfig:
    iterations: int
    batch_size: int = 16
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    log_interval: int = 50
    checkpoint_interval: int = 0  # 0 disables periodic snapshots
    flip_augment: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    shared_t: bool = False
    probe_interval: Optional[int] = None  # None -> every 10% of iterations
    probe_count: int = 8
    clamp_x0: bool = True
    prior_pool_size: int = 200
    regenerate_prior_every: int = 0  # 0 -> generate the prior pool once

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.log_interval < 1:
            raise ValueError("log_interval must be >= 1")
        if self.probe_count < 2:
            raise ValueError("probe_count must be >= 2")

    def to_dict(self):
        d = asdict(self)
        d["weights"] = self.weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights.from_dict(d["weights"])
        return cls(**d)


@dataclass
class ProbeRecord:
    """Mean pairwise cosine similarity among fixed-noise samples."""

    iteration: int
    mean_similarity: float
    pair_similarities: list

    def to_dict(self):
        return asdict(self)


class _Adam:
    """Adaptive moment estimation with bias correction; deterministic."""

    def __init__(self, cfg):
        self.lr = cfg.learning_rate
        self.b1 = cfg.beta1
        self.b2 = cfg.beta2
        self.eps = cfg.adam_eps
        self.m = {}
        self.v = {}
        self.t = 0

    def update(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, arr in params.arrays.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(arr)
                self.v[name] = np.zeros_like(arr)
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            arr -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _BatchSampler:
    """Batches of indices from per-epoch reshuffles; batches may span
    epoch boundaries, and batch_size > dataset size simply cycles."""

    def __init__(self, n, batch_size, rng):
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self.queue = []

    def next(self):
        while len(self.queue) < self.batch_size:
            self.queue.extend(int(i) for i in self.rng.permutation(self.n))
        idx = self.queue[:self.batch_size]
        del self.queue[:self.batch_size]
        return np.array(idx, dtype=np.int64)


class _JsonlWriter:
    def __init__(self, path):
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.write_text("")

    def write(self, record):
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def _validate_images(images, cfg):
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ValueError(f"expected images of shape (N, C, S, S), got {images.shape}")
    if images.shape[1] != cfg.channels_in or images.shape[2] != cfg.image_size \
            or images.shape[3] != cfg.image_size:
        raise ValueError(
            f"dataset shape {images.shape[1:]} does not match the model's "
            f"({cfg.channels_in}, {cfg.image_size}, {cfg.image_size})"
        )
    if images.shape[0] < 1:
        raise ValueError("dataset is empty")
    return images


def _draw_batch(images, sampler, streams, cfg, T):
    idx = sampler.next()
    x0 = images[idx]
    if cfg.flip_augment:
        u = streams["flip"].uniform(len(idx))
        flip_mask = u < 0.5
        if np.any(flip_mask):
            x0 = x0.copy()
            x0[flip_mask] = x0[flip_mask][..., ::-1]
    if cfg.shared_t:
        t = np.full(len(idx), int(streams["t"].integers(0, T)), dtype=np.int64)
    else:
        t = streams["t"].integers(0, T, len(idx))
    eps = gaussian_noise(streams["noise"], x0.shape)
    return x0, t, eps


def _mean_pairwise_cosine(samples):
    flat = np.asarray(samples).reshape(samples.shape[0], -1)
    pairs = []
    for i in range(flat.shape[0]):
        for j in range(i + 1, flat.shape[0]):
            pairs.append(cosine_sim(flat[i], flat[j]))
    return float(np.mean(pairs)), pairs


def probe_fixed_noise(params, noises, schedule, step_seed, iteration=0, cond=None,
                      clamp_x0=True):
    """Sample from each fixed noise with the full reverse chain and record
    the mean pairwise cosine similarity of the resulting images. The
    per-step sampling noise comes from step_seed, so probing a frozen
    model twice yields identical records."""
    rng = SeededRng(step_seed).child("probe-chain")
    samples = reverse_chain(params, noises, cond, schedule, rng, clamp_x0=clamp_x0)
    mean, pairs = _mean_pairwise_cosine(samples)
    return ProbeRecord(iteration=int(iteration), mean_similarity=mean,
                       pair_similarities=pairs)


def _checkpoint(params, schedule, cfg, iteration):
    snap = make_config_snapshot(params.cfg, schedule, cfg.weights, cfg.seed)
    return Checkpoint(config=snap, params=params, iteration=iteration)


def _maybe_save(ckpt, out_dir, name):
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ckpt, out_dir / name)


def pretrain(images, model_cfg, schedule, cfg, out_dir=None, init=None):
    """Train a denoiser from scratch (or resume from `init`) on the plain
    noise-prediction objective, optionally plus the weighted
    variational-bound term when variance learning is enabled."""
    images = _validate_images(images, model_cfg)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    root = SeededRng(cfg.seed)
    streams = {name: root.child(name) for name in
               ("order", "flip", "t", "noise", "dropout")}
    if init is not None:
        if init.params.cfg != model_cfg:
            raise ValueError("pretrain: init checkpoint config does not match model_cfg")
        params = init.params.clone()
    else:
        params = init_params(model_cfg, root.child("init"))
    use_vlb = cfg.weights.lambda1 > 0
    if use_vlb and not model_cfg.variance_learning:
        raise ValueError("lambda1 > 0 needs variance_learning in the model config")

    opt = _Adam(cfg)
    sampler = _BatchSampler(images.shape[0], cfg.batch_size, streams["order"])
    log = _JsonlWriter(Path(out_dir) / "loss_log.jsonl" if out_dir else None)

    for it in range(1, cfg.iterations + 1):
        x0, t, eps = _draw_batch(images, sampler, streams, cfg, schedule.T)
        x_t = forward_noise(x0, t, eps, schedule)
        out, cache = denoise_forward(params, x_t, t, train=True,
                                     dropout_rng=streams["dropout"], want_cache=True)
        simple, d_eps = _l_simple_grad(out.eps, eps)
        vlb = 0.0
        d_var = None
        if use_vlb:
            x0_pred = predict_x0(x_t, out.eps, t, schedule)
            mean = posterior_mean(x0_pred, x_t, t, schedule)
            vlb, d_var = vlb_term(x0, x_t, t, mean, out.var, schedule, want_grad=True)
            d_var = cfg.weights.lambda1 * d_var
        total = simple + cfg.weights.lambda1 * vlb
        if not np.isfinite(total):
            raise FloatingPointError(f"pretrain: non-finite loss at iteration {it}")
        grads = denoise_backward(params, cache, d_eps, d_var)
        opt.update(params, grads)

        if it % cfg.log_interval == 0 or it == cfg.iterations:
            report = LossReport(simple=simple, vlb=vlb, img=0.0, hf=0.0, hfmse=0.0,
                                pr=0.0, total=total)
            log.write({"iteration": it, **report.to_dict()})
        if out_dir is not None and cfg.checkpoint_interval > 0 \
                and it % cfg.checkpoint_interval == 0 and it != cfg.iterations:
            _maybe_save(_checkpoint(params, schedule, cfg, it), out_dir,
                        f"checkpoint_{it:07d}.dstu")

    ckpt = _checkpoint(params, schedule, cfg, cfg.iterations)
    _maybe_save(ckpt, out_dir, "checkpoint_final.dstu")
    return ckpt


def _probe_iterations(cfg):
    interval = cfg.probe_interval
    if interval is None:
        interval = max(1, cfg.iterations // 10)
    points = set(range(0, cfg.iterations + 1, interval))
    points.add(0)
    points.add(cfg.iterations)
    return points


def adapt(source_ckpt, images, cfg, out_dir=None):
    """Adapt a clone of the source model to a (typically few-shot) target
    set while the source stays frozen as reference. The mode of
    cfg.weights picks the unconditional or conditional objective."""
    src = source_ckpt.params
    model_cfg = src.cfg
    schedule = source_ckpt.schedule()
    try:
        images = _validate_images(images, model_cfg)
    except ValueError as exc:
        raise ValueError(f"adapt: source checkpoint incompatible with dataset: {exc}") from exc
    conditional = cfg.weights.mode == MODE_CONDITIONAL
    if conditional and model_cfg.num_conditions < 2:
        raise ValueError("conditional adaptation needs a model with num_conditions >= 2")
    if cfg.weights.lambda1 > 0 and not conditional and not model_cfg.variance_learning:
        raise ValueError("lambda1 > 0 needs variance_learning in the model config")
    if cfg.batch_size == 2 and (cfg.weights.lambda2 > 0 or cfg.weights.lambda3 > 0):
        warnings.warn("batch_size 2 makes the pairwise losses identically zero",
                      stacklevel=2)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)

    root = SeededRng(cfg.seed)
    streams = {name: root.child(name) for name in
               ("order", "flip", "t", "noise", "dropout")}
    ada = clone_for_adaptation(src)
    opt = _Adam(cfg)
    sampler = _BatchSampler(images.shape[0], cfg.batch_size, streams["order"])
    log = _JsonlWriter(Path(out_dir) / "loss_log.jsonl" if out_dir else None)
    probe_log = _JsonlWriter(Path(out_dir) / "probes.jsonl" if out_dir else None)

    probe_noises = gaussian_noise(
        root.child("probe-noise"),
        (cfg.probe_count, model_cfg.channels_in, model_cfg.image_size, model_cfg.image_size),
    )
    probe_at = _probe_iterations(cfg)
    probe_cond = TARGET_CONDITION if conditional else None
    probes = []

    def run_probe(iteration):
        rec = probe_fixed_noise(ada, probe_noises, schedule, cfg.seed,
                                iteration=iteration, cond=probe_cond,
                                clamp_x0=cfg.clamp_x0)
        probes.append(rec)
        probe_log.write(rec.to_dict())

    pool = None
    if conditional:
        prior_streams = {name: root.child(name) for name in
                         ("prior-pool", "prior-order", "prior-t", "prior-noise")}
        pool = ancestral_sample(src, SOURCE_CONDITION, schedule,
                                prior_streams["prior-pool"], cfg.prior_pool_size,
                                clamp_x0=cfg.clamp_x0)

    if 0 in probe_at:
        run_probe(0)

    for it in range(1, cfg.iterations + 1):
        x0, t, eps = _draw_batch(images, sampler, streams, cfg, schedule.T)
        x_t = forward_noise(x0, t, eps, schedule)
        if not conditional:
            out_src = denoise_forward(src, x_t, t)
            out_ada, cache = denoise_forward(ada, x_t, t, train=True,
                                             dropout_rng=streams["dropout"],
                                             want_cache=True)
            ctx = UnconditionalBatch(
                x0=x0, t=t, eps=eps, x_t=x_t,
                eps_src=out_src.eps, x0_src=predict_x0(x_t, out_src.eps, t, schedule),
                eps_ada=out_ada.eps, x0_ada=predict_x0(x_t, out_ada.eps, t, schedule),
                schedule=schedule, var_ada=out_ada.var,
            )
            report, d_eps, d_var = total_unconditional_loss_grad(ctx, cfg.weights)
            grads = denoise_backward(ada, cache, d_eps, d_var)
        else:
            if cfg.regenerate_prior_every > 0 and it % cfg.regenerate_prior_every == 0:
                pool = ancestral_sample(src, SOURCE_CONDITION, schedule,
                                        prior_streams["prior-pool"],
                                        cfg.prior_pool_size, clamp_x0=cfg.clamp_x0)
            pr_idx = prior_streams["prior-order"].integers(0, pool.shape[0],
                                                           cfg.batch_size)
            x_pr = pool[pr_idx]
            t_pr = prior_streams["prior-t"].integers(0, schedule.T, cfg.batch_size)
            eps_pr = gaussian_noise(prior_streams["prior-noise"], x_pr.shape)
            zt_pr = forward_noise(x_pr, t_pr, eps_pr, schedule)
            out_src_pr = denoise_forward(src, zt_pr, t_pr, cond=SOURCE_CONDITION)
            out_tar, cache_tar = denoise_forward(ada, x_t, t, cond=TARGET_CONDITION,
                                                 train=True,
                                                 dropout_rng=streams["dropout"],
                                                 want_cache=True)
            out_pr, cache_pr = denoise_forward(ada, zt_pr, t_pr, cond=SOURCE_CONDITION,
                                               train=True,
                                               dropout_rng=streams["dropout"],
                                               want_cache=True)
            ctx = ConditionalBatch(
                x0_tar=x0, t_tar=t, eps_tar=eps, xt_tar=x_t,
                eps_ada_tar=out_tar.eps,
                x0_ada_tar=predict_x0(x_t, out_tar.eps, t, schedule),
                x_pr=x_pr, t_pr=t_pr, eps_pr=eps_pr, zt_pr=zt_pr,
                eps_src_pr=out_src_pr.eps, eps_ada_pr=out_pr.eps,
                x0_ada_pr=predict_x0(zt_pr, out_pr.eps, t_pr, schedule),
                schedule=schedule,
            )
            report, d_tar, d_pr = total_conditional_loss_grad(ctx, cfg.weights)
            grads = denoise_backward(ada, cache_tar, d_tar)
            grads_pr = denoise_backward(ada, cache_pr, d_pr)
            for name in grads:
                grads[name] += grads_pr[name]

        if not np.isfinite(report.total):
            raise FloatingPointError(f"adapt: non-finite loss at iteration {it}")
        opt.update(ada, grads)

        if it % cfg.log_interval == 0 or it == cfg.iterations:
            log.write({"iteration": it, **report.to_dict()})
        if it in probe_at and it != 0:
            run_probe(it)
        if out_dir is not None and cfg.checkpoint_interval > 0 \
                and it % cfg.checkpoint_interval == 0 and it != cfg.iterations:
            _maybe_save(_checkpoint(ada, schedule, cfg, it), out_dir,
                        f"checkpoint_{it:07d}.dstu")

    ckpt = _checkpoint(ada, schedule, cfg, cfg.iterations)
    _maybe_save(ckpt, out_dir, "checkpoint_final.dstu")
    return ckpt


def run_lambda_sweep(source_ckpt, images, cfg, lambda2_values, n_samples=100,
                     sample_seed=1234, distance="haar-ms"):
    """Adapt once per lambda2 value and tabulate intra-cluster diversity.

    All runs share the training seed and sampling noise, so rows differ
    only in lambda2. Returns a JSON-ready table ordered by lambda2."""
    if len(lambda2_values) < 1:
        raise ValueError("run_lambda_sweep: need at least one lambda2 value")
    schedule = source_ckpt.schedule()
    conditional = cfg.weights.mode == MODE_CONDITIONAL
    sample_cond = TARGET_CONDITION if conditional else None
    d = DISTANCES[distance]()
    runs = []
    for lam2 in sorted(set(float(v) for v in lambda2_values)):
        run_cfg = replace(cfg, weights=replace(cfg.weights, lambda2=lam2))
        ckpt = adapt(source_ckpt, images, run_cfg)
        samples = ancestral_sample(ckpt.params, sample_cond, schedule,
                                   SeededRng(sample_seed), n_samples,
                                   clamp_x0=cfg.clamp_x0)
        rep = intra_cluster_diversity(samples, images, d)
        runs.append({
            "lambda2": lam2,
            "intra_cluster_diversity": rep.overall_mean,
            "std": rep.std,
            "included_clusters": rep.included_clusters,
        })
    return {
        "metric": "intra_cluster_diversity",
        "distance": distance,
        "n_samples": int(n_samples),
        "iterations": cfg.iterations,
        "runs": runs,
    }
