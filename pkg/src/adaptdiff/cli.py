"""Operator entry points.

Subcommands: pretrain, adapt, sample, eval, wavelet, grid, sweep. Every
run takes a JSON config file (sections: dataset, model, schedule, train);
the handful of exposed flags override their config-file equivalents, and
each run writes the fully resolved configuration beside its outputs so it
can be reproduced byte-for-byte.

Exit codes: 0 success, 2 user/input error (bad paths, bad config, bad
checkpoint), 1 internal error.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .dataio import (
    CheckpointError,
    DatasetSpec,
    load_checkpoint,
    load_dataset,
    load_png,
    save_grid,
    save_png,
)
from .denoiser import DenoiserConfig
from .diffusion import ancestral_sample, make_linear_schedule
from .losses import LossWeights
from .metrics import (
    DISTANCES,
    EMBEDDERS,
    average_pairwise_diversity,
    frechet_distance,
    intra_cluster_diversity,
    nearest_distance_score,
)
from .numerics import SeededRng
from .trainer import TARGET_CONDITION, TrainConfig, adapt, pretrain, run_lambda_sweep
from .wavelet import haar_decompose

_GRID_SAMPLES = 16


def _load_config_file(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"config file {p} is not valid JSON: {exc}") from exc


def _dataset_spec(cfg, args):
    section = dict(cfg.get("dataset", {}))
    if getattr(args, "data", None):
        section["directory"] = args.data
    if "directory" not in section:
        raise ValueError("no dataset directory (config dataset.directory or --data)")
    sub = section.get("subsample")
    if isinstance(sub, dict):
        sub = (int(sub["count"]), int(sub.get("seed", 0)))
    return DatasetSpec(
        directory=section["directory"],
        image_size=int(section.get("image_size", cfg.get("model", {}).get("image_size", 0))
                       or 0),
        channels=int(section.get("channels", 3)),
        subsample=sub,
    )


def _train_config(cfg, args):
    section = dict(cfg.get("train", {}))
    weights = dict(section.get("weights", {}))
    for lam in ("lambda1", "lambda2", "lambda3", "lambda4"):
        override = getattr(args, lam, None)
        if override is not None:
            weights[lam] = override
    section["weights"] = LossWeights.from_dict(weights) if weights else LossWeights()
    if getattr(args, "seed", None) is not None:
        section["seed"] = args.seed
    if getattr(args, "iterations", None) is not None:
        section["iterations"] = args.iterations
    if "iterations" not in section:
        raise ValueError("no iteration count (config train.iterations or --iterations)")
    return TrainConfig.from_dict(section)


def _write_snapshot(out, payload):
    out = Path(out)
    if out.suffix:
        path = out.with_suffix(out.suffix + ".config.json")
    else:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "resolved_config.json"
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _final_grid(ckpt, out_dir, cond=None):
    schedule = ckpt.schedule()
    rng = SeededRng(ckpt.config.get("seed", 0)).child("final-grid")
    samples = ancestral_sample(ckpt.params, cond, schedule, rng, _GRID_SAMPLES)
    save_grid(samples, Path(out_dir) / "final_grid.png", rows=4)


def cmd_pretrain(args):
    cfg = _load_config_file(args.config)
    if "model" not in cfg:
        raise ValueError("pretrain needs a model section in the config file")
    model_cfg = DenoiserConfig.from_dict(cfg["model"])
    sch = cfg.get("schedule", {})
    schedule = make_linear_schedule(
        int(sch.get("steps", 1000)),
        float(sch.get("beta_start", 1e-4)),
        float(sch.get("beta_end", 0.02)),
    )
    spec = _dataset_spec(cfg, args)
    if spec.image_size == 0:
        spec.image_size = model_cfg.image_size
    train_cfg = _train_config(cfg, args)
    images = load_dataset(spec)
    out = Path(args.out)
    _write_snapshot(out, {
        "command": "pretrain",
        "dataset": {"directory": str(spec.directory), "image_size": spec.image_size,
                    "channels": spec.channels, "subsample": spec.subsample},
        "model": model_cfg.to_dict(),
        "schedule": {"steps": schedule.T, "beta_start": schedule.beta_start,
                     "beta_end": schedule.beta_end},
        "train": train_cfg.to_dict(),
    })
    ckpt = pretrain(images, model_cfg, schedule, train_cfg, out_dir=out)
    cond = 0 if model_cfg.num_conditions > 0 else None
    _final_grid(ckpt, out, cond=cond)
    print(f"pretrain finished: {out / 'checkpoint_final.dstu'}")
    return 0


def cmd_adapt(args):
    cfg = _load_config_file(args.config)
    source = load_checkpoint(args.source)
    spec = _dataset_spec(cfg, args)
    if spec.image_size == 0:
        spec.image_size = source.params.cfg.image_size
    train_cfg = _train_config(cfg, args)
    images = load_dataset(spec)
    out = Path(args.out)
    _write_snapshot(out, {
        "command": "adapt",
        "source": str(args.source),
        "dataset": {"directory": str(spec.directory), "image_size": spec.image_size,
                    "channels": spec.channels, "subsample": spec.subsample},
        "model": source.params.cfg.to_dict(),
        "schedule": source.config["schedule"],
        "train": train_cfg.to_dict(),
    })
    ckpt = adapt(source, images, train_cfg, out_dir=out)
    cond = TARGET_CONDITION if train_cfg.weights.mode == "conditional" else None
    _final_grid(ckpt, out, cond=cond)
    print(f"adapt finished: {out / 'checkpoint_final.dstu'}")
    return 0


def cmd_sample(args):
    ckpt = load_checkpoint(args.ckpt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cond = args.cond
    if cond is None and ckpt.params.cfg.num_conditions > 0:
        cond = TARGET_CONDITION
    _write_snapshot(out, {
        "command": "sample",
        "ckpt": str(args.ckpt),
        "n": args.n,
        "seed": args.seed,
        "cond": cond,
    })
    rng = SeededRng(args.seed).child("sample")
    samples = ancestral_sample(ckpt.params, cond, ckpt.schedule(), rng, args.n)
    for i in range(args.n):
        save_png(samples[i], out / f"sample_{i:03d}.png")
    print(f"wrote {args.n} samples to {out}")
    return 0


def _load_image_dir(path, image_size, channels):
    p = Path(path)
    if not p.is_dir():
        raise FileNotFoundError(f"image directory not found: {p}")
    spec = DatasetSpec(directory=str(p), image_size=image_size, channels=channels)
    return load_dataset(spec)


def _infer_image_size(path):
    p = Path(path)
    files = sorted(f for f in p.iterdir() if f.suffix.lower() == ".png")
    if not files:
        raise ValueError(f"no .png files in {p}")
    from PIL import Image
    with Image.open(files[0]) as img:
        return min(img.size)


def cmd_eval(args):
    image_size = args.image_size or _infer_image_size(args.generated)
    generated = _load_image_dir(args.generated, image_size, args.channels)
    training = None
    if args.metric != "avg-pairwise":
        if args.training is None:
            raise ValueError(f"--training is required for metric {args.metric!r}")
        training = _load_image_dir(args.training, image_size, args.channels)

    d = DISTANCES[args.distance]()
    report = {
        "metric": args.metric,
        "generated": str(args.generated),
        "training": str(args.training) if args.training else None,
        "image_size": image_size,
        "distance": d.name,
        "embedder": None,
        "include_flips": bool(args.flips),
    }
    if args.metric == "nearest":
        report["value"] = nearest_distance_score(generated, training, d,
                                                 include_flips=args.flips)
    elif args.metric == "intra":
        cluster = intra_cluster_diversity(generated, training, d)
        report["value"] = cluster.overall_mean
        report["clusters"] = cluster.to_dict()
    elif args.metric == "avg-pairwise":
        report["value"] = average_pairwise_diversity(generated, d)
    elif args.metric == "frechet":
        e = EMBEDDERS[args.embedder]()
        report["embedder"] = e.name
        report["value"] = frechet_distance(generated, training, e)
    text = json.dumps(report, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _render_zero_centered(band):
    """Zero-centered panel rendering: 0 -> gray 128, scaled by max |value|."""
    scale = np.max(np.abs(band))
    if scale == 0:
        scale = 1.0
    return band / scale  # save_png maps [-1, 1] onto [0, 255] around 128


def cmd_wavelet(args):
    src = Path(args.input)
    files = [src] if src.is_file() else sorted(
        p for p in src.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise ValueError(f"no input images at {src}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    image_size = args.image_size or _infer_image_size(files[0].parent)
    _write_snapshot(out, {"command": "wavelet", "input": str(src),
                          "image_size": image_size, "channels": args.channels})
    for f in files:
        img = load_png(f, image_size, args.channels)
        bands = haar_decompose(img)
        save_png(_render_zero_centered(bands.ll), out / f"{f.stem}_ll.png")
        save_png(_render_zero_centered(bands.lh + bands.hl + bands.hh),
                 out / f"{f.stem}_hf.png")
    print(f"wrote band panels for {len(files)} image(s) to {out}")
    return 0


def cmd_grid(args):
    image_size = args.image_size or _infer_image_size(args.input)
    images = _load_image_dir(args.input, image_size, args.channels)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_snapshot(out, {"command": "grid", "input": str(args.input),
                          "rows": args.rows, "image_size": image_size})
    save_grid(images, out, rows=args.rows)
    print(f"wrote grid of {images.shape[0]} images to {out}")
    return 0


def cmd_sweep(args):
    cfg = _load_config_file(args.config)
    source = load_checkpoint(args.source)
    spec = _dataset_spec(cfg, args)
    if spec.image_size == 0:
        spec.image_size = source.params.cfg.image_size
    train_cfg = _train_config(cfg, args)
    images = load_dataset(spec)
    values = [float(v) for v in args.lambda2_values.split(",") if v.strip()]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_snapshot(out, {
        "command": "sweep",
        "source": str(args.source),
        "lambda2_values": values,
        "n_samples": args.n_samples,
        "train": train_cfg.to_dict(),
    })
    table = run_lambda_sweep(source, images, train_cfg, values,
                             n_samples=args.n_samples, distance=args.distance)
    path = out / "sweep.json"
    path.write_text(json.dumps(table, sort_keys=True, indent=2) + "\n")
    print(f"wrote sweep table to {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="adaptdiff",
        description="Desk-scale diffusion training, few-shot adaptation, and metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train a denoiser from scratch")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="dataset directory (overrides config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("adapt", help="adapt a pretrained model to a target set")
    p.add_argument("--config", required=True)
    p.add_argument("--source", required=True, help="source checkpoint path")
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="target dataset directory (overrides config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    for lam in ("lambda1", "lambda2", "lambda3", "lambda4"):
        p.add_argument(f"--{lam}", type=float, default=None)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("sample", help="draw samples from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cond", type=int, default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="compute a metric over image directories")
    p.add_argument("--metric", required=True,
                   choices=["nearest", "intra", "avg-pairwise", "frechet"])
    p.add_argument("--generated", required=True)
    p.add_argument("--training")
    p.add_argument("--flips", action="store_true",
                   help="add horizontally flipped training images as candidates")
    p.add_argument("--distance", choices=sorted(DISTANCES), default="haar-ms")
    p.add_argument("--embedder", choices=sorted(EMBEDDERS), default="haar-rp64")
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--out", help="write the JSON report here as well")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("wavelet", help="emit low/high frequency band panels")
    p.add_argument("--input", required=True, help="PNG file or directory")
    p.add_argument("--out", required=True)
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--channels", type=int, default=3)
    p.set_defaults(func=cmd_wavelet)

    p = sub.add_parser("grid", help="tile a directory of images into one PNG")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rows", type=int, default=None)
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--channels", type=int, default=3)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("sweep", help="adapt across lambda2 values and tabulate diversity")
    p.add_argument("--config", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data")
    p.add_argument("--lambda2-values", required=True,
                   help="comma-separated lambda2 values")
    p.add_argument("--n-samples", type=int, default=100)
    p.add_argument("--distance", choices=sorted(DISTANCES), default="haar-ms")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, NotADirectoryError, ValueError, KeyError,
            CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - internal failure path
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
