"""Dataset ingestion, deterministic subsampling, and checkpoint persistence.

Images are 8-bit PNGs, decoded to float64, resized bilinearly to the
configured square size and normalized to [-1, 1] via x/127.5 - 1. File
order is lexicographic, so a directory's contents fully determine the
batch. Few-shot subsampling takes a prefix of one seeded permutation,
which makes smaller subsets nest inside larger ones at equal seed.

Checkpoints are a little-endian binary format:

    magic "DSTU" | u32 version | u64 json_len | config JSON (utf-8)
    | u32 n_arrays | per array: u16 name_len | name | u8 ndim
    | u32 dims[ndim] | float64 data

Round trips are bitwise lossless. Bad magic, unsupported version, and
truncation each raise their own exception type.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from PIL import Image

from .denoiser import DenoiserConfig, DenoiserParams
from .diffusion import make_linear_schedule
from .numerics import SeededRng

MAGIC = b"DSTU"
VERSION = 1


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


@dataclass
class DatasetSpec:
    """Where and how to load a training directory."""

    directory: str
    image_size: int
    channels: int = 3
    subsample: Optional[Tuple[int, int]] = None  # (count, seed)


def subsample_indices(n_total, count, seed):
    """First `count` entries of a seeded permutation of range(n_total),
    returned sorted. Prefixes nest: the count-10 selection is a subset of
    the count-100 selection for the same seed."""
    if count > n_total:
        raise ValueError(f"subsample: requested {count} of {n_total} files")
    perm = SeededRng(seed).child("subsample").permutation(n_total)
    return sorted(int(i) for i in perm[:count])


def load_png(path, image_size, channels=3):
    """Decode one PNG to a (C, S, S) float64 array in [-1, 1]."""
    mode = "RGB" if channels == 3 else "L"
    try:
        with Image.open(path) as img:
            img = img.convert(mode)
            if img.size != (image_size, image_size):
                img = img.resize((image_size, image_size), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.float64)
    except (OSError, SyntaxError) as exc:
        raise ValueError(f"could not decode image file {path}: {exc}") from exc
    if channels == 1:
        arr = arr[None, :, :]
    else:
        arr = arr.transpose(2, 0, 1)
    return arr / 127.5 - 1.0


def load_dataset(spec):
    """Load a directory of PNGs into one (N, C, S, S) batch."""
    directory = Path(spec.directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    files = sorted(p for p in directory.iterdir()
                   if p.is_file() and p.suffix.lower() == ".png")
    if not files:
        raise ValueError(f"no .png files in dataset directory {directory}")
    if spec.subsample is not None:
        count, seed = spec.subsample
        files = [files[i] for i in subsample_indices(len(files), count, seed)]
    return np.stack([load_png(p, spec.image_size, spec.channels) for p in files])


def to_uint8(img):
    """De-normalize a (C, S, S) array from [-1, 1] to uint8, clamped."""
    arr = np.clip((np.asarray(img, dtype=np.float64) + 1.0) * 127.5, 0.0, 255.0)
    return np.round(arr).astype(np.uint8)


def save_png(img, path):
    """Write a (C, S, S) [-1, 1] array (or (S, S) grayscale) as PNG."""
    arr = np.asarray(img)
    if arr.ndim == 2:
        data = to_uint8(arr[None])[0]
        Image.fromarray(data, mode="L").save(path)
        return
    data = to_uint8(arr)
    if data.shape[0] == 1:
        Image.fromarray(data[0], mode="L").save(path)
    else:
        Image.fromarray(data.transpose(1, 2, 0), mode="RGB").save(path)


def save_grid(images, path, rows=None):
    """Tile a (N, C, S, S) batch into one PNG; empty slots stay black."""
    images = np.asarray(images)
    n = images.shape[0]
    if rows is None:
        rows = max(1, int(np.floor(np.sqrt(n))))
    cols = (n + rows - 1) // rows
    c, s = images.shape[1], images.shape[2]
    canvas = np.full((c, rows * s, cols * s), -1.0)
    for i in range(n):
        r, col = divmod(i, cols)
        canvas[:, r * s:(r + 1) * s, col * s:(col + 1) * s] = images[i]
    save_png(canvas, path)


@dataclass
class Checkpoint:
    """Model weights plus the config snapshot needed to resume or sample."""

    config: dict
    params: DenoiserParams
    iteration: int
    version: int = VERSION

    def schedule(self):
        sch = self.config["schedule"]
        return make_linear_schedule(sch["steps"], sch["beta_start"], sch["beta_end"])


def make_config_snapshot(model_cfg, schedule, weights=None, seed=0):
    snap = {
        "model": model_cfg.to_dict(),
        "schedule": {
            "steps": schedule.T,
            "beta_start": schedule.beta_start,
            "beta_end": schedule.beta_end,
        },
        "seed": int(seed),
    }
    snap["weights"] = weights.to_dict() if weights is not None else None
    return snap


def save_checkpoint(ckpt, path):
    arrays = ckpt.params.arrays
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", ckpt.version)
    config = dict(ckpt.config)
    config["iteration"] = int(ckpt.iteration)
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    out += struct.pack("<Q", len(blob))
    out += blob
    out += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        encoded = name.encode("utf-8")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(
                f"checkpoint truncated: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported checkpoint version {version}")
    (blob_len,) = r.unpack("<Q")
    config = json.loads(r.take(blob_len).decode("utf-8"))
    (n_arrays,) = r.unpack("<I")
    arrays = {}
    for _ in range(n_arrays):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(count * 8), dtype="<f8").reshape(shape)
        arrays[name] = arr.astype(np.float64, copy=True)
    iteration = int(config.pop("iteration", 0))
    cfg = DenoiserConfig.from_dict(config["model"])
    params = DenoiserParams(cfg, arrays)
    return Checkpoint(config=config, params=params, iteration=iteration, version=version)
