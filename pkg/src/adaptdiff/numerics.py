"""Seeded randomness and the finite-difference gradient oracle.

Everything downstream runs in float64. Randomness goes through SeededRng,
a thin wrapper over numpy's Philox counter-based generator (Salmon et al.,
"Parallel random numbers: as easy as 1, 2, 3"): a given (seed, child-label
path) pair produces the same stream on every platform and in every
process, which is what makes whole training runs bitwise reproducible.
"""

import hashlib

import numpy as np

_KEY_DOMAIN = b"adaptdiff.rng.v1"


def _philox_key(seed, path):
    h = hashlib.sha256()
    h.update(_KEY_DOMAIN)
    h.update(int(seed).to_bytes(8, "little", signed=True))
    for label in path:
        h.update(b"\x00")
        h.update(str(label).encode("utf-8"))
    return np.frombuffer(h.digest()[:16], dtype=np.uint64)


class SeededRng:
    """Deterministic random stream with derivable child streams.

    A stream is identified by (seed, path). `child(label)` derives an
    independent stream; children with different labels never collide, so
    adding a new consumer does not shift anyone else's draws. A stream is
    single-consumer: share the object between threads and determinism is
    gone.
    """

    def __init__(self, seed, _path=()):
        self.seed = int(seed)
        self.path = tuple(_path)
        self.draws = 0
        self._gen = np.random.Generator(np.random.Philox(key=_philox_key(seed, self.path)))

    def child(self, label):
        """Independent stream derived from (seed, path + label)."""
        return SeededRng(self.seed, self.path + (str(label),))

    def normal(self, shape=()):
        self.draws += 1
        return self._gen.standard_normal(shape, dtype=np.float64)

    def uniform(self, shape=()):
        self.draws += 1
        return self._gen.random(shape, dtype=np.float64)

    def integers(self, low, high, shape=()):
        self.draws += 1
        return self._gen.integers(low, high, size=shape, dtype=np.int64)

    def permutation(self, n):
        self.draws += 1
        return self._gen.permutation(n)

    def __repr__(self):
        path = "/".join(self.path)
        return f"SeededRng(seed={self.seed}, path={path!r}, draws={self.draws})"


def gaussian_noise(rng, shape):
    """I.i.d. standard normal array of the given shape, float64."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ValueError("gaussian_noise: shape must be nonempty")
    return rng.normal(shape)


def check_same_shape(*arrays, context=""):
    """Raise unless all arrays share one shape. No silent broadcasting."""
    first = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != first:
            where = f" in {context}" if context else ""
            raise ValueError(f"shape mismatch{where}: {first} vs {a.shape}")
    return first


def _param_arrays(params):
    # accepts DenoiserParams (has .arrays) or any plain mapping name -> ndarray
    return getattr(params, "arrays", params)


def finite_difference_grad(loss_fn, params, epsilon=1e-5, max_coords=None, rng=None):
    """Central-difference gradient estimate of ``loss_fn(params)``.

    Returns {(name, flat_index): d loss / d coordinate}. When max_coords is
    given, a seeded random subset of coordinates is probed (rng required),
    which keeps the oracle affordable on multi-thousand-parameter models.
    Perturbations happen in place and are undone, so ``params`` is left
    bitwise unchanged. A non-finite loss raises and names the coordinate
    being probed.
    """
    if epsilon <= 0:
        raise ValueError("finite_difference_grad: epsilon must be > 0")
    arrays = _param_arrays(params)
    coords = [(name, idx) for name, arr in arrays.items() for idx in range(arr.size)]
    if max_coords is not None and max_coords < len(coords):
        if rng is None:
            raise ValueError("finite_difference_grad: subsampling needs a seeded rng")
        pick = rng.permutation(len(coords))[:max_coords]
        coords = [coords[i] for i in sorted(pick)]

    grad = {}
    for name, idx in coords:
        flat = arrays[name].flat
        orig = flat[idx]
        flat[idx] = orig + epsilon
        f_plus = float(loss_fn(params))
        flat[idx] = orig - epsilon
        f_minus = float(loss_fn(params))
        flat[idx] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(
                f"finite_difference_grad: non-finite loss at coordinate {name}[{idx}]"
            )
        grad[(name, idx)] = (f_plus - f_minus) / (2.0 * epsilon)
    return grad


def max_relative_error(analytic, fd, floor_frac=1e-3):
    """Worst relative disagreement between an analytic gradient dict
    (name -> array) and a finite-difference dict from
    ``finite_difference_grad``.

    Denominator convention: |a - b| / max(|a|, |b|, floor_frac * gmax),
    where gmax is the largest compared magnitude. The floor keeps the
    comparison meaningful on coordinates whose true gradient sits below
    the oracle's own roundoff noise (~1e-11 of the loss scale at the
    standard epsilon); a wrong formula still shows up through every
    non-negligible coordinate."""
    pairs = []
    for (name, idx), fd_val in fd.items():
        an_val = float(np.asarray(analytic[name]).reshape(-1)[idx])
        pairs.append((an_val, fd_val))
    if not pairs:
        return 0.0
    gmax = max(max(abs(a), abs(b)) for a, b in pairs)
    if gmax == 0.0:
        return max(abs(a - b) for a, b in pairs)
    worst = 0.0
    for a, b in pairs:
        denom = max(abs(a), abs(b), floor_frac * gmax)
        worst = max(worst, abs(a - b) / denom)
    return worst
