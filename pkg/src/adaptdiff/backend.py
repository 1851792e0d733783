"""Kernel backend selection.

The hot inner loops (the denoiser's 3x3 convolutions) exist twice: a
numba-jitted version and a pure-numpy im2col version. The active backend
is chosen once at import from the ADAPTDIFF_BACKEND environment variable:

    ADAPTDIFF_BACKEND=numba   force numba (error if unavailable)
    ADAPTDIFF_BACKEND=numpy   force the pure-numpy path
    unset / auto              numba when importable, else numpy

`set_backend()` switches at runtime; benchmarks/bench_backends.py uses it
to time both paths in one process. Either backend is fully deterministic;
they agree to rounding but not bit-for-bit, so the backend is part of a
run's reproducibility envelope.
"""

import os

from . import _kernels_numpy

_BACKENDS = {"numpy": _kernels_numpy}
_active_name = "numpy"
_active = _kernels_numpy


def _load_numba():
    if "numba" not in _BACKENDS:
        from . import _kernels_numba
        _BACKENDS["numba"] = _kernels_numba
    return _BACKENDS["numba"]


def set_backend(name):
    """Select the kernel backend ('numba' or 'numpy')."""
    global _active, _active_name
    if name == "numba":
        _active = _load_numba()
    elif name == "numpy":
        _active = _kernels_numpy
    else:
        raise ValueError(f"unknown backend {name!r}; expected 'numba' or 'numpy'")
    _active_name = name
    return _active_name


def backend_name():
    """Name of the backend currently serving the conv kernels."""
    return _active_name


def _init_from_env():
    choice = os.environ.get("ADAPTDIFF_BACKEND", "auto").lower()
    if choice == "numpy":
        set_backend("numpy")
    elif choice == "numba":
        set_backend("numba")
    elif choice == "auto" or choice == "":
        try:
            set_backend("numba")
        except ImportError:
            set_backend("numpy")
    else:
        raise ValueError(
            f"ADAPTDIFF_BACKEND={choice!r} not understood; use 'numba', 'numpy' or 'auto'"
        )


def conv3x3_forward(x, w, b, stride=1):
    return _active.conv3x3_forward(x, w, b, stride)


def conv3x3_backward_input(dout, w, x_shape, stride=1):
    return _active.conv3x3_backward_input(dout, w, tuple(x_shape), stride)


def conv3x3_backward_params(dout, x, stride=1):
    return _active.conv3x3_backward_params(dout, x, stride)


_init_from_env()
