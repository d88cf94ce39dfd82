"""Fused numeric kernels with a compiled core and a NumPy fallback.

The compiled extension ``_ckernels`` is used when it was built and importable;
otherwise the NumPy versions in ``_pykernels`` are used. Setting the
environment variable ``ITPNET_PURE_PYTHON=1`` forces the fallback.

Both backends expose the same functions with the same argument and return
layouts, so :func:`use_backend` can swap them at runtime (tests and the
benchmark do this).
"""

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

NAMES = (
    "layer_norm_forward",
    "layer_norm_backward",
    "softmax_forward",
    "softmax_backward",
    "lstm_forward",
    "lstm_backward",
    "smooth_l1_forward",
    "smooth_l1_backward",
    "gelu_forward",
    "gelu_backward",
    "displacement_errors",
)

BACKEND = None


def available_backends():
    return ["python"] + (["cython"] if _ckernels is not None else [])


def get_module(name):
    if name == "cython":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        return _ckernels
    if name == "python":
        return _pykernels
    raise ValueError(f"unknown kernel backend {name!r}")


def use_backend(name):
    """Bind the module-level kernel functions to backend ``name``."""
    global BACKEND
    mod = get_module(name)
    g = globals()
    for fn in NAMES:
        g[fn] = getattr(mod, fn)
    BACKEND = name


def _default_backend():
    if os.environ.get("ITPNET_PURE_PYTHON", "") not in ("", "0") or _ckernels is None:
        return "python"
    return "cython"


use_backend(_default_backend())
