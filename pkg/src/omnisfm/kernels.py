"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise the numpy
implementation is loaded. :func:`use_backend` switches at runtime, which the
benchmarks and the backend-equivalence tests rely on.
"""

from __future__ import annotations

import importlib

from . import _pykernels

_FUNCS = ("epipolar_residuals", "ba_linearize", "schur_reduce", "sample_bilinear_wrap")


def _load_compiled():
    try:
        return importlib.import_module("omnisfm._ckernels")
    except ImportError:
        return None


_compiled = _load_compiled()
_active = None


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _compiled is not None else [])


def use_backend(name: str) -> None:
    """Route kernel calls to ``"cython"`` or ``"python"``."""
    global _active
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        mod = _compiled
    elif name == "python":
        mod = _pykernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    _active = mod
    g = globals()
    for f in _FUNCS:
        g[f] = getattr(mod, f)


def backend() -> str:
    return _active.NAME


use_backend("cython" if _compiled is not None else "python")
