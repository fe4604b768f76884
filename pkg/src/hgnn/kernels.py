"""Kernel backend selection.

Prefers the compiled extension, falls back to the numpy twin. Override with
HGNN_KERNELS=python|compiled (``compiled`` raises if the extension is not
built). Both backends share accumulation order and tie rules, so a model
trained under one backend reproduces bit-identically under the other.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_forced = os.environ.get("HGNN_KERNELS", "").strip().lower()
if _forced == "python":
    _impl = _kernels_py
elif _forced == "compiled":
    if _compiled is None:
        raise ImportError(
            "HGNN_KERNELS=compiled but the hgnn._kernels extension is not "
            "built; run `python setup.py build_ext --inplace`"
        )
    _impl = _compiled
elif _forced:
    raise ValueError(f"HGNN_KERNELS must be 'python' or 'compiled', got {_forced!r}")
else:
    _impl = _compiled if _compiled is not None else _kernels_py

BACKEND = "compiled" if (_compiled is not None and _impl is _compiled) else "python"

edge_scatter_add = _impl.edge_scatter_add
scatter_add_rows = _impl.scatter_add_rows
edge_max = _impl.edge_max
edge_max_backward = _impl.edge_max_backward


def backend_name() -> str:
    """Active kernel backend: 'compiled' or 'python'."""
    return BACKEND


def get_backend(name: str):
    """Fetch a specific backend module (for benchmarks and parity tests)."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernel backend is not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    return ["python", "compiled"] if _compiled is not None else ["python"]
