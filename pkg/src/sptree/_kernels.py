"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise, or when
``SPTREE_BACKEND=python`` is set, the pure-Python versions are used.
"""
import os

from . import _kernels_py
from ._kernels_py import LINKAGE_CENTROID, LINKAGE_WARD

_compiled = None
if os.environ.get("SPTREE_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py
BACKEND = "cython" if _compiled is not None else "python"

nn_chain = _impl.nn_chain
segment_sorted_edges = _impl.segment_sorted_edges


def backends() -> dict:
    """Every importable backend, keyed by name."""
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["cython"] = _compiled
    else:
        try:
            from . import _ckernels
            out["cython"] = _ckernels
        except ImportError:
            pass
    return out


__all__ = ["BACKEND", "LINKAGE_CENTROID", "LINKAGE_WARD", "backends", "nn_chain", "segment_sorted_edges"]
