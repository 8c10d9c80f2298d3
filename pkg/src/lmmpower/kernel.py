"""Backend selection for the profiled-deviance kernel.

The compiled extension is used when it imports; otherwise the pure-Python
twin.  Set ``LMMPOWER_BACKEND=python`` to force the fallback.
"""
import os

from . import _pykernel

BACKEND = "python"
_impl = _pykernel

if os.environ.get("LMMPOWER_BACKEND", "").lower() != "python":
    try:
        from . import _ckernel as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass

deviance = _impl.deviance
solution = _impl.solution
nelder_mead = _impl.nelder_mead


def backends():
    """Available kernel modules keyed by name."""
    out = {"python": _pykernel}
    try:
        from . import _ckernel
        out["cython"] = _ckernel
    except ImportError:
        pass
    return out
