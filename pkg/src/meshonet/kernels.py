"""Selects the compiled SOR sweep when available, else the pure-Python one.

Set ``MESHONET_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _sor_py

try:
    if os.environ.get("MESHONET_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python kernels requested")
    from . import _sor as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _sor_py
    BACKEND = "python"

sor_sweep = _impl.sor_sweep
python_sor_sweep = _sor_py.sor_sweep


def compiled_sor_sweep():
    """The compiled sweep, or None if the extension is not built."""
    try:
        from . import _sor
    except ImportError:
        return None
    return _sor.sor_sweep
