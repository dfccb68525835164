"""Kernel backend selection.

The compiled extension is preferred when importable; the NumPy fallback is
always available. Override with POLARFUSE_BACKEND=python|compiled.
"""

from __future__ import annotations

import os

from . import _slowcore

_choice = os.environ.get("POLARFUSE_BACKEND", "").strip().lower()

if _choice in ("", "compiled"):
    try:
        from . import _fastcore as _impl
    except ImportError:
        if _choice == "compiled":
            raise ImportError(
                "POLARFUSE_BACKEND=compiled but polarfuse._fastcore is not "
                "built; run `python setup.py build_ext --inplace`")
        _impl = _slowcore
elif _choice == "python":
    _impl = _slowcore
else:
    raise ValueError(f"unknown POLARFUSE_BACKEND {_choice!r}")


def active_backend() -> str:
    """Name of the kernel implementation in use."""
    return "compiled" if _impl.COMPILED else "python"


def get_backend(name: str | None = None):
    """Return a kernel module by name (None selects the active one)."""
    if name is None:
        return _impl
    if name == "python":
        return _slowcore
    if name == "compiled":
        from . import _fastcore
        return _fastcore
    raise ValueError(f"unknown backend {name!r}")


preintegrate = _impl.preintegrate
imu_linearize = _impl.imu_linearize
relpose_linearize = _impl.relpose_linearize
