"""Backend selection for the window-pair correspondence kernel.

A compiled Cython kernel is preferred when built; a pure-numpy route in
``objmap.alignment`` is the fallback. Set ``OBJMAP_PURE_PYTHON=1`` to force
the fallback even when the extension is available.
"""

from __future__ import annotations

import os

try:
    from . import _native
except ImportError:
    _native = None


def _env_forces_pure() -> bool:
    return os.environ.get("OBJMAP_PURE_PYTHON", "0") not in ("", "0")


def available() -> bool:
    """True when the compiled kernel was built and imported."""
    return _native is not None


def backend_name() -> str:
    """Name of the backend an 'auto' request would use."""
    return "python" if (_native is None or _env_forces_pure()) else "native"


def get_native(backend: str = "auto"):
    """Resolve a backend request to the compiled module, or None for pure."""
    if backend == "python":
        return None
    if backend == "native":
        if _native is None:
            raise RuntimeError("compiled kernel requested but the extension is not built")
        return _native
    if backend != "auto":
        raise ValueError(f"unknown backend {backend!r} (use auto, python, or native)")
    if _env_forces_pure():
        return None
    return _native
