"""Selects the quadrature backend: compiled core or pure-numpy fallback.

The compiled extension ``bbe._kernel_cython`` is preferred when it
imported cleanly; set ``BBE_BACKEND=numpy`` or ``BBE_BACKEND=cython``
to force a choice (forcing cython raises if the extension is missing).
"""

from __future__ import annotations

import os
from types import SimpleNamespace

from . import _kernel_numpy

__all__ = ["get_backend", "available_backends"]

_BACKENDS: dict[str, SimpleNamespace] = {
    "numpy": SimpleNamespace(
        quadrature_geometry=_kernel_numpy.quadrature_geometry,
        reduce_kernel=_kernel_numpy.reduce_kernel,
        BACKEND_NAME="numpy",
    )
}

try:
    from . import _kernel_cython

    _BACKENDS["cython"] = SimpleNamespace(
        quadrature_geometry=_kernel_cython.quadrature_geometry,
        reduce_kernel=_kernel_cython.reduce_kernel,
        BACKEND_NAME="cython",
    )
except ImportError:
    pass


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def get_backend(name: str | None = None) -> SimpleNamespace:
    """Return the requested backend, or the default selection.

    Default order: $BBE_BACKEND if set, else the compiled core when
    present, else numpy.
    """
    if name is None:
        name = os.environ.get("BBE_BACKEND", "")
        if not name:
            name = "cython" if "cython" in _BACKENDS else "numpy"
    if name not in _BACKENDS:
        raise ImportError(
            f"backend {name!r} unavailable; have {available_backends()}"
        )
    return _BACKENDS[name]
