"""Hot geometry kernels with two interchangeable backends.

The compiled extension (``_geomc``, Cython) is used when it imported cleanly;
otherwise the numpy implementation serves. Set ``SHAPEKIT_PURE_PYTHON=1`` to
force the numpy backend regardless. ``BACKEND`` names the active choice.
"""

from __future__ import annotations

import os

from . import _geom_np

if os.environ.get("SHAPEKIT_PURE_PYTHON"):
    _impl = _geom_np
    BACKEND = "numpy"
else:
    try:
        from . import _geomc as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _geom_np
        BACKEND = "numpy"

widths = _impl.widths
widths_backward = _impl.widths_backward


def get_backend(name: str):
    """Return a specific backend module ("numpy" or "compiled") for comparison runs."""
    if name == "numpy":
        return _geom_np
    if name == "compiled":
        from . import _geomc

        return _geomc
    raise ValueError(f"unknown backend {name!r}")


def available_backends() -> list[str]:
    out = ["numpy"]
    try:
        from . import _geomc  # noqa: F401

        out.append("compiled")
    except ImportError:
        pass
    return out
