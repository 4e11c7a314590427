"""Element assembly kernels.

The compiled extension is used when it imports; otherwise the numpy fallback is
selected. Set ``GQOED_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("GQOED_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _assembly as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback

diffusion_reaction_data = _impl.diffusion_reaction_data
advection_data = _impl.advection_data
element_gradients = _impl.element_gradients

__all__ = [
    "BACKEND",
    "diffusion_reaction_data",
    "advection_data",
    "element_gradients",
]
