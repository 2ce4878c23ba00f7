"""Hot-kernel dispatch.

The compiled extension :mod:`ranklsd._kernels` is used when it imports;
otherwise the numpy fallback in :mod:`ranklsd._kernels_py` is used. Setting
``RANKLSD_PURE_PYTHON=1`` forces the fallback.
"""

import logging
import os

from . import _kernels_py

logger = logging.getLogger(__name__)

_NAMES = (
    "bilinear_forward", "bilinear_backward", "bilinear_heads_forward", "bilinear_heads_backward",
    "raster_edges", "nms_greedy", "match_greedy",
)

_compiled = None
if os.environ.get("RANKLSD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on build
        logger.debug("compiled kernels unavailable; using numpy fallback")
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py

bilinear_forward = _impl.bilinear_forward
bilinear_backward = _impl.bilinear_backward
bilinear_heads_forward = _impl.bilinear_heads_forward
bilinear_heads_backward = _impl.bilinear_heads_backward
raster_edges = _impl.raster_edges
nms_greedy = _impl.nms_greedy
match_greedy = _impl.match_greedy


def implementations():
    """Map backend name to module, for benchmarks and equivalence tests."""
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["cython"] = _compiled
    return out
