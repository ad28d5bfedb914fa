"""Kernel dispatch: compiled Cython core when available, pure fallback otherwise.

Set MACD_PURE_PYTHON=1 to force the fallback (used by the benchmark and
the cross-implementation tests). Both paths are bit-identical.
"""

import os

from . import _pyk

_FORCE_PURE = os.environ.get("MACD_PURE_PYTHON", "").lower() in ("1", "true", "yes")

if not _FORCE_PURE:
    try:
        from . import _ckern as _impl
        IMPL_NAME = "compiled"
    except ImportError:
        _impl = _pyk
        IMPL_NAME = "pure"
else:
    _impl = _pyk
    IMPL_NAME = "pure"

soft_box_mask = _impl.soft_box_mask
pool_sums = _impl.pool_sums
union_max = _impl.union_max
union_confnorm = _impl.union_confnorm
union_avg = _impl.union_avg
normalize_overlaps_px = _impl.normalize_overlaps_px
compose_z = _impl.compose_z
occlusion_blend = _impl.occlusion_blend
additive_clamp = _impl.additive_clamp

# counts have no float semantics; the pure helper serves both paths
pool_counts = _pyk.pool_counts
pool_bounds = _pyk.pool_bounds
