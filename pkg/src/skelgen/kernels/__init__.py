"""Hot numeric kernels with a compiled backend and a pure-numpy fallback.

Selection happens once at import, steered by SKELGEN_KERNELS:
  auto     (default) use the compiled extension when importable
  compiled require it, raise otherwise
  python   force the numpy fallback

`backend()` reports which one is live; pipelines record it in run manifests.
"""

import importlib
import os

import numpy as np

from . import _pure

_MODE = os.environ.get("SKELGEN_KERNELS", "auto")
if _MODE not in ("auto", "compiled", "python"):
    raise RuntimeError(f"SKELGEN_KERNELS must be auto|compiled|python, got {_MODE!r}")

_fast = None
if _MODE in ("auto", "compiled"):
    try:
        _fast = importlib.import_module(__name__ + "._fast")
    except ImportError:
        if _MODE == "compiled":
            raise RuntimeError(
                "SKELGEN_KERNELS=compiled but the extension is not built; "
                "reinstall without SKELGEN_SKIP_EXT or use SKELGEN_KERNELS=python"
            ) from None

_BACKEND = "compiled" if _fast is not None else "python"


def backend() -> str:
    return _BACKEND


def _c2d(arr) -> np.ndarray:
    a = np.ascontiguousarray(arr, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2D array, got shape {a.shape}")
    return a


if _fast is None:
    nn_dist = _pure.nn_dist
    point_seg_dist = _pure.point_seg_dist
    masked_softmax = _pure.masked_softmax
else:
    def nn_dist(query, ref):
        q, r = _c2d(query), _c2d(ref)
        if q.shape[0] == 0:
            return np.zeros(0, dtype=np.float64)
        if r.shape[0] == 0:
            raise ValueError("reference set is empty")
        if q.shape[1] != r.shape[1]:
            raise ValueError("query and ref dimensionality differ")
        return _fast.nn_dist(q, r)

    def point_seg_dist(points, seg_a, seg_b):
        p, a, b = _c2d(points), _c2d(seg_a), _c2d(seg_b)
        if p.shape[0] == 0:
            return np.zeros(0, dtype=np.float64)
        if a.shape[0] == 0 or a.shape != b.shape:
            raise ValueError("segment arrays must be non-empty and congruent")
        if p.shape[1] != a.shape[1]:
            raise ValueError("point and segment dimensionality differ")
        return _fast.point_seg_dist(p, a, b)

    def masked_softmax(scores, mask):
        s = np.asarray(scores, dtype=np.float64)
        m = np.broadcast_to(np.asarray(mask, dtype=bool), s.shape)
        flat_s = np.ascontiguousarray(s.reshape(-1, s.shape[-1]))
        flat_m = np.ascontiguousarray(m.reshape(-1, s.shape[-1]), dtype=np.uint8)
        return _fast.masked_softmax(flat_s, flat_m).reshape(s.shape)

    nn_dist.__doc__ = _pure.nn_dist.__doc__
    point_seg_dist.__doc__ = _pure.point_seg_dist.__doc__
    masked_softmax.__doc__ = _pure.masked_softmax.__doc__
