"""Hot inner loops with a compiled core and a numpy fallback.

The Cython extension is used when it was built; otherwise the numpy versions
are selected at import. ``use_backend`` switches explicitly (benchmarks and
the cross-backend tests use it).
"""
import numpy as np

from ..errors import ShapeError
from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

_active = _ckernels if _ckernels is not None else _pykernels


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def backend() -> str:
    return "cython" if _active is _ckernels and _ckernels is not None else "python"


def use_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    _active = _BACKENDS[name]


def nearest_prototype(h: np.ndarray, protos: np.ndarray):
    h = np.ascontiguousarray(h, dtype=np.float64)
    protos = np.ascontiguousarray(protos, dtype=np.float64)
    if h.ndim != 2 or protos.ndim != 2 or h.shape[1] != protos.shape[1]:
        raise ShapeError(f"frames {h.shape} incompatible with prototypes {protos.shape}")
    if protos.shape[0] == 0:
        raise ShapeError("codebook is empty")
    return _active.nearest_prototype(h, protos)


def accumulate_assignments(h: np.ndarray, idx: np.ndarray, V: int):
    h = np.ascontiguousarray(h, dtype=np.float64)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if idx.shape != (h.shape[0],):
        raise ShapeError("one index per frame required")
    if idx.size and (idx.min() < 0 or idx.max() >= V):
        raise ShapeError("assignment index out of range")
    return _active.accumulate_assignments(h, idx, int(V))
