"""Dense linear algebra helpers, seeded RNG streams and a gradient oracle.

Matrices are plain ``float64`` numpy arrays in C (row-major) order, frames
as rows. Random streams use numpy's Philox counter-based generator keyed by a
``SeedSequence`` so that a (seed, component, index) triple always yields the
same draws.
"""
from __future__ import annotations

import zlib
from typing import Callable

import numpy as np

from .errors import EmptyInputError, OracleError, ShapeError, NumericError


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a 2-D C-contiguous float64 array or raise ShapeError."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def check_finite(a: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains non-finite values")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return check_finite(a @ b, "matmul result")


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


class RngStream:
    """Seeded random stream with a draw counter.

    ``position`` counts values handed out, not raw generator words. Child
    streams are derived from ``(seed, component name, index)`` and never share
    state with the parent, so they can be consumed in any order or in parallel.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self._key = tuple(_key)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self._key)
        self._gen = np.random.Generator(np.random.Philox(ss))
        self.position = 0

    def child(self, name: str, index: int = 0) -> "RngStream":
        return RngStream(self.seed, self._key + (_name_key(name), int(index)))

    def gaussian(self, n: int) -> np.ndarray:
        if n < 1:
            raise EmptyInputError("gaussian() needs n >= 1")
        out = self._gen.standard_normal(n)
        self.position += n
        return out

    def normal_matrix(self, rows: int, cols: int, scale: float = 1.0) -> np.ndarray:
        return scale * self.gaussian(rows * cols).reshape(rows, cols)

    def integers(self, high: int, n: int) -> np.ndarray:
        """``n`` draws uniform on ``[0, high)``."""
        if n < 1:
            raise EmptyInputError("integers() needs n >= 1")
        out = self._gen.integers(0, high, size=n)
        self.position += n
        return out

    def uniform(self, n: int) -> np.ndarray:
        if n < 1:
            raise EmptyInputError("uniform() needs n >= 1")
        out = self._gen.random(n)
        self.position += n
        return out

    def permutation(self, n: int) -> np.ndarray:
        out = self._gen.permutation(n)
        self.position += n
        return out

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        out = self._gen.choice(n, size=k, replace=False)
        self.position += k
        return out

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self._key}, position={self.position})"


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleError(f"f is not finite at probe coordinate {i}")
        g[i] = (fp - fm) / (2.0 * eps)
    return grad
