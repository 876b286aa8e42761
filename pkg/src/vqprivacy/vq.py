"""Vector quantization of bottleneck frames against an EMA-maintained codebook.

Bottleneck sequences are ``(J, D)`` float64 arrays, one frame per row.
Operations that modify a codebook return a new :class:`Codebook`; the input is
left untouched so callers can snapshot and compare.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (
    ConfigError,
    EmptyInputError,
    FormatError,
    InsufficientSamplesError,
    ShapeError,
)
from .numerics import RngStream, as_matrix

CODEBOOK_FORMAT_VERSION = 1


@dataclass
class Codebook:
    prototypes: np.ndarray
    ema_counts: np.ndarray
    ema_sums: np.ndarray
    decay: float = 0.99
    smoothing: float = 1e-5
    # batches since each prototype was last selected
    unused_steps: np.ndarray = field(default=None)

    def __post_init__(self):
        self.prototypes = as_matrix(self.prototypes, "prototypes")
        V, D = self.prototypes.shape
        if V < 1 or D < 1:
            raise ShapeError("codebook needs V >= 1 and D >= 1")
        self.ema_counts = np.asarray(self.ema_counts, dtype=np.float64).reshape(V)
        self.ema_sums = as_matrix(self.ema_sums, "ema_sums")
        if self.ema_sums.shape != (V, D):
            raise ShapeError("ema_sums must match prototypes")
        if self.unused_steps is None:
            self.unused_steps = np.zeros(V, dtype=np.int64)
        self.unused_steps = np.asarray(self.unused_steps, dtype=np.int64).reshape(V)
        check_decay(self.decay)
        if not self.smoothing > 0:
            raise ConfigError("EMA smoothing must be > 0")

    @property
    def V(self) -> int:
        return self.prototypes.shape[0]

    @property
    def D(self) -> int:
        return self.prototypes.shape[1]

    def copy(self) -> "Codebook":
        return replace(
            self,
            prototypes=self.prototypes.copy(),
            ema_counts=self.ema_counts.copy(),
            ema_sums=self.ema_sums.copy(),
            unused_steps=self.unused_steps.copy(),
        )


@dataclass
class QuantizationResult:
    indices: np.ndarray
    quantized: np.ndarray
    codebook_loss: float
    commitment_loss: float


def check_decay(decay: float) -> None:
    if not 0.0 <= decay <= 1.0:
        raise ConfigError(f"EMA decay must lie in [0, 1], got {decay}")


def _bottleneck(h, D: int | None = None) -> np.ndarray:
    h = as_matrix(h, "bottleneck")
    if h.shape[0] == 0:
        raise EmptyInputError("bottleneck sequence has no frames")
    if D is not None and h.shape[1] != D:
        raise ShapeError(f"bottleneck dim {h.shape[1]} != codebook dim {D}")
    return h


def _pair(h, q) -> tuple[np.ndarray, np.ndarray]:
    h = as_matrix(h, "h")
    q = as_matrix(q, "q")
    if h.shape != q.shape:
        raise ShapeError(f"h {h.shape} and q {q.shape} differ in shape")
    if h.shape[0] == 0:
        raise EmptyInputError("no frames")
    return h, q


def quantize(h, cb: Codebook) -> QuantizationResult:
    """Replace every frame by its nearest prototype (squared Euclidean)."""
    h = _bottleneck(h, cb.D)
    idx, dist = kernels.nearest_prototype(h, cb.prototypes)
    q = cb.prototypes[idx]
    loss = float(dist.sum() / h.shape[0])
    return QuantizationResult(indices=idx, quantized=q, codebook_loss=loss, commitment_loss=loss)


def _mean_sqdist(h: np.ndarray, q: np.ndarray) -> float:
    d = h - q
    return float(np.einsum("ij,ij->", d, d) / h.shape[0])


def codebook_loss(h, q) -> float:
    """Frame-averaged ``||sg[h] - q||^2``; its gradient reaches prototypes only."""
    h, q = _pair(h, q)
    return _mean_sqdist(h, q)


def codebook_loss_grad(h, indices, cb: Codebook) -> np.ndarray:
    """Gradient of :func:`codebook_loss` with respect to every prototype."""
    h = _bottleneck(h, cb.D)
    counts, sums = kernels.accumulate_assignments(h, indices, cb.V)
    return (2.0 / h.shape[0]) * (counts[:, None] * cb.prototypes - sums)


def commitment_loss(h, q) -> float:
    """Frame-averaged ``||h - sg[q]||^2``; same value as the codebook loss."""
    h, q = _pair(h, q)
    return _mean_sqdist(h, q)


def commitment_loss_grad(h, q) -> np.ndarray:
    h, q = _pair(h, q)
    return (2.0 / h.shape[0]) * (h - q)


def ste_backward(grad_wrt_q: np.ndarray) -> np.ndarray:
    # straight-through: d/dh is taken to equal d/dq
    return grad_wrt_q


def smoothed_counts(counts: np.ndarray, eps: float) -> np.ndarray:
    total = counts.sum()
    return (counts + eps) / (total + counts.size * eps) * total


def ema_update(cb: Codebook, h, indices) -> Codebook:
    """One exponential-moving-average step of counts, sums and prototypes."""
    check_decay(cb.decay)
    h = _bottleneck(h, cb.D)
    out = cb.copy()
    if cb.decay == 1.0:
        return out
    n, s = kernels.accumulate_assignments(h, indices, cb.V)
    g = cb.decay
    out.ema_counts = g * cb.ema_counts + (1.0 - g) * n
    out.ema_sums = g * cb.ema_sums + (1.0 - g) * s
    out.prototypes = out.ema_sums / smoothed_counts(out.ema_counts, cb.smoothing)[:, None]
    return out


def gradient_prototype_step(cb: Codebook, h, indices, learning_rate: float) -> Codebook:
    """SGD on the codebook loss; only used when EMA is switched off."""
    out = cb.copy()
    out.prototypes = cb.prototypes - learning_rate * codebook_loss_grad(h, indices, cb)
    out.ema_sums = out.prototypes * out.ema_counts[:, None]
    return out


def init_codebook(samples, V: int, rng: RngStream, decay: float = 0.99,
                  smoothing: float = 1e-5) -> Codebook:
    """Pick ``V`` distinct sample rows as the initial prototypes."""
    samples = as_matrix(samples, "samples")
    N = samples.shape[0]
    if V < 1:
        raise ConfigError("codebook size must be >= 1")
    if N < V:
        raise InsufficientSamplesError(f"need at least {V} samples to seed the codebook, got {N}")
    rows = rng.choice_without_replacement(N, V)
    protos = samples[rows].copy()
    return Codebook(
        prototypes=protos,
        ema_counts=np.ones(V),
        ema_sums=protos.copy(),
        decay=decay,
        smoothing=smoothing,
    )


def record_usage(cb: Codebook, indices) -> Codebook:
    """Advance the per-prototype staleness counters after one batch."""
    out = cb.copy()
    used = np.zeros(cb.V, dtype=bool)
    used[np.asarray(indices, dtype=np.int64)] = True
    out.unused_steps = np.where(used, 0, cb.unused_steps + 1)
    return out


def restart_dead_prototypes(cb: Codebook, h, rng: RngStream, stale_threshold: int) -> Codebook:
    """Re-seed prototypes unused for ``stale_threshold`` batches from frames of ``h``."""
    if stale_threshold < 1:
        raise ConfigError("stale_threshold must be >= 1")
    h = _bottleneck(h, cb.D)
    dead = np.flatnonzero(cb.unused_steps >= stale_threshold)
    out = cb.copy()
    if dead.size == 0:
        return out
    # distinct frames, so each restarted prototype wins at least its own frame
    J = h.shape[0]
    picks = rng.choice_without_replacement(J, min(dead.size, J))
    picks = np.resize(picks, dead.size)
    for i, j in zip(dead, picks):
        out.prototypes[i] = h[j]
        out.ema_sums[i] = h[j]
        out.ema_counts[i] = 1.0
        out.unused_steps[i] = 0
    return out


def codebook_perplexity(indices, V: int) -> float:
    """``exp`` of the entropy of prototype usage, in ``[1, V]``."""
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    if indices.size == 0:
        raise EmptyInputError("no indices")
    p = np.bincount(indices, minlength=V) / indices.size
    p = p[p > 0]
    return float(np.exp(-np.sum(p * np.log(p))))


def codebook_arrays(cb: Codebook, prefix: str = "") -> dict[str, np.ndarray]:
    header = {"format_version": CODEBOOK_FORMAT_VERSION, "V": cb.V, "D": cb.D,
              "decay": cb.decay, "smoothing": cb.smoothing}
    arrays = {"header": np.array(json.dumps(header)), "prototypes": cb.prototypes,
              "ema_counts": cb.ema_counts, "ema_sums": cb.ema_sums,
              "unused_steps": cb.unused_steps}
    return {prefix + k: v for k, v in arrays.items()}


def save_codebook(cb: Codebook, path) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, **codebook_arrays(cb))


def load_codebook(path) -> Codebook:
    with np.load(Path(path), allow_pickle=False) as z:
        return codebook_from_arrays(z)


def codebook_from_arrays(z, prefix: str = "") -> Codebook:
    header = json.loads(str(z[prefix + "header"]))
    if header.get("format_version") != CODEBOOK_FORMAT_VERSION:
        raise FormatError(f"unsupported codebook format {header.get('format_version')}")
    cb = Codebook(
        prototypes=z[prefix + "prototypes"],
        ema_counts=z[prefix + "ema_counts"],
        ema_sums=z[prefix + "ema_sums"],
        decay=header["decay"],
        smoothing=header["smoothing"],
        unused_steps=z[prefix + "unused_steps"],
    )
    if (cb.V, cb.D) != (header["V"], header["D"]):
        raise FormatError("codebook header does not match stored arrays")
    return cb
