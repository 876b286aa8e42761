"""Small temporal encoder with a bottleneck tap and a content head.

Each hidden layer splices ``context`` frames on each side (edges are
replicate-padded), applies an affine map and a ReLU. Frames are subsampled by
striding after layer ``subsample_after``. A linear layer produces the
``bottleneck_dim``-dimensional bottleneck, and a linear head maps (quantized)
bottleneck frames to content-class logits.

Gradients are written out by hand; ``tests/test_encoder.py`` checks them
against central differences.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CacheError, ConfigError, FormatError, ShapeError, TooShortInputError
from .numerics import RngStream
from .vq import ste_backward

PARAMS_FORMAT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = 24
    hidden_dims: tuple[int, ...] = (64, 64, 64)
    bottleneck_dim: int = 16
    context: int = 1
    subsample_factor: int = 3
    num_content_classes: int = 20
    subsample_after: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        if not self.hidden_dims:
            raise ConfigError("encoder needs at least one hidden layer")
        dims = (self.input_dim, self.bottleneck_dim, self.num_content_classes) + self.hidden_dims
        if min(dims) < 1:
            raise ConfigError("all encoder dimensions must be >= 1")
        if self.subsample_factor < 1:
            raise ConfigError("subsample_factor must be >= 1")
        if self.context < 0:
            raise ConfigError("context must be >= 0")
        if not 1 <= self.subsample_after <= len(self.hidden_dims):
            # fewer layers than the default tap point: subsample after the last one
            object.__setattr__(self, "subsample_after", len(self.hidden_dims))

    @property
    def min_frames(self) -> int:
        return 2 * self.context + 1

    def output_length(self, T: int) -> int:
        return math.ceil(T / self.subsample_factor)


@dataclass
class EncoderParams:
    """Weights keyed by name: ``hidden.<l>.W``, ``hidden.<l>.b``, ``bottleneck.W``, ..."""

    arrays: dict[str, np.ndarray]
    # bumped on every in-place update so stale caches can be detected
    version: int = 0

    def copy(self) -> "EncoderParams":
        return EncoderParams({k: v.copy() for k, v in self.arrays.items()}, self.version)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self) -> list[str]:
        return list(self.arrays)

    def apply_update(self, grads: dict[str, np.ndarray], learning_rate: float) -> None:
        for k, g in grads.items():
            self.arrays[k] -= learning_rate * g
        self.version += 1

    def equals(self, other: "EncoderParams") -> bool:
        return self.arrays.keys() == other.arrays.keys() and all(
            np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items()
        )


@dataclass
class LayerCache:
    spliced: list[np.ndarray] = field(default_factory=list)
    pre_act: list[np.ndarray] = field(default_factory=list)
    bottleneck_input: np.ndarray | None = None
    bottleneck: np.ndarray | None = None
    params_id: int = 0
    params_version: int = 0
    cfg: EncoderConfig | None = None


def init_params(cfg: EncoderConfig, rng: RngStream) -> EncoderParams:
    """He-normal weights for the ReLU layers, zero biases."""
    arrays = {}
    fan = cfg.input_dim
    width = 2 * cfg.context + 1
    for l, d in enumerate(cfg.hidden_dims):
        fan_in = fan * width
        arrays[f"hidden.{l}.W"] = rng.normal_matrix(fan_in, d, math.sqrt(2.0 / fan_in))
        arrays[f"hidden.{l}.b"] = np.zeros(d)
        fan = d
    arrays["bottleneck.W"] = rng.normal_matrix(fan, cfg.bottleneck_dim, math.sqrt(1.0 / fan))
    arrays["bottleneck.b"] = np.zeros(cfg.bottleneck_dim)
    D, P = cfg.bottleneck_dim, cfg.num_content_classes
    arrays["head.W"] = rng.normal_matrix(D, P, math.sqrt(1.0 / D))
    arrays["head.b"] = np.zeros(P)
    return EncoderParams(arrays)


def zero_params(cfg: EncoderConfig) -> EncoderParams:
    p = init_params(cfg, RngStream(0))
    return EncoderParams({k: np.zeros_like(v) for k, v in p.arrays.items()})


def _splice_index(T: int, context: int) -> np.ndarray:
    offsets = np.arange(-context, context + 1)
    return np.clip(np.arange(T)[:, None] + offsets[None, :], 0, T - 1)


def splice(x: np.ndarray, context: int) -> np.ndarray:
    """Stack each frame with its ``context`` neighbours on both sides.

    ``x`` is ``(T, d)`` or a batch ``(B, T, d)``; time is the second-to-last axis.
    """
    T, d = x.shape[-2:]
    out = x[..., _splice_index(T, context), :]
    return out.reshape(x.shape[:-2] + (T, (2 * context + 1) * d))


def splice_backward(grad: np.ndarray, context: int, d: int) -> np.ndarray:
    T = grad.shape[-2]
    out = np.zeros(grad.shape[:-1] + (d,))
    for k, s in enumerate(range(-context, context + 1)):
        g = grad[..., k * d:(k + 1) * d]
        lo, hi = min(T, max(0, -s)), max(0, min(T, T - s))
        if lo < hi:
            out[..., lo + s:hi + s, :] += g[..., lo:hi, :]
        # clipped positions map onto the replicated edge frames
        if lo > 0:
            out[..., 0, :] += g[..., :lo, :].sum(axis=-2)
        if hi < T:
            out[..., T - 1, :] += g[..., hi:, :].sum(axis=-2)
    return out


def _affine(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    # one GEMM over all frames of all sequences
    return (x.reshape(-1, x.shape[-1]) @ W + b).reshape(x.shape[:-1] + (W.shape[1],))


def _outer_sum(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])


def encode(frames, params: EncoderParams, cfg: EncoderConfig):
    """Run the encoder on a ``(T, input_dim)`` sequence.

    Returns the ``(ceil(T / subsample_factor), bottleneck_dim)`` bottleneck and
    the cache needed by :func:`backward`. Equal-length sequences may be passed
    stacked as ``(B, T, input_dim)``; outputs then gain the same leading axis.
    """
    x = np.ascontiguousarray(frames, dtype=np.float64)
    if x.ndim not in (2, 3):
        raise ShapeError(f"frames must be (T, F) or (B, T, F), got shape {x.shape}")
    T = x.shape[-2]
    if x.shape[-1] != cfg.input_dim:
        raise ShapeError(f"expected {cfg.input_dim} input features, got {x.shape[-1]}")
    if T < cfg.min_frames:
        raise TooShortInputError(f"need at least {cfg.min_frames} frames, got {T}")
    cache = LayerCache(params_id=id(params), params_version=params.version, cfg=cfg)
    a = x
    for l in range(len(cfg.hidden_dims)):
        s = splice(a, cfg.context)
        z = _affine(s, params[f"hidden.{l}.W"], params[f"hidden.{l}.b"])
        cache.spliced.append(s)
        cache.pre_act.append(z)
        a = np.maximum(z, 0.0)
        if l + 1 == cfg.subsample_after and cfg.subsample_factor > 1:
            a = a[..., ::cfg.subsample_factor, :]
    h = _affine(a, params["bottleneck.W"], params["bottleneck.b"])
    cache.bottleneck_input = a
    cache.bottleneck = h
    return h, cache


def head_logits(b, params: EncoderParams) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    W = params["head.W"]
    if b.ndim < 2 or b.shape[-1] != W.shape[0]:
        raise ShapeError(f"bottleneck shape {b.shape} does not match head input {W.shape[0]}")
    return _affine(b, W, params["head.b"])


def backward(grad_wrt_bottleneck, grad_wrt_logits, cache: LayerCache, params: EncoderParams,
             head_input=None, straight_through: bool = True) -> dict[str, np.ndarray]:
    """Parameter gradients given upstream gradients at the bottleneck and the logits.

    ``head_input`` is what the head consumed (the quantized bottleneck); when
    omitted the head is assumed to have read the bottleneck directly. The
    gradient reaching the head input is passed straight through to the
    bottleneck; ``straight_through=False`` drops it instead.
    ``grad_wrt_bottleneck`` may be None for a zero gradient.
    """
    if cache.params_id != id(params) or cache.params_version != params.version:
        raise CacheError("cache was produced with different or since-updated parameters")
    cfg = cache.cfg
    h = cache.bottleneck
    head_in = h if head_input is None else np.asarray(head_input, dtype=np.float64)
    g_h = np.zeros_like(h) if grad_wrt_bottleneck is None else np.asarray(grad_wrt_bottleneck, dtype=np.float64)
    g_logits = np.asarray(grad_wrt_logits, dtype=np.float64)
    if (g_h.shape != h.shape or head_in.shape != h.shape
            or g_logits.shape != h.shape[:-1] + (params["head.W"].shape[1],)):
        raise CacheError("upstream gradient shapes do not match the cached forward pass")

    grads = {
        "head.W": _outer_sum(head_in, g_logits),
        "head.b": g_logits.reshape(-1, g_logits.shape[-1]).sum(axis=0),
    }
    if straight_through:
        g_h = g_h + ste_backward(g_logits @ params["head.W"].T)

    a = cache.bottleneck_input
    grads["bottleneck.W"] = _outer_sum(a, g_h)
    grads["bottleneck.b"] = g_h.reshape(-1, g_h.shape[-1]).sum(axis=0)
    g_a = g_h @ params["bottleneck.W"].T

    for l in reversed(range(len(cfg.hidden_dims))):
        if l + 1 == cfg.subsample_after and cfg.subsample_factor > 1:
            full = np.zeros(cache.pre_act[l].shape[:-1] + (g_a.shape[-1],))
            full[..., ::cfg.subsample_factor, :] = g_a
            g_a = full
        g_z = g_a * (cache.pre_act[l] > 0.0)
        grads[f"hidden.{l}.W"] = _outer_sum(cache.spliced[l], g_z)
        grads[f"hidden.{l}.b"] = g_z.reshape(-1, g_z.shape[-1]).sum(axis=0)
        if l > 0:
            g_s = g_z @ params[f"hidden.{l}.W"].T
            g_a = splice_backward(g_s, cfg.context, cfg.hidden_dims[l - 1])
    return {k: grads[k] for k in params.names()}


def save_params(params: EncoderParams, cfg: EncoderConfig, path) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, **params_arrays(params, cfg))


def params_arrays(params: EncoderParams, cfg: EncoderConfig, prefix: str = "") -> dict:
    header = {"format_version": PARAMS_FORMAT_VERSION, "config": asdict(cfg),
              "names": params.names()}
    out = {prefix + "header": np.array(json.dumps(header))}
    out.update({prefix + "p." + k: v for k, v in params.arrays.items()})
    return out


def params_from_arrays(z, prefix: str = "") -> tuple[EncoderParams, EncoderConfig]:
    header = json.loads(str(z[prefix + "header"]))
    if header.get("format_version") != PARAMS_FORMAT_VERSION:
        raise FormatError(f"unsupported parameter format {header.get('format_version')}")
    cfg = EncoderConfig(**header["config"])
    arrays = {k: np.array(z[prefix + "p." + k]) for k in header["names"]}
    return EncoderParams(arrays), cfg


def load_params(path) -> tuple[EncoderParams, EncoderConfig]:
    with np.load(path, allow_pickle=False) as z:
        return params_from_arrays(z)
