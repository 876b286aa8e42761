"""Joint training of encoder, content head and codebook.

The encoder and head are trained with plain SGD on the content cross-entropy
plus ``lambda_reg`` times the commitment loss. The codebook loss is reported
but, with EMA enabled, drives no parameter: prototypes move only through the
moving-average update.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import vq
from .encoder import (
    EncoderConfig,
    EncoderParams,
    backward,
    encode,
    head_logits,
    init_params,
    params_arrays,
    params_from_arrays,
)
from .errors import ConfigError, EmptyInputError, FormatError, LabelError, NumericError, ShapeError
from .numerics import RngStream, as_matrix
from .synthdata import Dataset, FrameSequence

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lambda_reg: float = 0.25
    codebook_size: int = 64
    learning_rate: float = 0.05
    batch_size: int = 8
    epochs: int = 20
    vq_enabled: bool = True
    seed: int = 0
    ema_decay: float = 0.99
    ema_epsilon: float = 1e-5
    # "ema" (default) or "gradient" (SGD on the codebook loss, for ablations)
    codebook_update: str = "ema"
    restart_dead: bool = True
    stale_threshold: int = 50

    def __post_init__(self):
        if not self.lambda_reg >= 0:
            raise ConfigError("lambda_reg must be >= 0")
        if self.vq_enabled and self.codebook_size < 1:
            raise ConfigError("codebook_size must be >= 1 when VQ is enabled")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        vq.check_decay(self.ema_decay)
        if not self.ema_epsilon > 0:
            raise ConfigError("ema_epsilon must be > 0")
        if self.codebook_update not in ("ema", "gradient"):
            raise ConfigError(f"codebook_update must be 'ema' or 'gradient', not {self.codebook_update!r}")
        if self.stale_threshold < 1:
            raise ConfigError("stale_threshold must be >= 1")


@dataclass
class StepLosses:
    utility: float
    vq: float
    reg: float
    combined: float
    num_frames: int
    indices: np.ndarray | None = None


@dataclass
class EpochRecord:
    epoch: int
    utility_loss: float
    vq_loss: float
    reg_loss: float
    combined_loss: float
    perplexity: float


@dataclass
class TrainedModel:
    params: EncoderParams
    encoder_cfg: EncoderConfig
    train_cfg: TrainConfig
    codebook: vq.Codebook | None = None
    curve: list[EpochRecord] = field(default_factory=list)
    step: int = 0

    @property
    def vq_enabled(self) -> bool:
        return self.codebook is not None


def utility_loss(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    logits = as_matrix(logits, "logits")
    labels = np.asarray(labels, dtype=np.int64)
    J, P = logits.shape
    if labels.shape != (J,):
        raise ShapeError(f"{labels.shape[0] if labels.ndim else 0} labels for {J} frames")
    if J == 0:
        raise EmptyInputError("no frames")
    if labels.min() < 0 or labels.max() >= P:
        raise LabelError(f"labels must lie in [0, {P})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(J)
    loss = float(-log_p[rows, labels].mean())
    grad = np.exp(log_p)
    grad[rows, labels] -= 1.0
    return loss, grad / J


def combined_loss(l_utility: float, l_vq: float, l_reg: float, lambda_reg: float) -> float:
    vals = (l_utility, l_vq, l_reg, lambda_reg)
    if not all(math.isfinite(v) for v in vals):
        raise NumericError(f"non-finite loss component in {vals}")
    if lambda_reg < 0:
        raise ConfigError("lambda_reg must be >= 0")
    return l_utility + l_vq + lambda_reg * l_reg


def bottleneck_labels(labels: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    """Frame labels taken with the encoder's subsampling stride."""
    return np.asarray(labels)[::cfg.subsample_factor]


def compute_gradients(batch: list[FrameSequence], model: TrainedModel, straight_through: bool = True):
    """Forward and backward over a batch of whole utterances.

    Returns ``(grads, losses, bottleneck, indices)``; ``indices`` is None
    without VQ. ``straight_through=False`` cuts the head gradient at the
    quantizer (a test hook).
    """
    if not batch:
        raise EmptyInputError("empty batch")
    params, ecfg, tcfg = model.params, model.encoder_cfg, model.train_cfg
    hs, caches, labels = [], [], []
    for group in _length_groups(batch):
        x = np.stack([u.features for u in group])
        h, cache = encode(x, params, ecfg)
        hs.append(h)
        caches.append(cache)
        labels.extend(bottleneck_labels(u.content_labels, ecfg) for u in group)
    H = np.vstack([h.reshape(-1, h.shape[-1]) for h in hs])
    y = np.concatenate(labels)

    if model.codebook is not None:
        res = vq.quantize(H, model.codebook)
        Q, idx = res.quantized, res.indices
        l_vq, l_reg = res.codebook_loss, res.commitment_loss
        g_reg = tcfg.lambda_reg * vq.commitment_loss_grad(H, Q)
    else:
        Q, idx = H, None
        l_vq = l_reg = 0.0
        g_reg = None

    logits = head_logits(Q, params)
    l_util, g_logits = utility_loss(logits, y)
    total = combined_loss(l_util, l_vq, l_reg, tcfg.lambda_reg)

    grads = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    start = 0
    for h, cache in zip(hs, caches):
        sl = slice(start, start + h.shape[0] * h.shape[1])
        start = sl.stop
        g = backward(None if g_reg is None else g_reg[sl].reshape(h.shape),
                     g_logits[sl].reshape(h.shape[:-1] + (-1,)), cache, params,
                     head_input=Q[sl].reshape(h.shape), straight_through=straight_through)
        for k in grads:
            grads[k] += g[k]
    losses = StepLosses(l_util, l_vq, l_reg, total, H.shape[0])
    return grads, losses, H, idx


def _length_groups(batch: list[FrameSequence]) -> list[list[FrameSequence]]:
    """Split a batch into equal-length groups, keeping first-seen order."""
    groups: dict[int, list[FrameSequence]] = {}
    for u in batch:
        groups.setdefault(u.num_frames, []).append(u)
    return list(groups.values())


def train_step(batch: list[FrameSequence], model: TrainedModel, rng: RngStream | None = None):
    """One SGD step on encoder and head, then the codebook update. Mutates ``model``."""
    tcfg = model.train_cfg
    grads, losses, H, idx = compute_gradients(batch, model)
    if not math.isfinite(losses.combined):
        raise NumericError(f"non-finite loss at step {model.step}")
    model.params.apply_update(grads, tcfg.learning_rate)
    if model.codebook is not None:
        cb = model.codebook
        if tcfg.codebook_update == "ema":
            cb = vq.ema_update(cb, H, idx)
        else:
            cb = vq.gradient_prototype_step(cb, H, idx, tcfg.learning_rate)
        cb = vq.record_usage(cb, idx)
        if tcfg.restart_dead:
            r = rng if rng is not None else RngStream(tcfg.seed).child("restart", model.step)
            cb = vq.restart_dead_prototypes(cb, H, r, tcfg.stale_threshold)
        model.codebook = cb
    model.step += 1
    losses.indices = idx
    return model, losses


def _batches(order: np.ndarray, size: int):
    for i in range(0, len(order), size):
        yield order[i:i + size]


def infer_encoder_config(ds: Dataset, base: EncoderConfig | None = None) -> EncoderConfig:
    F = ds.sequences[0].features.shape[1]
    if ds.content_matrix is not None:
        P = ds.content_matrix.shape[0]
    else:
        P = int(max(u.content_labels.max() for u in ds.sequences)) + 1
    base = base or EncoderConfig()
    kw = asdict(base)
    kw.update(input_dim=F, num_content_classes=P)
    return EncoderConfig(**kw)


def init_model(ds: Dataset, cfg: TrainConfig, encoder_cfg: EncoderConfig | None = None) -> TrainedModel:
    ecfg = infer_encoder_config(ds, encoder_cfg)
    rng = RngStream(cfg.seed)
    params = init_params(ecfg, rng.child("encoder-init"))
    return TrainedModel(params, ecfg, cfg)


def _init_codebook(model: TrainedModel, seqs: list[FrameSequence], order: np.ndarray) -> vq.Codebook:
    # warm-up forward over the first batch, extended until there are V frames
    cfg = model.train_cfg
    frames, n = [], 0
    for pos, i in enumerate(order):
        if pos >= cfg.batch_size and n >= cfg.codebook_size:
            break
        h, _ = encode(seqs[i].features, model.params, model.encoder_cfg)
        frames.append(h)
        n += h.shape[0]
    rng = RngStream(cfg.seed).child("codebook-init", cfg.codebook_size)
    return vq.init_codebook(np.vstack(frames), cfg.codebook_size, rng, cfg.ema_decay, cfg.ema_epsilon)


def fit(ds: Dataset, cfg: TrainConfig, encoder_cfg: EncoderConfig | None = None) -> TrainedModel:
    """Train on every sequence of ``ds`` for ``cfg.epochs`` shuffled epochs."""
    seqs = ds.sequences
    if not seqs:
        raise EmptyInputError("cannot train on an empty dataset")
    model = init_model(ds, cfg, encoder_cfg)
    root = RngStream(cfg.seed)
    orders = [root.child("shuffle", e).permutation(len(seqs)) for e in range(max(cfg.epochs, 1))]
    if cfg.vq_enabled:
        model.codebook = _init_codebook(model, seqs, orders[0])

    for epoch in range(cfg.epochs):
        sums = np.zeros(4)
        steps = 0
        used = []
        for chunk in _batches(orders[epoch], cfg.batch_size):
            batch = [seqs[i] for i in chunk]
            _, losses = train_step(batch, model, root.child("restart", model.step))
            sums += (losses.utility, losses.vq, losses.reg, losses.combined)
            steps += 1
            if losses.indices is not None:
                used.append(losses.indices)
        mean = sums / steps
        # usage over the epoch's training steps
        ppl = (vq.codebook_perplexity(np.concatenate(used), model.codebook.V)
               if used else float("nan"))
        rec = EpochRecord(epoch + 1, *map(float, mean), ppl)
        if not all(math.isfinite(v) for v in mean):
            raise NumericError(f"training diverged in epoch {epoch + 1}")
        model.curve.append(rec)
        log.debug("epoch %d: %s", epoch + 1, rec)
    return model


def represent(model: TrainedModel, seq: FrameSequence):
    """Bottleneck, transmitted representation and prototype indices for one utterance.

    Without VQ the transmitted representation is the bottleneck itself and the
    indices are None.
    """
    h, _ = encode(seq.features, model.params, model.encoder_cfg)
    if model.codebook is None:
        return h, h, None
    res = vq.quantize(h, model.codebook)
    return h, res.quantized, res.indices


def predict_content(model: TrainedModel, seq: FrameSequence) -> np.ndarray:
    """Argmax content class per bottleneck frame (lowest class index on ties)."""
    _, q, _ = represent(model, seq)
    return np.argmax(head_logits(q, model.params), axis=1)


def write_curve_csv(model: TrainedModel, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "utility_loss", "vq_loss", "reg_loss", "combined_loss", "perplexity"])
        for r in model.curve:
            w.writerow([r.epoch] + [_fmt(v) for v in (r.utility_loss, r.vq_loss, r.reg_loss,
                                                      r.combined_loss, r.perplexity)])


def _fmt(v: float) -> str:
    return "" if not math.isfinite(v) else f"{v:.6g}"


def save_model(model: TrainedModel, path) -> None:
    meta = {
        "format_version": MODEL_FORMAT_VERSION,
        "train_cfg": asdict(model.train_cfg),
        "curve": [asdict(r) for r in model.curve],
        "step": model.step,
        "has_codebook": model.codebook is not None,
    }
    arrays = {"meta": np.array(json.dumps(meta))}
    arrays.update(params_arrays(model.params, model.encoder_cfg, prefix="enc."))
    if model.codebook is not None:
        arrays.update(vq.codebook_arrays(model.codebook, prefix="cb."))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path) -> TrainedModel:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format_version") != MODEL_FORMAT_VERSION:
            raise FormatError(f"unsupported model format {meta.get('format_version')}")
        params, ecfg = params_from_arrays(z, prefix="enc.")
        cb = vq.codebook_from_arrays(z, prefix="cb.") if meta["has_codebook"] else None
    return TrainedModel(params, ecfg, TrainConfig(**meta["train_cfg"]), cb,
                        [EpochRecord(**r) for r in meta["curve"]], meta["step"])
