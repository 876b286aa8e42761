"""Flat ``key = value`` experiment configuration with dotted section keys.

Example::

    seed = 7
    train.lambda_reg = 0.25
    sweep.codebook_sizes = 16, 64, 256

Blank lines and ``#`` comments are ignored. Every key has a documented
default (see ``SCHEMA``); unknown keys are rejected by name.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .encoder import EncoderConfig
from .errors import ConfigError
from .synthdata import DatasetSpec
from .training import TrainConfig


def _int(s: str) -> int:
    return int(s)


def _float(s: str) -> float:
    return float(s)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_list(s: str) -> tuple[int, ...]:
    s = s.strip()
    return tuple(int(p) for p in s.split(",")) if s else ()


def _str(s: str) -> str:
    return s.strip()


# key -> (parser, default, check, description of check)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any, Callable[[Any], bool], str]] = {
    "seed": (_int, 0, lambda v: 0 <= v < 2**64, "a 64-bit unsigned integer"),
    "data.num_speakers": (_int, 40, lambda v: v >= 2, ">= 2"),
    "data.num_train_speakers": (_int, 120, lambda v: v >= 0, ">= 0"),
    "data.num_content_classes": (_int, 20, lambda v: v >= 2, ">= 2"),
    "data.feature_dim": (_int, 24, lambda v: v >= 1, ">= 1"),
    "data.utterances_per_speaker": (_int, 10, lambda v: v >= 2, ">= 2"),
    "data.frames_per_utterance": (_int, 120, lambda v: v >= 3, ">= 3"),
    "data.speaker_strength": (_float, 1.0, lambda v: v >= 0, ">= 0"),
    "data.noise_sigma": (_float, 0.5, lambda v: v >= 0, ">= 0"),
    "encoder.hidden_dims": (_int_list, (64, 64, 64), lambda v: len(v) >= 1 and min(v) >= 1,
                            "a non-empty list of positive integers"),
    "encoder.bottleneck_dim": (_int, 16, lambda v: v >= 1, ">= 1"),
    "encoder.context": (_int, 1, lambda v: v >= 0, ">= 0"),
    "encoder.subsample_factor": (_int, 3, lambda v: v >= 1, ">= 1"),
    "train.lambda_reg": (_float, 0.25, lambda v: v >= 0, ">= 0"),
    "train.learning_rate": (_float, 0.05, lambda v: v >= 0, ">= 0"),
    "train.batch_size": (_int, 8, lambda v: v >= 1, ">= 1"),
    "train.epochs": (_int, 20, lambda v: v >= 0, ">= 0"),
    "train.ema_decay": (_float, 0.99, lambda v: 0 <= v <= 1, "in [0, 1]"),
    "train.ema_epsilon": (_float, 1e-5, lambda v: v > 0, "> 0"),
    "train.codebook_update": (_str, "ema", lambda v: v in ("ema", "gradient"), "'ema' or 'gradient'"),
    "train.restart_dead": (_bool, True, lambda v: True, ""),
    "train.stale_threshold": (_int, 50, lambda v: v >= 1, ">= 1"),
    "sweep.codebook_sizes": (_int_list, (16, 32, 64, 128, 256), lambda v: all(x >= 1 for x in v),
                             "a list of positive integers"),
    "sweep.include_no_vq_baseline": (_bool, True, lambda v: True, ""),
    "eval.enroll_frames_per_speaker": (_int, 360, lambda v: v >= 1, ">= 1"),
    "eval.bootstrap_resamples": (_int, 1000, lambda v: v >= 1, ">= 1"),
    "eval.alpha": (_float, 0.05, lambda v: 0 < v < 1, "in (0, 1)"),
    "output.dir": (_str, "runs/sweep", lambda v: bool(v), "non-empty"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    data: DatasetSpec
    encoder: EncoderConfig
    train: TrainConfig
    codebook_sizes: tuple[int, ...]
    include_no_vq_baseline: bool
    enroll_frames_per_speaker: int
    bootstrap_resamples: int
    alpha: float
    output_dir: str
    seed: int
    values: dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        vals = dict(self.values)
        vals["seed"] = seed
        return build_config(vals)

    def with_values(self, **overrides) -> "ExperimentConfig":
        vals = dict(self.values)
        vals.update({k.replace("__", "."): v for k, v in overrides.items()})
        return build_config(vals)


def build_config(values: dict[str, Any]) -> ExperimentConfig:
    """Fill defaults, check every key, and assemble the typed config."""
    v = {k: d for k, (_, d, _, _) in SCHEMA.items()}
    for key, val in values.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        _, _, check, desc = SCHEMA[key]
        if not check(val):
            raise ConfigError(f"config key {key!r} must be {desc}, got {val!r}")
        v[key] = val
    if not v["sweep.codebook_sizes"] and not v["sweep.include_no_vq_baseline"]:
        raise ConfigError("config key 'sweep.codebook_sizes' is empty and "
                          "'sweep.include_no_vq_baseline' is false: nothing to run")
    if v["data.frames_per_utterance"] < 2 * v["encoder.context"] + 1:
        raise ConfigError("config key 'data.frames_per_utterance' is shorter than the encoder context window")
    seed = v["seed"]
    data = DatasetSpec(
        num_speakers=v["data.num_speakers"],
        num_content_classes=v["data.num_content_classes"],
        feature_dim=v["data.feature_dim"],
        utterances_per_speaker=v["data.utterances_per_speaker"],
        frames_per_utterance=v["data.frames_per_utterance"],
        speaker_strength=v["data.speaker_strength"],
        noise_sigma=v["data.noise_sigma"],
        seed=seed,
        num_train_speakers=v["data.num_train_speakers"],
    )
    encoder = EncoderConfig(
        input_dim=data.feature_dim,
        hidden_dims=v["encoder.hidden_dims"],
        bottleneck_dim=v["encoder.bottleneck_dim"],
        context=v["encoder.context"],
        subsample_factor=v["encoder.subsample_factor"],
        num_content_classes=data.num_content_classes,
    )
    sizes = tuple(sorted(set(v["sweep.codebook_sizes"])))
    train = TrainConfig(
        lambda_reg=v["train.lambda_reg"],
        codebook_size=sizes[0] if sizes else 1,
        learning_rate=v["train.learning_rate"],
        batch_size=v["train.batch_size"],
        epochs=v["train.epochs"],
        seed=seed,
        ema_decay=v["train.ema_decay"],
        ema_epsilon=v["train.ema_epsilon"],
        codebook_update=v["train.codebook_update"],
        restart_dead=v["train.restart_dead"],
        stale_threshold=v["train.stale_threshold"],
    )
    return ExperimentConfig(
        data=data, encoder=encoder, train=train, codebook_sizes=sizes,
        include_no_vq_baseline=v["sweep.include_no_vq_baseline"],
        enroll_frames_per_speaker=v["eval.enroll_frames_per_speaker"],
        bootstrap_resamples=v["eval.bootstrap_resamples"], alpha=v["eval.alpha"],
        output_dir=v["output.dir"], seed=seed, values=v,
    )


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: config key {key!r} given twice")
        try:
            values[key] = SCHEMA[key][0](val)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: cannot parse value {val!r} for config key {key!r}") from None
    return build_config(values)


def parse_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), str(p))


def _render(val: Any) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    if isinstance(val, tuple):
        return ", ".join(str(x) for x in val)
    return str(val)


def dump_config(cfg: ExperimentConfig) -> str:
    """Every key with its effective value, in schema order."""
    return "".join(f"{k} = {_render(cfg.values[k])}\n" for k in SCHEMA)


def default_config(**overrides) -> ExperimentConfig:
    return build_config({k.replace("__", "."): v for k, v in overrides.items()})
