import pytest
from hypothesis import given
from hypothesis import strategies as st

from vqprivacy.config import (
    SCHEMA, build_config, default_config, dump_config, parse_config, parse_config_text,
)
from vqprivacy.errors import ConfigError


def test_minimal_config_fills_defaults(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("seed = 7\n")
    cfg = parse_config(p)
    assert cfg.seed == 7
    assert cfg.train.lambda_reg == 0.25
    assert cfg.train.ema_decay == 0.99
    assert cfg.bootstrap_resamples == 1000
    assert cfg.codebook_sizes == (16, 32, 64, 128, 256)
    assert cfg.include_no_vq_baseline
    assert cfg.data.seed == cfg.train.seed == 7


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="lamda"):
        parse_config_text("lamda = 0.3\n")


def test_distinct_messages(tmp_path):
    msgs = set()
    for text in ("seed 3\n", "seed = x\n", "train.lambda_reg = -1\n", "seed = 1\nseed = 2\n",
                 "sweep.codebook_sizes =\nsweep.include_no_vq_baseline = false\n"):
        with pytest.raises(ConfigError) as e:
            parse_config_text(text)
        msgs.add(str(e.value))
    with pytest.raises(ConfigError) as e:
        parse_config(tmp_path / "missing.cfg")
    msgs.add(str(e.value))
    assert len(msgs) == 6
    with pytest.raises(ConfigError, match="train.lambda_reg"):
        parse_config_text("train.lambda_reg = -1\n")
    with pytest.raises(ConfigError, match="seed"):
        parse_config_text("seed = x\n")


def test_comments_and_blank_lines():
    cfg = parse_config_text("# header\n\nseed = 3  # trailing\ntrain.epochs = 2\n")
    assert cfg.seed == 3 and cfg.train.epochs == 2


def test_baseline_only_allowed():
    cfg = parse_config_text("sweep.codebook_sizes =\n")
    assert cfg.codebook_sizes == () and cfg.include_no_vq_baseline


def test_bool_values():
    assert not parse_config_text("train.restart_dead = no\n").train.restart_dead
    with pytest.raises(ConfigError):
        parse_config_text("train.restart_dead = maybe\n")


def test_dump_parse_fixpoint():
    cfg = parse_config_text("seed = 5\nsweep.codebook_sizes = 64, 16\ntrain.lambda_reg = 0.1\n")
    text = dump_config(cfg)
    again = parse_config_text(text)
    assert again == cfg
    assert dump_config(again) == text
    assert len(text.splitlines()) == len(SCHEMA)


@given(seed=st.integers(0, 2**64 - 1), lam=st.floats(0, 10, allow_nan=False),
       sizes=st.lists(st.integers(1, 512), min_size=1, max_size=5), epochs=st.integers(0, 50))
def test_dump_parse_property(seed, lam, sizes, epochs):
    cfg = build_config({"seed": seed, "train.lambda_reg": lam, "sweep.codebook_sizes": tuple(sizes),
                        "train.epochs": epochs})
    assert parse_config_text(dump_config(cfg)) == cfg


def test_with_seed_and_overrides():
    cfg = default_config()
    assert cfg.with_seed(9).seed == 9
    assert cfg.with_seed(9).data.seed == 9
    assert cfg.with_values(train__epochs=3).train.epochs == 3
    with pytest.raises(ConfigError):
        cfg.with_values(train__nope=1)
