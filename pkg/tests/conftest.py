import os
import time
from pathlib import Path

import pytest
from hypothesis import settings

from vqprivacy.encoder import EncoderConfig
from vqprivacy.synthdata import DatasetSpec, generate

settings.register_profile("default", deadline=None, max_examples=60)
settings.register_profile("fast", deadline=None, max_examples=15)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = Path(__file__).resolve().parents[1]
BENCHMARK_CFG = ROOT / "configs" / "benchmark.cfg"


@pytest.fixture(scope="session")
def tiny_spec():
    return DatasetSpec(num_speakers=4, num_content_classes=5, feature_dim=6,
                       utterances_per_speaker=3, frames_per_utterance=12,
                       seed=11, num_train_speakers=4)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_spec):
    return generate(tiny_spec)


@pytest.fixture(scope="session")
def tiny_encoder_cfg(tiny_spec):
    return EncoderConfig(input_dim=tiny_spec.feature_dim, hidden_dims=(8, 8, 8), bottleneck_dim=4,
                         num_content_classes=tiny_spec.num_content_classes)


@pytest.fixture(scope="session")
def benchmark_sweep(tmp_path_factory):
    """One CLI sweep over the benchmark config, shared by every test that needs it."""
    from vqprivacy.cli import main

    out = tmp_path_factory.mktemp("benchmark")
    t0 = time.perf_counter()
    rc = main(["sweep", "--config", str(BENCHMARK_CFG), "--out", str(out)])
    return {"rc": rc, "out": out, "seconds": time.perf_counter() - t0}


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
