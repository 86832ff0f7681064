"""Shared fixtures: a small simulated dataset, fitted constants, and a
tiny trained checkpoint reused by the tests that only need plumbing."""

from __future__ import annotations

import numpy as np
import pytest

from wavediff.diffusion import TrainConfig, train
from wavediff.ingest import derive_series
from wavediff.pipeline import fit_and_encode
from wavediff.preprocess import DEFAULT_SETTINGS
from wavediff.simulate import ReferenceModelConfig, generate_reference_dataset
from wavediff.unet import UNetConfig

TINY_UNET = UNetConfig(stage_channels=(8, 16), blocks_per_stage=1,
                       attention_stages=(1,), in_shape=(3, 16, 256))
TINY_TRAIN = TrainConfig(epochs=2, batch_size=8, learning_rate=2e-4,
                         warmup_steps=10, timesteps=40, beta_start=1e-3,
                         beta_end=0.25, validation_fraction=0.2, rng_seed=3)


@pytest.fixture(scope="session")
def reference_days():
    return generate_reference_dataset(ReferenceModelConfig(n_days=64, rng_seed=7))


@pytest.fixture(scope="session")
def reference_series(reference_days):
    return [derive_series(day) for day in reference_days]


@pytest.fixture(scope="session")
def prepared(reference_series):
    return fit_and_encode(reference_series, DEFAULT_SETTINGS, seed=1)


@pytest.fixture(scope="session")
def tiny_checkpoint(prepared):
    return train(
        prepared.images.pixels,
        TINY_TRAIN,
        TINY_UNET,
        manifest_digest=prepared.manifest.digest,
        split=prepared.images.split,
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


def terminal_writer(config):
    """Writes lines past pytest's output capture, straight to the terminal."""
    reporter = config.pluginmanager.getplugin("terminalreporter")

    def write(line: str) -> None:
        if reporter is not None:
            reporter.write_line(line)
        else:
            print(line)

    return write


@pytest.fixture()
def announce(request):
    """Pass/fail reporter for the acceptance gate: one visible line each."""
    write = terminal_writer(request.config)

    def _announce(criterion: str, ok: bool, detail: str) -> None:
        line = f"[acceptance {criterion}] {'PASS' if ok else 'FAIL'}: {detail}"
        write(line)
        assert ok, line

    return _announce
