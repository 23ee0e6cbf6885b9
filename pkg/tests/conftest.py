import time
from types import SimpleNamespace

import numpy as np
import pytest

from hankelwave.config import PipelineConfig, braking_config, posture_config
from hankelwave.hankel_embedding import Standardizer
from hankelwave.ingest import BRAKING_STATES
from hankelwave.stream_pipeline import train_from_config
from hankelwave.subspace_trainer import LabeledDictionary

# criterion lines collected by the acceptance module, printed at the end
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


def _trained(config: PipelineConfig) -> SimpleNamespace:
    start = time.perf_counter()
    dictionary, P = train_from_config(config)
    return SimpleNamespace(config=config, dictionary=dictionary, P=P,
                           train_seconds=time.perf_counter() - start)


@pytest.fixture(scope="session")
def braking_model():
    return _trained(braking_config())


@pytest.fixture(scope="session")
def posture_model():
    return _trained(posture_config())


@pytest.fixture(scope="session")
def random_braking_dictionary():
    """Random dictionary carrying the braking metadata, for plumbing tests."""
    def make(seed=0, per_class=5, w=20):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(2 * w, 3 * per_class))
        A /= np.linalg.norm(A, axis=0)
        return LabeledDictionary.from_blocks(
            A, [per_class] * 3, class_names=BRAKING_STATES, channels=("pitch", "pitch_rate"),
            w=w, standardizer=Standardizer((0.05, 0.0), (0.05, 0.1)), fs=20.0,
            feature_mode="imu")
    return make
