import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rdfewshot.radar import ChirpConfig
from rdfewshot.synth import SynthSpec, synth_dataset


@pytest.fixture(scope="session")
def chirp() -> ChirpConfig:
    return ChirpConfig()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory, chirp):
    """Small 3-class dual-aspect dataset shared by IO/episode/CLI tests."""
    out = tmp_path_factory.mktemp("tiny") / "ds"
    spec = SynthSpec(classes=("standing", "squatting", "wave_right_arm"),
                     aspects=(0.0, 90.0), frames_per_class_per_aspect=10,
                     snr_db=20.0, seed=11)
    synth_dataset(spec, chirp, out)
    return out
