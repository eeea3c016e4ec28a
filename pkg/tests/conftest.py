import numpy as np
import pytest

from visegrid.corpus import make_folds
from visegrid.decoder import DecodeConfig
from visegrid.harness import GridConfig
from visegrid.hmm import TrainSchedule
from visegrid.synth import SynthSpec, generate_synthetic_corpus


@pytest.fixture(scope="session")
def tiny_corpus():
    """Two well-separated speakers, small enough to train in seconds."""
    spec = SynthSpec(speakers=2, sentences=9, seed=0)
    corpus, truth = generate_synthetic_corpus(spec)
    return corpus, truth


@pytest.fixture(scope="session")
def tiny_folds(tiny_corpus):
    corpus, _ = tiny_corpus
    return make_folds(corpus, 3, seed=0)


@pytest.fixture(scope="session")
def fast_config():
    """Short schedule for harness plumbing tests; quality is not the point."""
    return GridConfig(
        schedule=TrainSchedule(iterations=4, align_at=3, mixture_growth=((2, 2),)),
        decode=DecodeConfig(),
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
