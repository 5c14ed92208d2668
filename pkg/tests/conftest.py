import numpy as np
import pytest

from statecontrast.corpus import SynthSpec, synthesize_corpus
from statecontrast.embed import embed_corpus
from statecontrast.losses import LossConfig
from statecontrast.trainer import TrainConfig


@pytest.fixture(scope="session")
def small_spec():
    return SynthSpec(n_videos=3, clips_per_video=3, d_in=6, noise_sigma=0.05, seed=11)


@pytest.fixture(scope="session")
def small_corpus(small_spec):
    corpus, oracle = synthesize_corpus(small_spec)
    return corpus, oracle


@pytest.fixture(scope="session")
def small_cfg():
    return TrainConfig(d_in=6, d_h=8, d=8, batch_size=4, video_batch=2, loss=LossConfig(tau=0.1))


@pytest.fixture(scope="session")
def small_table(small_corpus, small_cfg):
    corpus, _ = small_corpus
    return embed_corpus(small_cfg.embedder(), corpus)


@pytest.fixture(scope="session")
def seed7_corpus():
    spec = SynthSpec(n_videos=8, clips_per_video=6, d_in=16, noise_sigma=0.05, seed=7)
    return synthesize_corpus(spec)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)
