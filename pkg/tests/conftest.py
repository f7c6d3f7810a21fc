from pathlib import Path

import numpy as np
import pytest

from dcevae.config import TrainConfig
from dcevae.data import ScmSpec, generate_scm
from dcevae.nets import Batch, make_model

ROOT = Path(__file__).resolve().parents[1]
ADULT_TRAIN = ROOT / "data" / "adult.data"
ADULT_TEST = ROOT / "data" / "adult.test"


@pytest.fixture(scope="session")
def small_scm():
    return generate_scm(ScmSpec(), 600)


@pytest.fixture
def tiny_config():
    return TrainConfig(latent_d=2, latent_r=2, hidden=[4], disc_hidden=[4], epochs=2, batch_size=64)


def make_tiny(ds, variant="dcevae", **kw):
    cfg = TrainConfig(variant=variant, latent_d=2, latent_r=2, hidden=[4], disc_hidden=[4],
                      epochs=2, batch_size=64, **kw)
    return make_model(ds, cfg)


def batch_of(ds, n=4):
    return Batch.of(ds, np.arange(n))


# -- trained models shared across modules (training dominates suite runtime) --

SCM_N = 20_000
SCM_CONFIG = dict(epochs=40, lr=3e-3, hidden=[64])


@pytest.fixture(scope="session")
def scm_20k():
    return generate_scm(ScmSpec(seed=0), SCM_N)


_TRAINED: dict = {}


def trained_scm_model(sample, variant="dcevae", seed=0, **overrides):
    """Train (once per session) a model on an SCM sample with the acceptance budget."""
    cfg = {**SCM_CONFIG, "variant": variant, "seed": seed, **overrides}
    key = (id(sample), tuple(sorted((k, str(v)) for k, v in cfg.items())))
    if key not in _TRAINED:
        model = make_model(sample.dataset, TrainConfig(**cfg))
        model.fit(sample.dataset)
        _TRAINED[key] = model
    return _TRAINED[key]


@pytest.fixture(scope="session")
def dcevae_scm(scm_20k):
    return trained_scm_model(scm_20k, "dcevae", 0)
