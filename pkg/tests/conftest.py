import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_faces():
    """Three subjects, ten 32px frames each; shared by the slower pipeline tests."""
    from facedepth.dataprep import synth_face_dataset

    return synth_face_dataset(3, 10, 32, seed=5)
