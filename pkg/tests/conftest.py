import numpy as np
import pytest

from pressnet.core import Modality
from pressnet.data.synthetic import build_synthetic_dataset


@pytest.fixture(scope="session")
def tiny_manifest():
    """Small but complete dataset: 3 subjects x 2 poses, 1 test subject."""
    return build_synthetic_dataset(
        subjects=3, poses_per_subject=2, test_subjects=1, seed=101,
        pm_shape=(32, 16), image_shape=(64, 64), modality=Modality.RGB,
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(7)
