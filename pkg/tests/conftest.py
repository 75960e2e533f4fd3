import numpy as np
import pytest
from numpy.random import default_rng

import synth


@pytest.fixture(scope="session")
def base_pattern():
    return synth.random_pattern(default_rng(11))


@pytest.fixture(scope="session")
def compliant_eye(base_pattern):
    """One clean rendered eye shared across modules; rendering at full
    frame size is the expensive part of most tests."""
    return synth.render_eye(base_pattern, noise_rng=default_rng(7))


@pytest.fixture(scope="session")
def compliant_seg(compliant_eye):
    return synth.seg_result(compliant_eye)


@pytest.fixture()
def rng():
    return default_rng(1234)
