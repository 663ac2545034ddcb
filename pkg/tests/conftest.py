import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))
sys.path.insert(0, str(Path(__file__).resolve().parent))

from handforge import generate_default_model  # noqa: E402


@pytest.fixture(scope="session")
def default_model():
    return generate_default_model()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240811)


def random_params_arrays(rng, model, pose_scale=0.35):
    """Moderate random configuration away from the rest pose."""
    lo = model.dof_bounds[:, 0]
    hi = model.dof_bounds[:, 1]
    delta = rng.uniform(lo, hi) * pose_scale
    delta[:3] = rng.uniform(-40.0, 40.0, size=3)
    delta[3:6] = rng.uniform(-0.6, 0.6, size=3)
    alpha = rng.uniform(0.7, 1.4, size=6)
    beta = rng.uniform(-0.8, 0.8, size=model.n_morph_targets)
    return delta, alpha, beta
