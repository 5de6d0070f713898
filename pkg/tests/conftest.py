"""Shared fixtures: one small trained model, reused across test modules."""

import numpy as np
import pytest

from scenario_bands.data import SampleSet
from scenario_bands.gan import GanHyper, train
from scenario_bands.numerics import make_rng


@pytest.fixture(scope="session")
def toy_checkpoint():
    """A briefly trained 1-D model: enough iterations for qualitative
    behavior (critic ordering, sigma-spread ordering), far fewer than the
    full convergence run in the acceptance suite."""
    rng = make_rng(99)
    sample_set = SampleSet(
        conditions=np.zeros((256, 0)),
        targets=rng.normal(0.5, 0.1, (256, 1)),
        true_indices=np.zeros(256, dtype=np.int64),
        points_per_day=1,
    )
    hyper = GanHyper(iterations=800, gp_weight=0.5)
    return train(sample_set, hyper, seed=1)
