"""Shared fixtures: one rendered synthetic world reused across the suite."""

import numpy as np
import pytest

from kplabel import pipeline, synthetic


@pytest.fixture(scope="session")
def world():
    """Noiseless rendered 3-scene box world, kept in memory."""
    return synthetic.generate(synthetic.WorldSpec(seed=7))


@pytest.fixture(scope="session")
def dataset(tmp_path_factory):
    """The same world written to disk as a full project directory."""
    root = tmp_path_factory.mktemp("dataset")
    synthetic.generate(synthetic.WorldSpec(seed=7), out_dir=root)
    return root


@pytest.fixture(scope="session")
def solved_dataset(tmp_path_factory):
    """Dataset with optimize / densify / label already run."""
    root = tmp_path_factory.mktemp("solved")
    synthetic.generate(synthetic.WorldSpec(seed=7), out_dir=root)
    pipeline.stage_optimize(root)
    pipeline.stage_densify(root)
    pipeline.stage_label(root)
    return root


def random_rigid(rng):
    from kplabel.geometry import RigidTransform
    q = rng.normal(size=4)
    return RigidTransform(q / np.linalg.norm(q), rng.normal(scale=0.5, size=3))
