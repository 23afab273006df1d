import numpy as np
import pytest
from hypothesis import settings

from hhocond.mesh import build_mesh
from hhocond.meshes import cartesian_mesh

# deterministic example generation so reruns are reproducible
settings.register_profile("repo", deadline=None, derandomize=True, max_examples=40)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def unit_square():
    return build_mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2, 3]])


@pytest.fixture
def grid2():
    return cartesian_mesh(2)


def pentagon_mesh():
    """A non-convex hexagon plus a pentagon sharing two faces, with a hanging node."""
    V = [[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2], [3, 0], [3, 2], [2, 2]]
    return build_mesh(V, [[0, 1, 2, 3, 4, 5], [1, 6, 7, 8, 2], [3, 2, 8, 4]])
