import numpy as np
import pytest

from qfpt.models import build_qnd2, build_ring5
from qfpt.subspaces import build_partition, find_dfs


@pytest.fixture(scope="session")
def qnd2_system():
    model = build_qnd2()
    dfs = find_dfs(model)
    return model, dfs, build_partition(model, dfs)


@pytest.fixture(scope="session")
def ring5_system():
    model = build_ring5()
    dfs = find_dfs(model)
    return model, dfs, build_partition(model, dfs)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
