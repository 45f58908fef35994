# tests/conftest.py
# Shared fixtures: small hand-built discrete tables and one cached simulated dataset.

from typing import Dict, Sequence

import numpy as np
import pandas as pd
import pytest

from confsel.schemas.config import SimConfig
from confsel.services.dataset import DiscreteDataset, RawDataset
from confsel.services.dgp import simulate


def make_discrete(columns: Dict[str, Sequence[int]], treatment=None, outcome=None) -> DiscreteDataset:
    """DiscreteDataset from named integer columns; levels are max + 1."""
    names = list(columns)
    codes = np.array([np.asarray(columns[name], dtype=np.int64) for name in names])
    levels = [int(row.max()) + 1 for row in codes]
    return DiscreteDataset(names, codes, levels, treatment, outcome)


def make_raw(columns: Dict[str, Sequence[float]], **kwargs) -> RawDataset:
    return RawDataset(pd.DataFrame(columns), **kwargs)


@pytest.fixture(scope="session")
def setting1_small() -> RawDataset:
    return simulate(SimConfig(setting=1, n=600, outcome="linear", seed=11, p_total=20))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20190101)
