"""
Shared fixtures and the `slow` marker (skipped unless --runslow is given).
"""
from typing import Optional, Sequence

import numpy as np
import pytest

from changewatch.config import SamplerConfig
from changewatch.data_model import DataStream, DayBatch, VariableSpec


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run long statistical experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long statistical experiment, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def gaussian_stream(
    rng: np.random.Generator,
    n_days: int = 6,
    n_obs: int = 20,
    n_vars: int = 3,
    change_after: Optional[int] = None,
    shift: Sequence[float] = (),
) -> DataStream:
    """Continuous iid N(0, I) days; `shift` is added to the leading variables after `change_after`."""
    variables = tuple(VariableSpec(name=f"x{j + 1}", kind="continuous") for j in range(n_vars))
    days = []
    for day in range(1, n_days + 1):
        codes = rng.standard_normal((n_obs, n_vars))
        if change_after is not None and day > change_after:
            codes[:, :len(shift)] += np.asarray(shift)
        days.append(DayBatch(day=day, codes=codes))
    return DataStream(variables=variables, days=tuple(days))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def continuous_stream(rng):
    return gaussian_stream(rng)


@pytest.fixture
def mixed_stream(rng):
    """One variable of each kind, with a few missing cells."""
    variables = (
        VariableSpec(name="temp", kind="continuous", lower=0.0),
        VariableSpec(name="alarm", kind="binary"),
        VariableSpec(name="grade", kind="ordinal", levels=("0", "1", "2")),
        VariableSpec(name="shift", kind="nominal", levels=("day", "night", "weekend")),
    )
    days = []
    for day in range(1, 5):
        n = 12
        codes = np.column_stack([
            np.abs(rng.standard_normal(n)) * np.where(rng.random(n) < 0.2, 0.0, 1.0),
            rng.integers(0, 2, n),
            rng.integers(0, 3, n),
            rng.integers(0, 3, n),
        ]).astype(float)
        codes[rng.random(codes.shape) < 0.1] = np.nan
        codes[0, 1:] = [0.0, 1.0, 2.0]
        days.append(DayBatch(day=day, codes=codes))
    return DataStream(variables=variables, days=tuple(days))


@pytest.fixture
def quick_config():
    return SamplerConfig(n_iterations=12, burn_in=4, components=1, seed=7, snapshot_stride=1, max_regimes=4)
