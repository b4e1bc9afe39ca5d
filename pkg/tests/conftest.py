import dataclasses

import pytest

from hifbench import profiles
from hifbench.waveforms import GenConfig, ParamRanges, build_dataset


@pytest.fixture(scope="session")
def small_config() -> GenConfig:
    """A quick 40-window source config for unit tests."""
    return GenConfig(scenario="source", count=40, seed=1234)


@pytest.fixture(scope="session")
def small_dataset(small_config):
    return build_dataset(small_config)


@pytest.fixture(scope="session")
def tiny_target_dataset():
    cfg = dataclasses.replace(profiles.CASE2_GEN, count=60)
    return build_dataset(cfg)
