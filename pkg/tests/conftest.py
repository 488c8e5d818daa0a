import numpy as np
import pytest

from blockflow.datagen import (
    GenConfig,
    estimate_block_count_prior,
    generate_records,
    load_builtin_vocabulary,
)


@pytest.fixture(scope="session")
def toy_vocab():
    return load_builtin_vocabulary("toy")


@pytest.fixture(scope="session")
def cc_vocab():
    return load_builtin_vocabulary("crosscoupling")


@pytest.fixture(scope="session")
def toy_records(toy_vocab):
    return generate_records(
        toy_vocab, GenConfig(depth_min=1, depth_max=2, count=30, seed=11))


@pytest.fixture(scope="session")
def toy_prior(toy_records):
    return estimate_block_count_prior(toy_records)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
