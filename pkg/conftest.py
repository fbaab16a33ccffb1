from pathlib import Path

import numpy as np
import pytest

from decoders import DecoderConfig
from system import gen_repetition, gen_rotated_toric, gen_unrotated_toric, read_system

HERE = Path(__file__).parent


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def lookup():
    return DecoderConfig(backend="lookup")


@pytest.fixture
def bnb():
    return DecoderConfig(backend="branch_and_bound")


@pytest.fixture
def rep5():
    return gen_repetition(5)


@pytest.fixture
def ut4():
    return gen_unrotated_toric(4)


@pytest.fixture
def ut24():
    return gen_unrotated_toric(2, 4)


@pytest.fixture
def ut35():
    return gen_unrotated_toric(3, 5)


@pytest.fixture
def rt4():
    return gen_rotated_toric(4)


@pytest.fixture
def circuit_toy():
    return read_system(HERE / "circuit_toy_system.txt")
