import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stochsource.geometry import make_grid, make_receiver_ring


@pytest.fixture
def grid64():
    return make_grid(64, -1.0, 1.0)


@pytest.fixture
def grid32():
    return make_grid(32, -1.0, 1.0)


@pytest.fixture
def ring32():
    return make_receiver_ring(32, 2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_block_system(rng, n_blocks=3, rows=8, cols=32, regularization=1e-8,
                        consistent=None):
    """Random dense block system; if ``consistent`` is given, data is built
    from that exact coefficient vector."""
    from stochsource.kaczmarz import BlockSystem

    blocks = [rng.standard_normal((rows, cols)) for _ in range(n_blocks)]
    if consistent is not None:
        data = [b @ consistent for b in blocks]
    else:
        data = [rng.standard_normal(rows) for _ in range(n_blocks)]
    return BlockSystem(blocks=blocks, data=data, regularization=regularization)
