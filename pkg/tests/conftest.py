import os
import sys
from pathlib import Path

# the student's GEMMs are too small for BLAS threading to pay off; a single
# thread is faster and keeps timing-sensitive tests stable (set before numpy
# loads)
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_frame(rng, width, height, seq=0):
    from jitmask.imaging import Frame

    pixels = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    return Frame(width, height, pixels, seq=seq)


def random_matte(rng, width, height):
    from jitmask.imaging import AlphaMatte

    return AlphaMatte(width, height, rng.random((height, width)).astype(np.float32))


def random_mask(rng, width, height, p=0.5):
    from jitmask.imaging import BinaryMask

    return BinaryMask(width, height, rng.random((height, width)) < p)
