import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from isnls.spectral import Grid, random_field

settings.register_profile(
    "isnls", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("isnls")


def brute_cubic(c: np.ndarray, grid: Grid) -> np.ndarray:
    """Orthonormal coefficients of |u|^2 u by direct triple convolution over the
    support of ``c``, restricted to the grid's index range."""
    support = [tuple(int(v) for v in idx) for idx in zip(*np.nonzero(np.abs(c) > 0))]
    kvecs = {}
    for idx in support:
        kvecs[idx] = tuple(int(iv.ravel()[i]) for iv, i in zip(grid.index_vectors, idx))
    out = np.zeros(grid.shape, dtype=complex)
    half = [n // 2 for n in grid.n]
    for a in support:
        for b in support:
            for d in support:
                k = [kvecs[a][j] - kvecs[b][j] + kvecs[d][j] for j in range(grid.dim)]
                if any(not (-h <= kj < h) for kj, h in zip(k, half)):
                    continue
                pos = tuple(kj % n for kj, n in zip(k, grid.n))
                out[pos] += c[a] * np.conj(c[b]) * c[d]
    return out / grid.volume


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid3():
    return Grid.cube(16, 3)


@pytest.fixture
def grid2():
    return Grid.cube(16, 2)


@pytest.fixture
def smooth3(grid3, rng):
    return random_field(grid3, rng, decay=3.0, kmax=4, norm=1.0)
