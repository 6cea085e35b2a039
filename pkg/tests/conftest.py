import numpy as np
import pytest

from rossbylab.spectral_core import make_grid


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid():
    return make_grid(16, 16, 8, 2 * np.pi)


def band_limited(grid, rng, parity="even", frac=0.3):
    """Random real field whose coefficients sit well inside the dealias box."""
    from rossbylab.spectral_core import forward_array, inverse_array

    vals = rng.standard_normal(grid.shape)
    c = forward_array(vals, parity)
    jx = np.abs(np.fft.fftfreq(grid.nx, 1.0 / grid.nx))
    jy = np.abs(np.fft.fftfreq(grid.ny, 1.0 / grid.ny))
    kz = np.arange(grid.nz)
    m = ((jx[:, None, None] < frac * grid.nx) & (jy[None, :, None] < frac * grid.ny)
         & (kz[None, None, :] < max(1, int(frac * 2 * grid.nz))))
    c = c * m
    return inverse_array(c, parity), c
