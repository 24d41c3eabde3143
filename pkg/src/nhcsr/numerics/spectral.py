"""Power spectra. Evaluation only, so plain arrays in and out."""

import numpy as np

from .tensor import Tensor


def fft2_power(f) -> np.ndarray:
    """Squared magnitude of the 2-D DFT with the zero frequency shifted to the centre.

    numpy's pocketfft handles arbitrary extents (grids here are 32*alpha + 1).
    """
    if isinstance(f, Tensor):
        f = f.data
    f = np.asarray(f, dtype=np.float64)
    spec = np.fft.fftshift(np.fft.fft2(f))
    return spec.real ** 2 + spec.imag ** 2
