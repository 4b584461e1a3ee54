import numpy as np
import pytest

from cmctrinoid.loops import LaurentLoop


def det_zero_moduli(c: np.ndarray) -> np.ndarray:
    """Moduli of the zeros of det X for a banded loop, via lam**(2K) det X(lam)."""
    band = (c.shape[0] - 1) // 2
    p = np.zeros(4 * band + 1, dtype=complex)
    for i in range(2 * band + 1):
        for j in range(2 * band + 1):
            p[i + j] += c[i, 0, 0] * c[j, 1, 1] - c[i, 0, 1] * c[j, 1, 0]
    return np.abs(np.roots(p[::-1]))


def random_banded_loops(rng, count, band=8, decay=0.3, nsamples=128, margin=0.7):
    """Random loops X_k = decay**|k| G_k with complex Gaussian G_k.

    Loops with a zero of det X in the annulus margin < |lam| < 1/margin are
    redrawn: their plus factor would not be resolved by the samples.
    """
    k = np.abs(np.arange(-band, band + 1))[:, None, None]
    out = []
    while len(out) < count:
        g = rng.normal(size=(2 * band + 1, 2, 2)) + 1j * rng.normal(size=(2 * band + 1, 2, 2))
        c = g * decay ** k
        z = det_zero_moduli(c)
        if np.all((z < margin) | (z > 1 / margin)):
            out.append(LaurentLoop(c, nsamples=nsamples))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
