"""Privacy amplification by Toeplitz-matrix universal hashing."""
from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve


def toeplitz_seed_bits(seed: int, n_in: int, out_len: int) -> np.ndarray:
    """The n_in + out_len - 1 random bits that define the Toeplitz matrix."""
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.integers(0, 2, n_in + out_len - 1, dtype=np.uint8)


def privacy_amplification(bits, seed: int, out_len: int) -> np.ndarray:
    """Compress ``bits`` to ``out_len`` bits with the Toeplitz hash selected by ``seed``.

    Output bit i is sum_j r[i - j + n - 1] * bits[j] mod 2, i.e. the
    matrix T[i, j] = r[i - j + n - 1] is constant along diagonals.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    n = len(bits)
    if out_len < 0:
        raise ValueError("out_len must be >= 0")
    if out_len > n:
        raise ValueError(f"cannot extract {out_len} bits from {n}")
    if out_len == 0:
        return np.zeros(0, dtype=np.uint8)
    r = toeplitz_seed_bits(seed, n, out_len)
    # full convolution; exact in float64 since every count is <= n < 2**53
    conv = fftconvolve(r.astype(float), bits.astype(float))
    counts = np.rint(conv[n - 1:n - 1 + out_len]).astype(np.int64)
    return (counts & 1).astype(np.uint8)
