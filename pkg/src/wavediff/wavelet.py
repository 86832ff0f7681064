"""Orthonormal Haar analysis/synthesis on dyadic-length series.

The pyramid for a length-2^n input is returned coarsest first:
band 0 is the single approximation coefficient, band k >= 1 holds the
detail coefficients of scale k with max(1, 2**(k-1)) entries. Total
coefficient count equals the input length and energy is preserved
(sqrt(2) convention), which the tests pin down via Parseval.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError

_SQRT2 = np.sqrt(2.0)


def band_sizes(n_levels: int) -> list[int]:
    """Coefficient counts per band, coarsest first: [1, 1, 2, ..., 2**(n-1)]."""
    return [1] + [2**k for k in range(n_levels)]


def num_levels(length: int) -> int:
    n = int(np.log2(length))
    if 2**n != length:
        raise DataError(f"series length {length} is not a power of two")
    return n


def haar_dwt(series: np.ndarray) -> list[np.ndarray]:
    """Decompose ``(..., 2**n)`` into n+1 bands of shape ``(..., size_k)``."""
    x = np.asarray(series, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DataError("input contains non-finite values")
    n = num_levels(x.shape[-1])
    details: list[np.ndarray] = []
    approx = x
    for _ in range(n):
        even = approx[..., 0::2]
        odd = approx[..., 1::2]
        details.append((even - odd) / _SQRT2)
        approx = (even + odd) / _SQRT2
    # details were collected finest first; emit coarsest first
    return [approx] + details[::-1]


def haar_idwt(bands: list[np.ndarray]) -> np.ndarray:
    """Exact inverse of :func:`haar_dwt`."""
    check_band_shapes(bands)
    approx = np.asarray(bands[0], dtype=np.float64)
    for detail in bands[1:]:
        detail = np.asarray(detail, dtype=np.float64)
        even = (approx + detail) / _SQRT2
        odd = (approx - detail) / _SQRT2
        out = np.empty(even.shape[:-1] + (2 * even.shape[-1],), dtype=np.float64)
        out[..., 0::2] = even
        out[..., 1::2] = odd
        approx = out
    return approx


def check_band_shapes(bands: list[np.ndarray]) -> None:
    if len(bands) < 2:
        raise DataError(f"need at least 2 bands, got {len(bands)}")
    sizes = [np.asarray(b).shape[-1] for b in bands]
    if sizes != band_sizes(len(bands) - 1):
        raise DataError(f"invalid band sizes {sizes}")
