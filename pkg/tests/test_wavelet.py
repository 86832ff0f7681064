import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wavediff.errors import DataError
from wavediff.wavelet import band_sizes, haar_dwt, haar_idwt

series_512 = arrays(
    np.float64, st.just(512),
    elements=st.floats(min_value=-100, max_value=100, allow_nan=False),
)


def test_band_sizes_for_512():
    sizes = band_sizes(9)
    assert sizes == [1, 1, 2, 4, 8, 16, 32, 64, 128, 256]
    assert sum(sizes) == 512


def test_constant_series_mini_case():
    bands = haar_dwt(np.ones(4))
    assert bands[0][0] == pytest.approx(2.0)          # mean * sqrt(N)
    assert bands[1][0] == pytest.approx(0.0)
    np.testing.assert_allclose(bands[2], [0.0, 0.0])


def test_plus_minus_mini_case():
    bands = haar_dwt(np.array([1.0, -1.0]))
    assert bands[0][0] == pytest.approx(0.0)
    assert bands[1][0] == pytest.approx(np.sqrt(2.0))


def test_idwt_of_constant_case():
    rebuilt = haar_idwt([np.array([2.0]), np.array([0.0]), np.array([0.0, 0.0])])
    np.testing.assert_allclose(rebuilt, np.ones(4))


def test_single_finest_coefficient_is_local():
    bands = [np.zeros(s) for s in band_sizes(9)]
    bands[-1][37] = 1.0
    x = haar_idwt(bands)
    support = np.flatnonzero(x != 0)
    np.testing.assert_array_equal(support, [74, 75])


def test_roundtrip_and_parseval_on_many_vectors(rng):
    x = rng.standard_normal((1000, 512))
    bands = haar_dwt(x)
    assert [b.shape[-1] for b in bands] == band_sizes(9)
    np.testing.assert_allclose(haar_idwt(bands), x, atol=1e-12)
    energy = sum((b**2).sum(axis=-1) for b in bands)
    np.testing.assert_allclose(energy, (x**2).sum(axis=-1), rtol=1e-9)


@given(series_512)
@settings(max_examples=30, deadline=None)
def test_roundtrip_property(x):
    np.testing.assert_allclose(haar_idwt(haar_dwt(x)), x, atol=1e-9)


def test_linearity(rng):
    x = rng.standard_normal(512)
    y = rng.standard_normal(512)
    a, b = 2.5, -1.25
    left = haar_dwt(a * x + b * y)
    bx, by = haar_dwt(x), haar_dwt(y)
    for lhs, bxk, byk in zip(left, bx, by):
        np.testing.assert_allclose(lhs, a * bxk + b * byk, atol=1e-9)


def test_locality_one_sample_touches_one_path(rng):
    x = rng.standard_normal(512)
    i = 301
    y = x.copy()
    y[i] += 1.0
    before = haar_dwt(x)
    after = haar_dwt(y)
    changed = []
    for k, (b0, b1) in enumerate(zip(before, after)):
        idx = np.flatnonzero(np.abs(b1 - b0) > 1e-12)
        changed.extend((k, j) for j in idx)
    # one coefficient per band: the approximation plus one detail per scale
    assert len(changed) == 10
    sizes = band_sizes(9)
    for k, j in changed:
        block = 512 // sizes[k]
        assert j * block <= i < (j + 1) * block


def test_bad_lengths_rejected():
    with pytest.raises(DataError):
        haar_dwt(np.zeros(390))
    with pytest.raises(DataError):
        haar_dwt(np.array([1.0, np.nan] + [0.0] * 510))
    with pytest.raises(DataError):
        haar_idwt([np.zeros(1), np.zeros(3)])
