import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dissopt.numerics import (
    DomainError,
    SeededRng,
    central_difference_stencil,
    circulant_apply,
    lambert_w_minus1,
    modified_lambert,
    sinhc,
    stencil_matrix,
    sym_eig,
    wishart_sample,
)

mpmath.mp.dps = 50


def exact_stencil(d: int, k: int) -> list[Fraction]:
    """Central weights from the exact rational Vandermonde system sum_j c_j j^p = k! [p == k]."""
    offs = list(range(-d, d + 1))
    n = len(offs)
    M = [[Fraction(j) ** p for j in offs] + [Fraction(math.factorial(k) if p == k else 0)]
         for p in range(n)]
    for col in range(n):
        piv = next(r for r in range(col, n) if M[r][col] != 0)
        M[col], M[piv] = M[piv], M[col]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col] / M[col][col]
                M[r] = [a - f * b for a, b in zip(M[r], M[col])]
    return [M[i][n] / M[i][i] for i in range(n)]


# -- Lambert W ---------------------------------------------------------------


@pytest.mark.parametrize("y", [-1e-300, -1e-12, -1e-3, -0.1, -0.3, -0.36, -0.3678794, -math.exp(-1) + 1e-15])
def test_lambert_w_minus1_matches_mpmath(y):
    w = lambert_w_minus1(y)
    ref = float(mpmath.lambertw(mpmath.mpf(y), -1).real)
    near_branch = abs(y + math.exp(-1)) < 1e-10
    assert w == pytest.approx(ref, rel=1e-6 if near_branch else 1e-13)
    assert w <= -1.0


@settings(max_examples=300, deadline=None)
@given(st.floats(min_value=-math.exp(-1.0), max_value=-1e-300, allow_subnormal=False))
def test_lambert_residual_property(y):
    w = lambert_w_minus1(y)
    assert w <= -1.0
    assert abs(w * math.exp(w) - y) <= 1e-12 * abs(y)


def test_lambert_branch_point_and_domain():
    assert lambert_w_minus1(-math.exp(-1.0)) == -1.0
    for bad in (0.0, 0.1, -0.5, float("nan")):
        with pytest.raises(DomainError):
            lambert_w_minus1(bad)


def test_modified_lambert_extension():
    assert modified_lambert(-0.5) == 0.0
    assert modified_lambert(-1.0) == 0.0
    assert modified_lambert(-0.2) == lambert_w_minus1(-0.2)
    with pytest.raises(DomainError):
        modified_lambert(0.0)


# -- sinhc ---------------------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-30, max_value=30))
def test_sinhc_matches_mpmath(x):
    ref = float(mpmath.sinh(mpmath.mpf(x)) / mpmath.mpf(x)) if x != 0 else 1.0
    assert sinhc(x) == pytest.approx(ref, rel=1e-14)


def test_sinhc_vectorized_and_even():
    x = np.linspace(-2, 2, 41)
    np.testing.assert_allclose(sinhc(x), sinhc(-x), rtol=0, atol=0)
    assert sinhc(0.0) == 1.0


# -- stencils ------------------------------------------------------------------


@pytest.mark.parametrize("d", [1, 2, 3, 4, 6])
@pytest.mark.parametrize("deriv,k", [("first", 1), ("second", 2)])
def test_stencil_matches_exact_rational_weights(d, deriv, k):
    got = central_difference_stencil(d, deriv).coefficients
    ref = np.array([float(c) for c in exact_stencil(d, k)])
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-14)


def test_stencil_known_weights():
    np.testing.assert_allclose(central_difference_stencil(1, "second").coefficients, [1, -2, 1])
    np.testing.assert_allclose(central_difference_stencil(2, "second").coefficients,
                               [-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12], rtol=1e-14)
    np.testing.assert_allclose(central_difference_stencil(1, "first").coefficients, [-0.5, 0, 0.5])


def test_stencil_high_order_stays_accurate():
    st_ = central_difference_stencil(32, "second")
    c = st_.coefficients
    assert abs(c.sum()) < 1e-12
    j = st_.offsets.astype(float)
    assert float(np.dot(c, j ** 2)) == pytest.approx(2.0, rel=1e-10)


def test_stencil_rejects_bad_arguments():
    with pytest.raises(ValueError):
        central_difference_stencil(0, "first")
    with pytest.raises(ValueError):
        central_difference_stencil(2, "third")
    with pytest.raises(ValueError):
        central_difference_stencil(2, "first", h=0.0)


def test_stencil_derivative_of_sine_converges():
    errs = []
    for n in (32, 64):
        h = 2 * math.pi / n
        x = h * np.arange(n)
        st_ = central_difference_stencil(2, "second", h)
        errs.append(np.abs(circulant_apply(st_, np.sin(x)) + np.sin(x)).max())
    assert errs[1] < errs[0] / 12  # fourth order


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.sampled_from(["first", "second"]), st.integers(11, 80),
       st.floats(0.01, 2.0), st.integers(0, 2 ** 32 - 1))
def test_circulant_matches_dense(d, deriv, n, h, seed):
    st_ = central_difference_stencil(d, deriv, h)
    v = np.random.default_rng(seed).standard_normal(n)
    dense = stencil_matrix(st_, n) @ v
    fast = circulant_apply(st_, v)
    assert np.linalg.norm(fast - dense) <= 1e-12 * max(np.linalg.norm(dense), np.abs(st_.scaled()).sum() * np.linalg.norm(v))


def test_circulant_size_mismatch():
    st_ = central_difference_stencil(1, "first")
    with pytest.raises(ValueError):
        circulant_apply(st_, np.zeros(8), n=9)


# -- RNG, Wishart, eigen --------------------------------------------------------


def test_seeded_rng_reproducible_and_streams_independent():
    a = SeededRng(5).generator().standard_normal(4)
    b = SeededRng(5).generator().standard_normal(4)
    c = SeededRng(5, 1).generator().standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(0, 10 ** 6))
def test_wishart_sample_is_symmetric_psd(N, seed):
    A = wishart_sample(N, SeededRng(seed))
    np.testing.assert_array_equal(A, A.T)
    assert np.linalg.eigvalsh(A).min() > -1e-10 * np.abs(A).max()


def test_sym_eig_reconstructs():
    A = wishart_sample(6, SeededRng(2))
    w, V = sym_eig(A)
    assert np.all(np.diff(w) >= 0)
    np.testing.assert_allclose(V @ np.diag(w) @ V.T, A, atol=1e-10)
