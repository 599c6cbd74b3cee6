"""Special functions, finite-difference stencils, circulant operators, seeded
randomness and a small symmetric eigensolver shared by the other modules."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

logger = logging.getLogger(__name__)

Derivative = Literal["first", "second"]

_INV_E = math.exp(-1.0)


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


# ---------------------------------------------------------------------------
# Lambert W, lower branch


def _lambert_bisect(y: float) -> float:
    # w e^w is strictly decreasing on (-inf, -1], from 0^- down to -1/e
    lo = min(-2.0, 2.0 * (math.log(-y) - 1.0))
    while lo * math.exp(lo) <= y:
        lo *= 2.0
    hi = -1.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid * math.exp(mid) > y:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4e-16 * abs(mid):
            break
    return 0.5 * (lo + hi)


def lambert_w_minus1(y: float, *, tol: float = 1e-12, max_iter: int = 64) -> float:
    """Lower real branch W_{-1}(y) for y in [-1/e, 0).

    Halley iteration from the asymptotic seed ln(-y) - ln(-ln(-y)); close to
    the branch point the square-root series is used as the seed instead.
    Falls back to bisection if Halley fails to reach the residual target.
    """
    y = float(y)
    if not (y < 0.0) or y < -_INV_E * (1.0 + 4e-16):
        raise DomainError(f"W_-1 needs -1/e <= y < 0, got {y!r}")
    if y <= -_INV_E:
        return -1.0

    q = math.e * y + 1.0
    if q < 0.25:
        p = -math.sqrt(2.0 * max(q, 0.0))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    else:
        ly = math.log(-y)
        w = ly - math.log(-ly)

    for _ in range(max_iter):
        ew = math.exp(w)
        r = w * ew - y
        if abs(r) <= tol * abs(y):
            if w > -1.0:
                break
            # one Newton polish; keep it only if it lowers the residual
            wn = w - r / (ew * (w + 1.0)) if w != -1.0 else w
            if wn <= -1.0 and abs(wn * math.exp(wn) - y) < abs(r):
                return wn
            return w
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        denom = ew * wp1 - (w + 2.0) * r / (2.0 * wp1)
        if denom == 0.0 or not math.isfinite(denom):
            break
        w_new = w - r / denom
        if w_new > -1.0:
            w_new = 0.5 * (w - 1.0)
        w = w_new

    logger.debug("lambert_w_minus1: Halley did not settle for y=%r, bisecting", y)
    w = _lambert_bisect(y)
    return min(w, -1.0)


def modified_lambert(x: float) -> float:
    """W_{-1}(x) on [-1/e, 0) and 0 below -1/e."""
    x = float(x)
    if x >= 0.0:
        raise DomainError(f"modified Lambert W needs x < 0, got {x!r}")
    if x < -_INV_E:
        return 0.0
    return lambert_w_minus1(x)


def sinhc(x):
    """sinh(x)/x with a Taylor branch near zero, sinhc(0) = 1."""
    arr = np.asarray(x, dtype=float)
    out = np.empty_like(arr)
    small = np.abs(arr) < 1e-4
    xs = arr[small]
    out[small] = 1.0 + xs * xs / 6.0 + xs ** 4 / 120.0
    xl = arr[~small]
    out[~small] = np.sinh(xl) / xl
    if np.ndim(x) == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# Finite differences


def _vandermonde_moment_solve(nodes: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve sum_j a_j z_j**k = rhs_k, k = 0..n-1 (Bjorck-Pereyra).

    This ordering of the Vandermonde system is solved with high relative
    accuracy for positive increasing nodes, which is what keeps stencils
    usable up to d = 32 in double precision.
    """
    x = np.asarray(nodes, dtype=float)
    a = np.array(rhs, dtype=float)
    n = x.size - 1
    for k in range(n):
        for i in range(n, k, -1):
            a[i] -= x[k] * a[i - 1]
    for k in range(n - 1, -1, -1):
        for i in range(k + 1, n + 1):
            a[i] /= x[i] - x[i - k - 1]
        for i in range(k, n):
            a[i] -= a[i + 1]
    return a


@dataclass(frozen=True)
class Stencil:
    order: int
    derivative: Derivative
    coefficients: np.ndarray = field(repr=False)
    spacing: float = 1.0

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(-self.order, self.order + 1)

    @property
    def power(self) -> int:
        return 1 if self.derivative == "first" else 2

    def scaled(self) -> np.ndarray:
        """Coefficients divided by h**k, ready to apply on the grid."""
        return self.coefficients / self.spacing ** self.power

    def norm1(self) -> float:
        return float(np.abs(self.scaled()).sum())

    def apply_interior(self, values: np.ndarray) -> np.ndarray:
        """Non-periodic application; returns len(values) - 2d entries."""
        v = np.asarray(values)
        d = self.order
        c = self.scaled()
        n = v.shape[0]
        out = np.zeros(n - 2 * d, dtype=np.result_type(v, float))
        for j, cj in zip(self.offsets, c):
            if cj != 0.0:
                out += cj * v[d + j: n - d + j]
        return out

    def symbol(self, n: int) -> np.ndarray:
        """Eigenvalues of the periodic stencil on n points, DFT ordering."""
        if n < 2 * self.order + 1:
            raise ValueError(f"grid of {n} points too small for order {self.order}")
        k = np.arange(n)
        theta = 2.0 * np.pi * k / n
        c = self.scaled()
        d = self.order
        if self.derivative == "first":
            s = np.zeros(n)
            for j in range(1, d + 1):
                s += 2.0 * c[d + j] * np.sin(j * theta)
            return 1j * s
        s = np.full(n, c[d])
        for j in range(1, d + 1):
            s += 2.0 * c[d + j] * np.cos(j * theta)
        return s.astype(complex)


def central_difference_stencil(d: int, derivative: Derivative, h: float = 1.0) -> Stencil:
    """Central stencil of accuracy order 2d for the first or second derivative."""
    if int(d) != d or d < 1:
        raise ValueError(f"stencil half-width must be a positive integer, got {d!r}")
    if h <= 0:
        raise ValueError("spacing must be positive")
    d = int(d)
    j = np.arange(1, d + 1, dtype=float)
    z = j * j
    rhs = np.zeros(d)
    coef = np.zeros(2 * d + 1)
    if derivative == "first":
        # sum_j 2 j c_j (j^2)^(k-1) = delta_{k1}
        rhs[0] = 1.0
        u = _vandermonde_moment_solve(z, rhs)
        c = u / (2.0 * j)
        coef[d + 1:] = c
        coef[:d] = -c[::-1]
    elif derivative == "second":
        # sum_j 2 j^2 c_j (j^2)^(k-1) = 2 delta_{k1}
        rhs[0] = 2.0
        u = _vandermonde_moment_solve(z, rhs)
        c = u / (2.0 * z)
        coef[d + 1:] = c
        coef[:d] = c[::-1]
        coef[d] = -2.0 * c.sum()
    else:
        raise ValueError(f"unknown derivative {derivative!r}")
    return Stencil(order=d, derivative=derivative, coefficients=coef, spacing=float(h))


def circulant_apply(stencil: Stencil, field_line: np.ndarray, n: int | None = None,
                    axis: int = -1) -> np.ndarray:
    """Periodic stencil application through its DFT symbol."""
    arr = np.asarray(field_line)
    size = arr.shape[axis]
    if n is not None and n != size:
        raise ValueError(f"declared size {n} does not match field length {size}")
    sym = stencil.symbol(size)
    shape = [1] * arr.ndim
    shape[axis] = size
    out = np.fft.ifft(sym.reshape(shape) * np.fft.fft(arr, axis=axis), axis=axis)
    if np.isrealobj(arr):
        return out.real
    return out


def stencil_matrix(stencil: Stencil, n: int) -> np.ndarray:
    """Dense periodic stencil matrix, (M f)_i = sum_j c_j f_{i+j}."""
    if n < 2 * stencil.order + 1:
        raise ValueError("grid too small for stencil")
    M = np.zeros((n, n))
    for j, cj in zip(stencil.offsets, stencil.scaled()):
        idx = np.arange(n)
        M[idx, (idx + j) % n] += cj
    return M


# ---------------------------------------------------------------------------
# Randomness


@dataclass(frozen=True)
class SeededRng:
    """Philox-4x64 generator keyed by (seed, stream).

    The 128-bit Philox key is seed + 2**64 * stream, so each stream is an
    independent counter sequence under the same seed.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        seed = int(self.seed) & (2 ** 64 - 1)
        stream = int(self.stream) & (2 ** 64 - 1)
        return np.random.Generator(np.random.Philox(key=seed | (stream << 64)))

    def spawn(self, stream: int) -> "SeededRng":
        return SeededRng(self.seed, stream)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, SeededRng):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return SeededRng(0 if rng is None else int(rng)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


def wishart_sample(N: int, rng) -> np.ndarray:
    """A = B B^T with B an N x N standard-normal matrix, symmetrized."""
    if N < 1:
        raise ValueError("N must be >= 1")
    gen = as_generator(rng)
    B = gen.standard_normal((N, N))
    A = B @ B.T
    return 0.5 * (A + A.T)


# ---------------------------------------------------------------------------
# Symmetric eigenproblem


def sym_eig(A: np.ndarray, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and orthonormal eigenvectors (columns)."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("sym_eig needs a square matrix")
    scale = max(1.0, float(np.abs(A).max(initial=0.0)))
    asym = float(np.abs(A - A.T).max(initial=0.0))
    if asym > tol * scale:
        raise ValueError(f"matrix not symmetric (max asymmetry {asym:.3e})")
    w, Q = np.linalg.eigh(0.5 * (A + A.T))
    return w, Q
