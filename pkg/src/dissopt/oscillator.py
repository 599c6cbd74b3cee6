"""Closed-form damped-oscillator moments and epsilon-equilibration times.

Conventions: x~ = x - x*, r = p/m + gamma x~, s = a x~ + gamma p. The
canonical momentum of the friction Hamiltonian is p = m e^{beta t/m} xdot.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Literal, Sequence

import numpy as np

from .numerics import modified_lambert, sym_eig

Setting = Literal["classical_1d", "classical_nd", "quantum_1d", "quantum_nd"]

_REGIME_TOL = 1e-12


class DampingError(ValueError):
    """The damping condition beta^2 <= 4 m a fails."""


@dataclass(frozen=True)
class FrictionParams:
    beta: float
    m: float = 1.0

    def __post_init__(self):
        if self.beta < 0 or self.m <= 0:
            raise ValueError("need beta >= 0 and m > 0")

    @property
    def gamma(self) -> float:
        return self.beta / (2.0 * self.m)

    def discriminant(self, a: float) -> float:
        return self.beta ** 2 - 4.0 * self.m * a

    def regime(self, a: float) -> str:
        disc = self.discriminant(a)
        if abs(disc) <= _REGIME_TOL * max(self.beta ** 2, 4.0 * self.m * a):
            return "critical"
        return "overdamped" if disc > 0 else "underdamped"

    def omega(self, a: float) -> float:
        if self.regime(a) == "critical":
            return 0.0
        disc = self.discriminant(a)
        if disc > 0:
            raise DampingError(f"overdamped: beta^2 = {self.beta**2:.6g} > 4 m a = {4*self.m*a:.6g}")
        return math.sqrt(-disc) / (2.0 * self.m)


@dataclass
class MomentSummary:
    """First and second moments per coordinate.

    cov_xp is the symmetrized covariance 1/2<xp+px> - <x><p> (identical to
    the ordinary covariance for classical distributions). Optional full
    covariance matrices let coupled problems be rotated into an eigenframe.
    """

    mean_x: np.ndarray
    mean_p: np.ndarray
    var_x: np.ndarray
    var_p: np.ndarray
    cov_xp: np.ndarray
    cov_xx_full: np.ndarray | None = field(default=None, repr=False)
    cov_pp_full: np.ndarray | None = field(default=None, repr=False)
    cov_xp_full: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("mean_x", "mean_p", "var_x", "var_p", "cov_xp"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        n = self.mean_x.size
        for name in ("mean_p", "var_x", "var_p", "cov_xp"):
            if getattr(self, name).size != n:
                raise ValueError(f"{name} has {getattr(self, name).size} entries, expected {n}")

    @classmethod
    def gaussian(cls, mean_x, mean_p, var_x, var_p, cov_xp=0.0) -> "MomentSummary":
        mx = np.atleast_1d(np.asarray(mean_x, dtype=float))
        n = mx.size
        b = lambda v: np.broadcast_to(np.asarray(v, dtype=float), n).copy()  # noqa: E731
        return cls(mx, b(mean_p), b(var_x), b(var_p), b(cov_xp))

    @classmethod
    def coherent(cls, mean_x, mean_p, sigma: float) -> "MomentSummary":
        """Minimum-uncertainty packet with position std sigma (hbar = 1)."""
        return cls.gaussian(mean_x, mean_p, sigma ** 2, 1.0 / (4.0 * sigma ** 2), 0.0)

    @property
    def dim(self) -> int:
        return self.mean_x.size

    def full_covariances(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        xx = self.cov_xx_full if self.cov_xx_full is not None else np.diag(self.var_x)
        pp = self.cov_pp_full if self.cov_pp_full is not None else np.diag(self.var_p)
        xp = self.cov_xp_full if self.cov_xp_full is not None else np.diag(self.cov_xp)
        return xx, pp, xp

    def r_moments(self, gamma: float, x_star, m: float = 1.0):
        """(<r>, sigma_r^2, cov(x, r)) per coordinate."""
        xs = np.broadcast_to(np.asarray(x_star, dtype=float), self.mean_x.shape)
        mean_r = self.mean_p / m + gamma * (self.mean_x - xs)
        var_r = gamma ** 2 * self.var_x + self.var_p / m ** 2 + 2.0 * gamma * self.cov_xp / m
        cov_xr = gamma * self.var_x + self.cov_xp / m
        return mean_r, var_r, cov_xr

    def to_dict(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist()
                for k in ("mean_x", "mean_p", "var_x", "var_p", "cov_xp")}


@dataclass
class EquilibrationReport:
    t_x1: float
    t_x2: float
    t_s1: float
    t_s2: float
    t_s3: float
    epsilon: float
    epsilon_prime: float
    setting: str = "quantum_nd"

    @property
    def t_star(self) -> float:
        return max(self.t_x1, self.t_x2, self.t_s1, self.t_s2, self.t_s3)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["t_star"] = self.t_star
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# ---------------------------------------------------------------------------
# Closed-form evolution


def _cs(t, omega):
    """(cos wt, sin(wt)/w) with the critical limit (1, t)."""
    t = np.asarray(t, dtype=float)
    if omega == 0.0:
        return np.ones_like(t), t
    return np.cos(omega * t), np.sin(omega * t) / omega


def _require_damping(params: FrictionParams, a: float) -> float:
    if params.regime(a) == "overdamped":
        raise DampingError(
            f"overdamped regime rejected: beta^2 = {params.beta**2:.6g} > 4 m a = {4*params.m*a:.6g}")
    return params.omega(a)


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


def classical_mean_position(t, params: FrictionParams, a: float, x_star: float,
                            init: MomentSummary, index: int = 0):
    """<x>_t for one coordinate of a damped oscillator with curvature a."""
    w = _require_damping(params, a)
    g = params.gamma
    x0 = init.mean_x[index] - x_star
    r0 = init.mean_p[index] / params.m + g * x0
    C, S = _cs(t, w)
    return _scalar(x_star + np.exp(-g * np.asarray(t, float)) * (x0 * C + r0 * S))


def classical_mean_momentum(t, params: FrictionParams, a: float, x_star: float,
                            init: MomentSummary, index: int = 0):
    """Canonical <p>_t = e^{gamma t} (p0 cos wt - s0 sin(wt)/w)."""
    w = _require_damping(params, a)
    g = params.gamma
    x0 = init.mean_x[index] - x_star
    p0 = init.mean_p[index]
    s0 = a * x0 + g * p0
    C, S = _cs(t, w)
    return _scalar(np.exp(g * np.asarray(t, float)) * (p0 * C - s0 * S))


def classical_variance(t, params: FrictionParams, a: float, init: MomentSummary, index: int = 0):
    """sigma_x^2(t) = e^{-2 gamma t}(C^2 s_x + 2 C S cov(x,r) + S^2 s_r)."""
    w = _require_damping(params, a)
    g = params.gamma
    _, var_r, cov_xr = init.r_moments(g, init.mean_x, params.m)
    C, S = _cs(t, w)
    tt = np.asarray(t, float)
    v = np.exp(-2 * g * tt) * (C * C * init.var_x[index] + 2 * C * S * cov_xr[index]
                                + S * S * var_r[index])
    return _scalar(v)


def variance_envelope(t, params: FrictionParams, init: MomentSummary, index: int = 0):
    g = params.gamma
    _, var_r, cov_xr = init.r_moments(g, init.mean_x, params.m)
    tt = np.asarray(t, float)
    return _scalar(np.exp(-2 * g * tt) * (init.var_x[index] + 2 * tt * abs(cov_xr[index])
                                          + tt * tt * var_r[index]))


def quantum_second_moments(t, params: FrictionParams, a: float, x_star: float,
                           init: MomentSummary, index: int = 0):
    """(<x~^2>_t, <p^2>_t) with symmetrized cross moments."""
    w = _require_damping(params, a)
    g, m = params.gamma, params.m
    xm = init.mean_x[index] - x_star
    pm = init.mean_p[index]
    xx = init.var_x[index] + xm * xm
    pp = init.var_p[index] + pm * pm
    xp = init.cov_xp[index] + xm * pm          # 1/2 <{x~, p}>
    rr = pp / m ** 2 + 2 * g * xp / m + g * g * xx
    xr = xp / m + g * xx                       # 1/2 <{x~, r}>
    ss = a * a * xx + g * g * pp + 2 * a * g * xp
    ps = a * xp + g * pp                       # 1/2 <{p, s}>
    C, S = _cs(t, w)
    tt = np.asarray(t, float)
    x2 = np.exp(-2 * g * tt) * (C * C * xx + 2 * C * S * xr + S * S * rr)
    p2 = np.exp(2 * g * tt) * (C * C * pp - 2 * C * S * ps + S * S * ss)
    return _scalar(x2), _scalar(p2)


def phase_space_map(t: float, params: FrictionParams, a: float) -> np.ndarray:
    """Linear map (x~_0, p_0) -> (x~_t, p_t) of the friction dynamics."""
    w = _require_damping(params, a)
    g = params.gamma
    C, S = _cs(t, w)
    C, S = float(C), float(S)
    eg = math.exp(g * t)
    return np.array([[(C + g * S) / eg, S / (params.m * eg)],
                     [-a * S * eg, (C - g * S) * eg]])


def evolve_gaussian_moments(t: float, params: FrictionParams, a: float, x_star: float,
                            mean: Sequence[float], cov: np.ndarray):
    """Mean and covariance of (x, p) at time t for a linear oscillator."""
    M = phase_space_map(t, params, a)
    mu = np.array([mean[0] - x_star, mean[1]])
    mu_t = M @ mu
    return np.array([mu_t[0] + x_star, mu_t[1]]), M @ np.asarray(cov) @ M.T


# ---------------------------------------------------------------------------
# Equilibration times


def _log_time(scale: float, arg: float) -> float:
    """scale * log(arg) clamped at 0 (arg <= 1 means already satisfied)."""
    if not arg > 1.0:
        return 0.0
    return scale * math.log(arg)


def _w_time(scale: float, arg: float) -> float:
    """-scale * W~(arg); an infinite or nan argument only appears for zero moments."""
    if arg == 0.0 or arg == -0.0:
        return 0.0
    if not math.isfinite(arg):
        arg = -math.inf
    if arg < -math.exp(-1.0):
        return 0.0
    return -scale * modified_lambert(arg)


def _safe_div(num: float, den: float) -> float:
    if den == 0.0:
        return -math.inf if num != 0 else 0.0
    return num / den


def equilibration_time(eps: float, params: FrictionParams, spectrum, init: MomentSummary,
                       setting: Setting = "quantum_nd", x_star=0.0) -> EquilibrationReport:
    """The five candidate times whose max bounds the epsilon-equilibration time.

    spectrum is a scalar curvature a (1D settings) or (lambda_min, lambda_max).
    """
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    g, m = params.gamma, params.m
    if np.ndim(spectrum) == 0:
        lmin = lmax = float(spectrum)
    else:
        lmin, lmax = (float(v) for v in spectrum)
    if params.beta ** 2 > 4 * m * lmin * (1 + _REGIME_TOL):
        raise DampingError(
            f"damping condition violated: beta^2 = {params.beta**2:.6g} > 4 m lambda_min = {4*m*lmin:.6g}")
    if g <= 0:
        raise DampingError("equilibration needs beta > 0")
    xs = np.broadcast_to(np.asarray(x_star, dtype=float), init.mean_x.shape)
    mean_r, var_r, cov_xr = init.r_moments(g, xs, m)
    dx = float(np.linalg.norm(init.mean_x - xs))
    nr = float(np.linalg.norm(mean_r))
    sx = float(init.var_x.sum())
    sc = float(abs(cov_xr.sum()))
    sr = float(var_r.sum())
    if setting.endswith("_1d"):
        if init.dim != 1:
            raise ValueError("1D settings need a one-dimensional MomentSummary")
        eps_p = math.sqrt(eps / (2 * lmax))
    else:
        eps_p = math.sqrt(2 * eps / lmax)
    a = lmax
    t_x1 = _log_time(1 / g, math.sqrt(8 * a / eps) * dx)
    t_x2 = _w_time(1 / g, _safe_div(-math.sqrt(eps / (8 * a)) * g, nr))
    t_s1 = _log_time(1 / (2 * g), 18 * a * sx / eps)
    t_s2 = _w_time(1 / (2 * g), _safe_div(-g * eps, 18 * a * sc))
    t_s3 = _w_time(1 / g, -g * math.sqrt(eps / (18 * a * sr)) if sr > 0 else 0.0)
    return EquilibrationReport(t_x1, t_x2, t_s1, t_s2, t_s3, float(eps), eps_p, setting)


def chi0(init: MomentSummary, params: FrictionParams, x_star=0.0) -> float:
    g, m = params.gamma, params.m
    xs = np.broadcast_to(np.asarray(x_star, dtype=float), init.mean_x.shape)
    terms = (
        g * g * float(np.sum((init.mean_x - xs) ** 2)),
        float(np.sum(init.mean_p ** 2)) / m ** 2,
        g * g * float(init.var_x.sum()),
        g / m * abs(float(init.cov_xp.sum())),
        float(init.var_p.sum()) / m ** 2,
    )
    return max(terms)


def asymptotic_t_star(eps: float, lam_min: float, lam_max: float, chi0_value: float) -> float:
    """Order-of-magnitude envelope with unit constant, not a certified time."""
    arg = lam_max / lam_min * chi0_value / eps
    if not arg > 1.0:
        return 0.0
    return math.log(arg) / math.sqrt(lam_min)


@dataclass
class Eigenframe:
    Q: np.ndarray          # rows are eigenvectors: Q A Q^T = diag(lam)
    lam: np.ndarray
    moments: MomentSummary
    x_star: np.ndarray

    def to_original(self, y: np.ndarray) -> np.ndarray:
        """Map eigenframe displacements y back to positions x = x* + Q^T y."""
        return self.x_star + np.asarray(y) @ self.Q


def decouple_quadratic(A, x_star, init: MomentSummary) -> Eigenframe:
    """Rotate a coupled quadratic and its moments into the eigenframe.

    Eigenframe coordinates are displacements y = Q (x - x*), so the optimum
    sits at y = 0.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    lam, V = sym_eig(A)
    if lam[0] <= 0:
        raise ValueError("decouple_quadratic needs a positive definite matrix")
    n = lam.size
    if np.array_equal(A, np.diag(np.diag(A))):
        # diagonal input keeps its own axes
        lam = np.diag(A).copy()
        Q = np.eye(n)
    else:
        Q = V.T
    xs = np.atleast_1d(np.asarray(x_star, dtype=float))
    xx, pp, xp = init.full_covariances()
    xx_t, pp_t, xp_t = Q @ xx @ Q.T, Q @ pp @ Q.T, Q @ xp @ Q.T
    mom = MomentSummary(
        mean_x=Q @ (init.mean_x - xs), mean_p=Q @ init.mean_p,
        var_x=np.diag(xx_t).copy(), var_p=np.diag(pp_t).copy(), cov_xp=np.diag(xp_t).copy(),
        cov_xx_full=xx_t, cov_pp_full=pp_t, cov_xp_full=xp_t)
    return Eigenframe(Q, lam, mom, xs)


@dataclass(frozen=True)
class GaussianInit:
    """Gaussian initial data: means and position/momentum standard deviations.

    The quantum drivers use a minimum-uncertainty packet (sigma_p derived
    from sigma_x); the classical drivers use sigma_p as given.
    """

    mean_x: tuple[float, ...]
    mean_p: tuple[float, ...]
    sigma_x: tuple[float, ...]
    sigma_p: tuple[float, ...] | None = None

    @classmethod
    def make(cls, mean_x, mean_p=0.0, sigma_x=0.5 ** 0.5, sigma_p=None) -> "GaussianInit":
        mx = tuple(np.atleast_1d(np.asarray(mean_x, dtype=float)).tolist())
        n = len(mx)
        b = lambda v: tuple(np.broadcast_to(np.asarray(v, dtype=float), n).tolist())  # noqa: E731
        return cls(mx, b(mean_p), b(sigma_x), None if sigma_p is None else b(sigma_p))

    @property
    def dim(self) -> int:
        return len(self.mean_x)

    def quantum_moments(self) -> MomentSummary:
        sx = np.asarray(self.sigma_x)
        return MomentSummary.gaussian(self.mean_x, self.mean_p, sx ** 2, 1 / (4 * sx ** 2), 0.0)

    def classical_moments(self) -> MomentSummary:
        if self.sigma_p is None:
            raise ValueError("classical initial data needs sigma_p")
        return MomentSummary.gaussian(self.mean_x, self.mean_p, np.square(self.sigma_x),
                                      np.square(self.sigma_p), 0.0)

    def _isotropic(self) -> bool:
        iso = len(set(self.sigma_x)) == 1
        if self.sigma_p is not None:
            iso = iso and len(set(self.sigma_p)) == 1
        return iso

    def is_product_in(self, Q: np.ndarray) -> bool:
        """Whether the packet factorizes over the rows of the rotation Q."""
        Q = np.asarray(Q)
        perm = np.allclose(np.abs(Q), np.eye(Q.shape[0]))
        return perm or self._isotropic()

    def sigma_in(self, Q: np.ndarray, which: str = "x") -> np.ndarray:
        s = np.asarray(self.sigma_x if which == "x" else self.sigma_p, dtype=float)
        return np.abs(np.asarray(Q)) @ s if not self._isotropic() else s.copy()
