"""Nose extended-system tools for global optimization.

Extended Hamiltonian (system momenta p, bath coordinate s > 0, bath
momentum p_s):

    H_N = |p|^2 / (2 m s^2) + f(x) + p_s^2 / (2 Q) + (g / beta) ln s

Microcanonical sums are written in the rescaled momenta p' = s p, where the
system energy is H_sys = |p'|^2 / (2m) + f(x).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import integrate

from .numerics import as_generator, sinhc
from .objective import ObjectiveSpec

logger = logging.getLogger(__name__)


class EmptyShellError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoseParams:
    m: float = 1.0
    Q: float = 1.0
    beta: float = 1.0
    g: float = 2.0
    E_ext: float = 0.0
    Delta: float = 0.1
    s_min: float = 0.5
    s_max: float = 2.0
    p_max: float = 3.0
    p_s_max: float = 3.0
    h_x: float = 0.01
    h_p: float = 0.01
    h_s: float = 0.01
    h_ps: float = 0.01
    formulas: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("m", "Q", "beta", "g", "Delta", "s_min", "s_max", "p_max", "p_s_max",
                     "h_x", "h_p", "h_s", "h_ps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"NoseParams.{name} must be positive")

    def scaled_spacings(self, factor: float) -> "NoseParams":
        return replace(self, h_x=self.h_x * factor, h_p=self.h_p * factor,
                       h_s=self.h_s * factor, h_ps=self.h_ps * factor)

    def to_dict(self) -> dict:
        return asdict(self)


def nose_hamiltonian_eval(x, p, s, p_s, obj: ObjectiveSpec, params: NoseParams) -> float:
    s = float(s)
    if not s > 0:
        raise ValueError("bath coordinate s must be positive")
    p = np.atleast_1d(np.asarray(p, dtype=float))
    kinetic = float(p @ p) / (2 * params.m * s * s)
    return (kinetic + float(obj.value_unchecked(np.atleast_1d(np.asarray(x, dtype=float))))
            + p_s * p_s / (2 * params.Q) + params.g / params.beta * math.log(s))


# ---------------------------------------------------------------------------
# Continuum reference


def _fmin_estimate(obj: ObjectiveSpec, lower, upper, n: int = 2001) -> float:
    axes = [np.linspace(a, b, n if obj.dim == 1 else 101) for a, b in zip(lower, upper)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return float(np.min(obj.value_unchecked(pts)))


def boltzmann_average_oracle(obj: ObjectiveSpec, beta: float, lower=None, upper=None,
                             rtol: float = 1e-8) -> np.ndarray:
    """<x> under exp(-beta f) on a box, by nested adaptive quadrature."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    lo = np.array(obj.lower if lower is None else np.broadcast_to(lower, obj.dim), dtype=float)
    hi = np.array(obj.upper if upper is None else np.broadcast_to(upper, obj.dim), dtype=float)
    fmin = _fmin_estimate(obj, lo, hi)

    def weight(*xs):
        return math.exp(-beta * (float(obj.value_unchecked(np.array(xs))) - fmin))

    ranges = list(zip(lo, hi))
    opts = {"epsrel": rtol, "epsabs": 0.0, "limit": 400}
    if obj.dim == 1:
        # split at interior grid points so narrow peaks are not missed
        pts = list(np.linspace(lo[0], hi[0], 41)[1:-1])
        z, ez = integrate.quad(weight, lo[0], hi[0], epsrel=rtol, epsabs=0.0, limit=400, points=pts)
        num, en = integrate.quad(lambda x: x * weight(x), lo[0], hi[0], epsrel=rtol, epsabs=0.0,
                                 limit=400, points=pts)
        if not (abs(ez) <= 1e3 * rtol * abs(z) and abs(en) <= 1e3 * rtol * max(abs(num), 1e-300)):
            raise RuntimeError(f"Boltzmann quadrature did not converge (errors {ez:.2e}, {en:.2e})")
        return np.array([num / z])
    z, _ = integrate.nquad(weight, ranges, opts=opts)
    out = []
    for j in range(obj.dim):
        num, _ = integrate.nquad(lambda *xs, j=j: xs[j] * weight(*xs), ranges, opts=opts)
        out.append(num / z)
    return np.array(out)


def boltzmann_riemann(obj: ObjectiveSpec, beta: float, n: int = 100_000) -> float:
    """Dense midpoint-rule <x> for a 1D objective (independent cross-check)."""
    lo, hi = obj.lower[0], obj.upper[0]
    h = (hi - lo) / n
    x = lo + h * (np.arange(n) + 0.5)
    f = obj.value_unchecked(x[:, None])
    w = np.exp(-beta * (f - f.min()))
    return float(np.sum(x * w) / np.sum(w))


# ---------------------------------------------------------------------------
# Discretization


def select_discretization(eps: float, beta: float, N: int, x_max: float, m: float, Q: float,
                          fprime_max: float, *, g: float | None = None, f_min: float = 0.0,
                          scale: float = 1.0) -> NoseParams:
    """Grid parameters at the theorem's asymptotic magnitudes, unit constants.

    scale multiplies every resolution parameter (h_x, h_p, h_s, h_ps and the
    shell width Delta) for convergence studies. E_ext defaults to
    f_min + (g/beta) ln 1 + Delta.
    """
    for name, v in (("eps", eps), ("beta", beta), ("N", N), ("x_max", x_max), ("m", m),
                    ("Q", Q), ("fprime_max", fprime_max)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    g = float(N + 1) if g is None else float(g)
    root = math.sqrt(eps / x_max)
    delta = root / (beta * N ** 0.25) * scale
    p1 = math.sqrt(m / beta)
    p2 = math.sqrt(Q / beta)
    h_s = eps / (N ** 2.75 * x_max ** 1.5)
    h_p = math.sqrt(m / beta) * root / N ** 1.25
    h_ps = math.sqrt(Q / beta) * root / N ** 0.25
    h_x = 1.0 / (beta * N * fprime_max)
    e_ext = f_min + g / beta * math.log(1.0) + delta
    formulas = {
        "Delta": "sqrt(eps/x_max) / (beta N^(1/4))",
        "p_max": "sqrt(m/beta)",
        "p_s_max": "sqrt(Q/beta)",
        "h_s": "eps / (N^(11/4) x_max^(3/2))",
        "h_p": "N^(-5/4) sqrt(m/beta) sqrt(eps/x_max)",
        "h_ps": "N^(-1/4) sqrt(Q/beta) sqrt(eps/x_max)",
        "h_x": "1 / (beta N f'_max)",
        "E_ext": "f_min + (g/beta) ln(1) + Delta",
        "scale": repr(scale),
    }
    s_hi = math.exp(beta * (e_ext - f_min + delta / 2) / g)
    return NoseParams(m=m, Q=Q, beta=beta, g=g, E_ext=e_ext, Delta=delta,
                      s_min=h_s * scale, s_max=s_hi, p_max=p1, p_s_max=p2,
                      h_x=h_x * scale, h_p=h_p * scale, h_s=h_s * scale, h_ps=h_ps * scale,
                      formulas=formulas)


def sinhc_shell_factor(params: NoseParams, N: int) -> float:
    """Ratio between the rect-window and delta-shell continuum averages."""
    return float(sinhc(params.beta * params.Delta * (N + 1) / (2 * params.g)))


def shell_s_integral(h_rest: float, params: NoseParams, N: int) -> float:
    """Closed form of int s^N rect_Delta(h_rest + (g/beta) ln s - E_ext) ds."""
    b = params.beta / params.g
    s0 = math.exp(-b * (h_rest - params.E_ext))
    return s0 ** (N + 1) * 2 * math.sinh(b * (N + 1) * params.Delta / 2) / (params.Delta * (N + 1))


def shell_s_integral_quadrature(h_rest: float, params: NoseParams, N: int) -> float:
    """Same integral by adaptive quadrature over the window's s-interval."""
    b = params.beta / params.g
    s0 = math.exp(-b * (h_rest - params.E_ext))
    s1, s2 = s0 * math.exp(-b * params.Delta / 2), s0 * math.exp(b * params.Delta / 2)
    val, _ = integrate.quad(lambda s: s ** N / params.Delta, s1, s2, epsabs=0.0, epsrel=1e-13)
    return val


def _lattice(h: float, lo: float, hi: float) -> np.ndarray:
    k0 = math.ceil(lo / h - 1e-12)
    k1 = math.floor(hi / h + 1e-12)
    return h * np.arange(k0, k1 + 1)


def nose_grids(obj: ObjectiveSpec, params: NoseParams):
    """Position, momentum and bath-momentum lattices used by the discrete sum."""
    xs = _lattice(params.h_x, obj.lower[0], obj.upper[0])
    ps = _lattice(params.h_p, -params.p_max, params.p_max)
    pss = _lattice(params.h_ps, -params.p_s_max, params.p_s_max)
    return xs, ps, pss


@dataclass
class ShellDiagnostics:
    occupied_cells: int
    total_cells: int
    s_points: int
    numerator: float
    denominator: float
    sinhc_factor: float
    grid_shape: tuple

    @property
    def occupancy(self) -> float:
        return self.occupied_cells / max(self.total_cells, 1)


def discrete_microcanonical_average(obj: ObjectiveSpec, params: NoseParams):
    """Normalized position average of the rect-window discrete shell sum (N = 1).

    For every (x, p', p_s) cell the window selects s in [s1, s2] around
    s0 = exp(-(beta/g)(H_sys + p_s^2/2Q - E_ext)); the s-sum of
    h_s (n h_s) / Delta over lattice points n h_s in that interval is taken in
    closed form.
    """
    if obj.dim != 1:
        raise ValueError("discrete microcanonical sums are implemented for one system dimension")
    xs, ps, pss = nose_grids(obj, params)
    f = obj.value_unchecked(xs[:, None])
    H = (f[:, None, None] + ps[None, :, None] ** 2 / (2 * params.m)
         + pss[None, None, :] ** 2 / (2 * params.Q))
    b = params.beta / params.g
    s0 = np.exp(-b * (H - params.E_ext))
    s1 = s0 * math.exp(-b * params.Delta / 2)
    s2 = s0 * math.exp(b * params.Delta / 2)
    hs = params.h_s
    n1 = np.maximum(np.ceil(s1 / hs), 1.0)
    n2 = np.floor(s2 / hs)
    cnt = np.maximum(n2 - n1 + 1.0, 0.0)
    w = hs * hs * (n1 + n2) * cnt / 2.0 / params.Delta
    den = float(w.sum())
    num = float(np.einsum("i,ijk->", xs, w))
    diag = ShellDiagnostics(int((cnt > 0).sum()), int(cnt.size), int(cnt.sum()), num, den,
                            sinhc_shell_factor(params, 1), tuple(H.shape))
    if den <= 0:
        raise EmptyShellError(
            f"energy shell is empty for E_ext={params.E_ext:.6g}, Delta={params.Delta:.6g}")
    return num / den, diag


def brute_force_microcanonical_average(obj: ObjectiveSpec, params: NoseParams) -> float:
    """Explicit 4D sum over (x, p', s, p_s) lattices; tiny grids only."""
    xs, ps, pss = nose_grids(obj, params)
    s_top = math.exp(params.beta / params.g * (params.E_ext + params.Delta))
    ss = params.h_s * np.arange(1, int(s_top / params.h_s) + 2)
    if xs.size * ps.size * pss.size * ss.size > 5e7:
        raise ValueError("brute-force sum too large")
    num = den = 0.0
    for x in xs:
        fx = float(obj.value_unchecked(np.array([x])))
        H = (fx + ps[:, None, None] ** 2 / (2 * params.m) + pss[None, :, None] ** 2 / (2 * params.Q)
             + params.g / params.beta * np.log(ss)[None, None, :])
        rect = np.where(np.abs(H - params.E_ext) <= params.Delta / 2, 1.0 / params.Delta, 0.0)
        w = float(np.sum(params.h_s * ss[None, None, :] * rect))
        num += x * w
        den += w
    if den <= 0:
        raise EmptyShellError("empty shell")
    return num / den


def find_shell_energy(obj: ObjectiveSpec, params: NoseParams, floor: float = 1e-3,
                      max_tries: int = 200) -> NoseParams:
    """Raise E_ext in steps of Delta until the shell occupancy reaches floor."""
    p = params
    for _ in range(max_tries):
        try:
            _, diag = discrete_microcanonical_average(obj, p)
            if diag.occupancy >= floor:
                return p
        except EmptyShellError:
            pass
        p = replace(p, E_ext=p.E_ext + p.Delta)
    raise EmptyShellError(f"no E_ext up to {p.E_ext:.6g} reached occupancy {floor}")


# ---------------------------------------------------------------------------
# Forward-Euler dynamics


def lipschitz_bound(params: NoseParams, N: int, fprime_max: float,
                    fsecond_max: float) -> tuple[float, float]:
    """(L, M): Lipschitz constant of the Nose vector field and a second-derivative bound."""
    m, Q = params.m, params.Q
    pm, sm, psm = params.p_max, params.s_min, params.p_s_max
    L = math.sqrt(N) * (pm / (m * sm ** 2) + fprime_max) + psm / Q + pm ** 2 / (m * sm ** 3)
    M = max(1 / (m * sm ** 2), 2 * pm / (m * sm ** 3), 3 * pm ** 2 / (m * sm ** 4),
            abs(fsecond_max), 1 / Q)
    return L, M


def euler_error_bound(L: float, dim: int, h: float, max_dF: float, t: float) -> float:
    """Global forward-Euler error envelope dim h max|dF| (e^{Lt} - 1) / (2L)."""
    return dim * h * max_dF * math.expm1(L * t) / (2 * L)


@dataclass
class NoseTrajectory:
    times: np.ndarray
    states: np.ndarray           # columns x, p, s, p_s (subsampled)
    energy_drift: float
    hist_counts: np.ndarray
    hist_edges: np.ndarray
    h: float
    steps: int
    terminated: str | None = None

    @property
    def mode(self) -> float:
        i = int(np.argmax(self.hist_counts))
        return 0.5 * (self.hist_edges[i] + self.hist_edges[i + 1])


def _scalar_force(obj: ObjectiveSpec):
    if obj.kind == "builtin" and obj.name in ("double_well", "asym_double_well"):
        tilt = obj.param_map.get("tilt", 0.0)
        return lambda x: 4.0 * x * (x * x - 1.0) + tilt
    if obj.kind == "quadratic" and obj.dim == 1:
        a, xs = float(obj.A[0, 0]), float(obj.x_star[0])
        return lambda x: a * (x - xs)
    return lambda x: float(obj.gradient_unchecked(np.array([x]))[0])


def _scalar_value(obj: ObjectiveSpec):
    return lambda x: float(obj.value_unchecked(np.array([x])))


def nose_euler_trajectory(obj: ObjectiveSpec, params: NoseParams, h: float, n_steps: int, *,
                          init=None, rng=None, x_init_range=None, bins: int = 80,
                          record_every: int = 100,
                          cap_step: bool = False) -> NoseTrajectory:
    """Forward Euler for the Nose equations of motion (one system dimension).

    Without explicit init the start is x ~ U(x_init_range), defaulting to the
    objective box, p ~ N(0, m/beta), s = 1,
    p_s ~ N(0, Q/beta). The x histogram covers the second half of the run.
    cap_step shrinks h to 0.1 / L with L from lipschitz_bound.
    """
    if obj.dim != 1:
        raise ValueError("Nose Euler trajectories are implemented for one system dimension")
    if not h > 0:
        raise ValueError("step must be positive")
    if cap_step:
        L, _ = lipschitz_bound(params, 1, obj.fprime_max or 0.0, obj.fsecond_max or 0.0)
        h = min(h, 0.1 / L)
    if init is None:
        gen = as_generator(rng)
        a, b = (obj.lower[0], obj.upper[0]) if x_init_range is None else x_init_range
        x = float(gen.uniform(a, b))
        p = float(gen.normal(0.0, math.sqrt(params.m / params.beta)))
        s = 1.0
        ps = float(gen.normal(0.0, math.sqrt(params.Q / params.beta)))
    else:
        x, p, s, ps = (float(v) for v in init)
    m, Q, kT_g = params.m, params.Q, params.g / params.beta
    fp = _scalar_force(obj)
    fv = _scalar_value(obj)
    lo, hi = obj.lower[0], obj.upper[0]
    span = hi - lo

    def energy(x, p, s, ps):
        return p * p / (2 * m * s * s) + fv(x) + ps * ps / (2 * Q) + kT_g * math.log(s)

    e0 = energy(x, p, s, ps)
    drift = 0.0
    burn = n_steps // 2
    counts = np.zeros(bins)
    scale = bins / span
    rec_t, rec = [], []
    reason = None
    for k in range(n_steps):
        inv_s = 1.0 / s
        dx = p * inv_s * inv_s / m
        dp = -fp(x)
        ds = ps / Q
        dps = p * p * inv_s ** 3 / m - kT_g * inv_s
        x += h * dx
        p += h * dp
        s += h * ds
        ps += h * dps
        if s < 0.5 * params.s_min:
            reason = f"s collapsed below s_min/2 at step {k + 1}"
            break
        if not (math.isfinite(x) and math.isfinite(p) and abs(x - 0.5 * (lo + hi)) < 10 * span):
            reason = f"trajectory blew up at step {k + 1}"
            break
        if k >= burn:
            b = int((x - lo) * scale)
            if 0 <= b < bins:
                counts[b] += 1
        if k % record_every == 0:
            e = energy(x, p, s, ps)
            drift = max(drift, abs(e - e0))
            rec_t.append((k + 1) * h)
            rec.append((x, p, s, ps))
    if reason:
        logger.warning("nose_euler_trajectory terminated: %s", reason)
    edges = np.linspace(lo, hi, bins + 1)
    return NoseTrajectory(np.array(rec_t), np.array(rec), drift, counts, edges, h,
                          k + 1, reason)


def nose_rk4_reference(obj: ObjectiveSpec, params: NoseParams, init, h: float, n_steps: int):
    """Classical RK4 for the same vector field, used as a reference solution."""
    m, Q, kT_g = params.m, params.Q, params.g / params.beta
    fp = _scalar_force(obj)

    def F(z):
        x, p, s, ps = z
        return np.array([p / (m * s * s), -fp(x), ps / Q, p * p / (m * s ** 3) - kT_g / s])

    z = np.array(init, dtype=float)
    for _ in range(n_steps):
        k1 = F(z)
        k2 = F(z + 0.5 * h * k1)
        k3 = F(z + 0.5 * h * k2)
        k4 = F(z + h * k3)
        z = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return z


# ---------------------------------------------------------------------------
# Time-averaged density matrices


@dataclass
class DensityMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def check(self, herm_tol: float = 1e-12, trace_tol: float = 1e-10, psd_tol: float = 1e-10) -> None:
        M = self.matrix
        if np.abs(M - M.conj().T).max() > herm_tol * max(1.0, np.abs(M).max()):
            raise ValueError("density matrix not Hermitian")
        if abs(np.trace(M) - 1) > trace_tol:
            raise ValueError(f"density matrix trace {np.trace(M).real:.12g} != 1")
        if np.linalg.eigvalsh(0.5 * (M + M.conj().T)).min() < -psd_tol:
            raise ValueError("density matrix has a negative eigenvalue")


def _hermitian_eig(L: np.ndarray, tol: float = 1e-10):
    L = np.asarray(L, dtype=complex)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValueError("L must be square")
    if np.abs(L - L.conj().T).max() > tol * max(1.0, np.abs(L).max()):
        raise ValueError("L must be Hermitian")
    return np.linalg.eigh(0.5 * (L + L.conj().T))


def time_averaged_density(L: np.ndarray, rho0: DensityMatrix, t: float) -> DensityMatrix:
    """(1/t) int_0^t e^{-iLs} rho0 e^{iLs} ds via L's eigendecomposition."""
    if not t > 0:
        raise ValueError("averaging time must be positive")
    if np.shape(L)[0] > 256:
        raise ValueError("time_averaged_density limited to 256 dimensions")
    lam, V = _hermitian_eig(L)
    r = V.conj().T @ rho0.matrix @ V
    d = lam[:, None] - lam[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(np.abs(d) > 0, 1j * np.expm1(-1j * d * t) / (d * t), 1.0)
    out = V @ (fac * r) @ V.conj().T
    return DensityMatrix(0.5 * (out + out.conj().T))


def dephase(rho0: DensityMatrix, L: np.ndarray, tol: float = 1e-9) -> DensityMatrix:
    """Infinite-time average: keep only blocks of (near-)equal eigenvalues."""
    lam, V = _hermitian_eig(L)
    groups = np.zeros(lam.size, dtype=int)
    for i in range(1, lam.size):
        groups[i] = groups[i - 1] + (1 if lam[i] - lam[i - 1] > tol else 0)
    mask = groups[:, None] == groups[None, :]
    r = V.conj().T @ rho0.matrix @ V
    out = V @ (r * mask) @ V.conj().T
    return DensityMatrix(0.5 * (out + out.conj().T))


def time_average_quadrature(L: np.ndarray, rho0: DensityMatrix, t: float, nodes: int = 10_000):
    """Midpoint rule for (1/t) int U rho0 U^dagger, stepping U by a fixed increment."""
    lam, V = _hermitian_eig(L)
    dt = t / nodes
    U_half = V @ np.diag(np.exp(-1j * lam * dt / 2)) @ V.conj().T
    U_step = V @ np.diag(np.exp(-1j * lam * dt)) @ V.conj().T
    rho = U_half @ rho0.matrix @ U_half.conj().T
    acc = np.zeros_like(rho)
    for _ in range(nodes):
        acc += rho
        rho = U_step @ rho @ U_step.conj().T
    return DensityMatrix(acc / nodes)


def min_nonzero_gap(L: np.ndarray, tol: float = 1e-9) -> float:
    lam, _ = _hermitian_eig(L)
    d = np.abs(lam[:, None] - lam[None, :])
    d = d[d > tol]
    return float(d.min()) if d.size else math.inf


def dephasing_envelope(L: np.ndarray, rho0: DensityMatrix, tol: float = 1e-9) -> float:
    """C with ||<rho>_t - rho_inf||_F <= C / t: 2 ||off-diagonal part||_F / gap."""
    lam, V = _hermitian_eig(L)
    r = V.conj().T @ rho0.matrix @ V
    d = np.abs(lam[:, None] - lam[None, :])
    off = np.where(d > tol, r, 0.0)
    return 2.0 * float(np.linalg.norm(off)) / min_nonzero_gap(L, tol)


def random_gapped_hermitian(D: int, rng, min_gap: float = 1e-2) -> np.ndarray:
    """Random Hermitian matrix with Haar-like eigenvectors and gaps >= min_gap."""
    gen = as_generator(rng)
    lam = np.sort(gen.uniform(-1.0, 1.0, D))
    lam = lam + min_gap * np.arange(D)
    Z = gen.standard_normal((D, D)) + 1j * gen.standard_normal((D, D))
    Qm, R = np.linalg.qr(Z)
    Qm = Qm * (np.diag(R) / np.abs(np.diag(R)))
    L = Qm @ np.diag(lam) @ Qm.conj().T
    return 0.5 * (L + L.conj().T)


def random_density(D: int, rng, rank: int | None = None) -> DensityMatrix:
    gen = as_generator(rng)
    k = D if rank is None else rank
    G = gen.standard_normal((D, k)) + 1j * gen.standard_normal((D, k))
    rho = G @ G.conj().T
    return DensityMatrix(rho / np.trace(rho).real)

