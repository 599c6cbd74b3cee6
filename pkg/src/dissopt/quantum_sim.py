"""Split-step propagation of wavefunctions under the friction Hamiltonian

    H(t) = k(t) * sum_j (-D_j^2) / (2m) + v(t) * f(x)

with k(t) = e^{-beta t/m}, v(t) = e^{beta t/m} (friction schedule) or
k(t) = mu^2 e^{-sqrt(mu) t}, v(t) = e^{2 sqrt(mu) t} with unit mass
(Lyapunov schedule). Units have hbar = 1, so momentum equals wavenumber.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy.linalg import expm

from .numerics import as_generator, central_difference_stencil
from .objective import GridSpec, ObjectiveSpec, grid_tabulate, hessian_spectrum
from .oscillator import (EquilibrationReport, FrictionParams, GaussianInit, MomentSummary,
                         decouple_quadratic, equilibration_time, evolve_gaussian_moments)

logger = logging.getLogger(__name__)

TAIL_MASS = 1e-10       # probability left outside the occupied box
PHASE_TARGET = 2.5      # adaptive steps aim for this phase increment (rad), below the pi guard
EDGE_FRACTION = 1 / 16  # outer slab of each axis watched for boundary mass
EDGE_TOL = 1e-8


class PhaseIncrementError(RuntimeError):
    def __init__(self, phase: float, dt: float, suggested: float, t: float):
        super().__init__(f"phase increment {phase:.3g} rad exceeds pi at t={t:.6g} "
                         f"with dt={dt:.3g}; try dt <= {suggested:.3g}")
        self.phase, self.dt, self.suggested, self.t = phase, dt, suggested, t


class BoundaryMassError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Time schedules


@dataclass(frozen=True)
class Schedule:
    """Prefactors of the kinetic and potential terms and their exact integrals."""

    kind: Literal["friction", "lyapunov"] = "friction"
    beta: float = 0.0
    m: float = 1.0
    mu: float = 1.0

    @property
    def kinetic_mass(self) -> float:
        return self.m if self.kind == "friction" else 1.0

    def kinetic_rate(self, t: float) -> float:
        if self.kind == "friction":
            return math.exp(-self.beta * t / self.m)
        return self.mu ** 2 * math.exp(-math.sqrt(self.mu) * t)

    def potential_rate(self, t: float) -> float:
        if self.kind == "friction":
            return math.exp(self.beta * t / self.m)
        return math.exp(2.0 * math.sqrt(self.mu) * t)

    def kinetic_integral(self, t1: float, t2: float) -> float:
        if self.kind == "friction":
            c = self.beta / self.m
            if c == 0.0:
                return t2 - t1
            return -math.exp(-c * t1) * math.expm1(-c * (t2 - t1)) / c
        r = math.sqrt(self.mu)
        return -self.mu ** 2 * math.exp(-r * t1) * math.expm1(-r * (t2 - t1)) / r

    def potential_integral(self, t1: float, t2: float) -> float:
        if self.kind == "friction":
            c = self.beta / self.m
            if c == 0.0:
                return t2 - t1
            return math.exp(c * t1) * math.expm1(c * (t2 - t1)) / c
        r = 2.0 * math.sqrt(self.mu)
        return math.exp(r * t1) * math.expm1(r * (t2 - t1)) / r


@dataclass(frozen=True)
class FrictionHamiltonianSpec:
    objective: ObjectiveSpec
    params: FrictionParams
    stencil_order: int | None = None     # None: exact spectral symbol
    schedule: Literal["friction", "lyapunov"] = "friction"
    mu: float | None = None

    def __post_init__(self):
        if self.schedule == "lyapunov" and not (self.mu and self.mu > 0):
            raise ValueError("lyapunov schedule needs mu > 0")

    def timing(self) -> Schedule:
        if self.schedule == "friction":
            return Schedule("friction", self.params.beta, self.params.m)
        return Schedule("lyapunov", mu=float(self.mu))

    def kinetic_symbol(self, grid: GridSpec) -> np.ndarray:
        """Eigenvalues of sum_j -D_j^2 / (2 m) on the periodic grid."""
        m = self.timing().kinetic_mass
        parts = []
        for n, h, k in zip(grid.points, grid.spacing, grid.wavenumbers()):
            if self.stencil_order is None:
                parts.append(k * k)
            else:
                st = central_difference_stencil(self.stencil_order, "second", h)
                parts.append(-st.symbol(n).real)
        total = np.zeros(grid.shape)
        for j, p in enumerate(parts):
            shape = [1] * grid.dims
            shape[j] = -1
            total = total + p.reshape(shape)
        return total / (2.0 * m)


# ---------------------------------------------------------------------------
# States


@dataclass
class WaveState:
    amplitudes: np.ndarray
    grid: GridSpec
    time: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex).reshape(self.grid.shape)

    def norm(self) -> float:
        return math.sqrt(float(np.sum(np.abs(self.amplitudes) ** 2)) * self.grid.cell_volume)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2 * self.grid.cell_volume

    def copy(self) -> "WaveState":
        return WaveState(self.amplitudes.copy(), self.grid, self.time, dict(self.diagnostics))


def build_gaussian_state(grid: GridSpec, x0, p0, sigma) -> WaveState:
    """Normalized product Gaussian exp(-(x-x0)^2/(4 sigma^2) + i p0 x)."""
    n = grid.dims
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), n)
    p0 = np.broadcast_to(np.asarray(p0, dtype=float), n)
    sg = np.broadcast_to(np.asarray(sigma, dtype=float), n)
    if np.any(sg <= 0):
        raise ValueError("widths must be positive")
    lo, hi = grid.lower, grid.upper
    if np.any(x0 - 5 * sg < lo) or np.any(x0 + 5 * sg > hi):
        raise ValueError("Gaussian packet closer than 5 sigma to the box edge")
    kmax = np.pi / np.asarray(grid.spacing)
    if np.any(np.abs(p0) + 5 / (2 * sg) > kmax):
        raise ValueError("Gaussian packet momentum content exceeds the grid's Nyquist range")
    psi = np.ones(grid.shape, dtype=complex)
    for j, ax in enumerate(grid.axes()):
        line = np.exp(-(ax - x0[j]) ** 2 / (4 * sg[j] ** 2) + 1j * p0[j] * ax)
        shape = [1] * n
        shape[j] = -1
        psi = psi * line.reshape(shape)
    psi /= math.sqrt(float(np.sum(np.abs(psi) ** 2)) * grid.cell_volume)
    return WaveState(psi, grid, 0.0)


# ---------------------------------------------------------------------------
# Propagation


def support_spread(values, weights: np.ndarray, fft_axes: tuple = ()) -> float:
    """Range of values over the smallest index box holding all but TAIL_MASS of weights.

    The box is found axis by axis from cumulative marginals, trimming
    TAIL_MASS/2 from each end. Axes listed in fft_axes are in DFT order and
    get shifted first so the box is contiguous in wavenumber.
    """
    w = weights
    v = np.broadcast_to(values, w.shape)
    if fft_axes:
        w = np.fft.fftshift(w, axes=fft_axes)
        v = np.fft.fftshift(v, axes=fft_axes)
    total = float(w.sum())
    if not total > 0:
        return 0.0
    box = []
    for ax in range(w.ndim):
        others = tuple(a for a in range(w.ndim) if a != ax)
        c = np.cumsum(w.sum(axis=others)) / total
        lo = int(np.searchsorted(c, 0.5 * TAIL_MASS))
        hi = int(np.searchsorted(c, 1 - 0.5 * TAIL_MASS))
        box.append(slice(lo, min(hi, w.shape[ax] - 1) + 1))
    block = v[tuple(box)]
    return float(block.max() - block.min())


def edge_masses(prob: np.ndarray) -> list[float]:
    """Probability in the outer slab of each axis (both ends)."""
    out = []
    total = float(prob.sum()) or 1.0
    for ax in range(prob.ndim):
        n = prob.shape[ax]
        w = max(1, int(n * EDGE_FRACTION))
        moved = np.moveaxis(prob, ax, 0)
        out.append(float(moved[:w].sum() + moved[-w:].sum()) / total)
    return out


def _record_edges(state: WaveState, psi_hat: np.ndarray | None, strict: bool) -> None:
    xs = edge_masses(state.probabilities())
    d = state.diagnostics
    d["edge_mass_x"] = max(d.get("edge_mass_x", 0.0), max(xs))
    if psi_hat is not None:
        pk = np.fft.fftshift(np.abs(psi_hat) ** 2)
        d["edge_mass_k"] = max(d.get("edge_mass_k", 0.0), max(edge_masses(pk)))
    worst = max(d["edge_mass_x"], d.get("edge_mass_k", 0.0))
    if worst > EDGE_TOL:
        msg = f"boundary probability mass {worst:.3e} exceeds {EDGE_TOL:g} at t={state.time:.6g}"
        if strict:
            raise BoundaryMassError(msg)
        if not d.get("edge_warned"):
            logger.warning(msg)
            d["edge_warned"] = True


def propagate(state: WaveState, spec: FrictionHamiltonianSpec, t_end: float,
              dt: float | None = None, *, dt_cap: float = 0.05,
              phase_target: float = PHASE_TARGET, guard: str = "raise",
              strict_edges: bool = False,
              callback: Callable[[WaveState], None] | None = None,
              callback_every: int = 1) -> WaveState:
    """Strang splitting V/2 - K - V/2 with exactly integrated prefactors.

    dt=None picks each step as min(phase_target / phase rate, dt_cap), the
    phase rate taken from the prefactors at step start over the occupied
    support.
    guard: "raise" rejects steps whose phase increment exceeds pi, "warn"
    only logs them.
    """
    if not t_end >= state.time:
        raise ValueError("t_end must not precede the state's time")
    if dt is not None and not dt > 0:
        raise ValueError("dt must be positive")
    sched = spec.timing()
    grid = state.grid
    V = grid_tabulate(spec.objective, grid)
    T = spec.kinetic_symbol(grid)
    axes = tuple(range(grid.dims))
    out = state.copy()
    psi = out.amplitudes
    t = out.time
    span = t_end - t
    if span == 0.0:
        return out

    fixed_steps = None
    if dt is not None:
        fixed_steps = max(1, int(math.ceil(span / dt - 1e-9)))
        dt_fixed = span / fixed_steps
    psi_hat = np.fft.fftn(psi, axes=axes)
    step = 0
    pending = 0.0
    warned = False
    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        prob = np.abs(psi) ** 2
        v_spread = support_spread(V, prob)
        k_spread = support_spread(T, np.abs(psi_hat) ** 2, axes)
        if fixed_steps is not None:
            h = dt_fixed if step < fixed_steps - 1 else t_end - t
        else:
            rate = sched.kinetic_rate(t) * k_spread + sched.potential_rate(t) * v_spread
            h = min(dt_cap, phase_target / rate if rate > 0 else dt_cap, t_end - t)
        t1, t2 = t, t + h
        tm = 0.5 * (t1 + t2)
        iv1 = sched.potential_integral(t1, tm)
        iv2 = sched.potential_integral(tm, t2)
        ik = sched.kinetic_integral(t1, t2)
        phase = max((iv1 + iv2) * v_spread, ik * k_spread)
        if phase > math.pi:
            suggested = 0.5 * h * math.pi / phase
            if guard == "raise":
                raise PhaseIncrementError(phase, h, suggested, t1)
            if not warned:
                logger.warning("phase increment %.3g rad > pi at t=%.6g (dt=%.3g)", phase, t1, h)
                warned = True
            out.diagnostics["phase_guard_hits"] = out.diagnostics.get("phase_guard_hits", 0) + 1
        out.diagnostics["max_phase"] = max(out.diagnostics.get("max_phase", 0.0), phase)
        # the trailing half kick of a step is merged into the next step's leading one
        psi *= np.exp(-1j * (pending + iv1) * V)
        psi_hat = np.fft.fftn(psi, axes=axes)
        psi_hat *= np.exp(-1j * ik * T)
        psi = np.fft.ifftn(psi_hat, axes=axes)
        pending = iv2
        t = t2
        step += 1
        last = t >= t_end - 1e-14 * max(1.0, abs(t_end))
        due = callback is not None and step % callback_every == 0
        if last or due:
            psi *= np.exp(-1j * pending * V)
            pending = 0.0
            if due:
                out.amplitudes, out.time = psi, t
                callback(out)
    out.amplitudes = psi
    out.time = t_end
    psi_hat = np.fft.fftn(psi, axes=axes)
    out.diagnostics["steps"] = out.diagnostics.get("steps", 0) + step
    _record_edges(out, psi_hat, strict_edges)
    return out


def dense_hamiltonian(spec: FrictionHamiltonianSpec, grid: GridSpec, t: float):
    """(H(t), kinetic matrix, potential diagonal) on a small grid."""
    T = _dense_kinetic(spec, grid)
    V = grid_tabulate(spec.objective, grid).ravel()
    sched = spec.timing()
    return sched.kinetic_rate(t) * T + sched.potential_rate(t) * np.diag(V), T, V


def _dense_kinetic(spec: FrictionHamiltonianSpec, grid: GridSpec) -> np.ndarray:
    sym = spec.kinetic_symbol(grid)
    n = grid.size
    axes = tuple(range(grid.dims))
    cols = np.empty((n, n), dtype=complex)
    for i in range(n):
        e = np.zeros(n, dtype=complex)
        e[i] = 1.0
        cols[:, i] = np.fft.ifftn(sym * np.fft.fftn(e.reshape(grid.shape), axes=axes), axes=axes).ravel()
    return 0.5 * (cols + cols.conj().T)


def dense_propagator_oracle(spec: FrictionHamiltonianSpec, grid: GridSpec, t_end: float,
                            substeps: int = 4000) -> tuple[np.ndarray, float]:
    """Time-ordered midpoint product of exp(-i H dt) on a tiny grid.

    Returns the propagator and the residual against the interaction-picture
    factorization U_B(t) T[exp(-i int A_I)], computed independently.
    """
    if grid.size > 64:
        raise ValueError(f"dense oracle limited to 64 grid points, got {grid.size}")
    n = grid.size
    if t_end == 0.0:
        return np.eye(n, dtype=complex), 0.0
    sched = spec.timing()
    T = _dense_kinetic(spec, grid)
    V = grid_tabulate(spec.objective, grid).ravel()
    ds = t_end / substeps
    U = np.eye(n, dtype=complex)
    UI = np.eye(n, dtype=complex)
    for k in range(substeps):
        s = (k + 0.5) * ds
        H = sched.kinetic_rate(s) * T + sched.potential_rate(s) * np.diag(V)
        U = expm(-1j * ds * H) @ U
        ub = np.exp(-1j * sched.potential_integral(0.0, s) * V)
        AI = sched.kinetic_rate(s) * (ub.conj()[:, None] * T * ub[None, :])
        UI = expm(-1j * ds * AI) @ UI
    UB = np.exp(-1j * sched.potential_integral(0.0, t_end) * V)
    residual = float(np.linalg.norm(U - UB[:, None] * UI, 2))
    return U, residual


# ---------------------------------------------------------------------------
# Observables and sampling


def _momentum_apply(psi: np.ndarray, grid: GridSpec, axis: int) -> np.ndarray:
    k = grid.wavenumbers()[axis]
    shape = [1] * grid.dims
    shape[axis] = -1
    return np.fft.ifft(k.reshape(shape) * np.fft.fft(psi, axis=axis), axis=axis)


def observables(state: WaveState) -> MomentSummary:
    grid = state.grid
    psi = state.amplitudes
    prob = np.abs(psi) ** 2
    prob = prob / prob.sum()
    X = grid.mesh()
    psi_hat = np.fft.fftn(psi)
    probk = np.abs(psi_hat) ** 2
    probk = probk / probk.sum()
    K = np.meshgrid(*grid.wavenumbers(), indexing="ij")
    n = grid.dims
    mx = np.array([float(np.sum(prob * X[j])) for j in range(n)])
    mp = np.array([float(np.sum(probk * K[j])) for j in range(n)])
    cxx = np.empty((n, n))
    cpp = np.empty((n, n))
    cxp = np.empty((n, n))
    norm2 = float(np.sum(np.abs(psi) ** 2))
    p_psi = [_momentum_apply(psi, grid, j) for j in range(n)]
    for i in range(n):
        for j in range(n):
            cxx[i, j] = float(np.sum(prob * X[i] * X[j])) - mx[i] * mx[j]
            cpp[i, j] = float(np.sum(probk * K[i] * K[j])) - mp[i] * mp[j]
            xp = np.vdot(psi, X[i] * p_psi[j]) / norm2
            cxp[i, j] = float(xp.real) - mx[i] * mp[j]
    return MomentSummary(mx, mp, np.diag(cxx).copy(), np.diag(cpp).copy(), np.diag(cxp).copy(),
                         cov_xx_full=cxx, cov_pp_full=cpp, cov_xp_full=cxp)


def sample_positions(state: WaveState, count: int, rng) -> np.ndarray:
    """i.i.d. grid positions from |psi|^2 h^N by inverse CDF; shape (count, N)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    gen = as_generator(rng)
    cdf = np.cumsum(state.probabilities().ravel())
    u = gen.random(count) * cdf[-1]
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
    coords = np.unravel_index(idx, state.grid.shape)
    axes = state.grid.axes()
    return np.stack([axes[j][coords[j]] for j in range(state.grid.dims)], axis=-1)


def lyapunov_expectation(state: WaveState, spec: FrictionHamiltonianSpec, x_star=None,
                         f_star: float | None = None) -> float:
    """<W(t)> = 1/2 sum_j <J_j^2> + e^{beta_t} <f - f*>, J_j = e^{-gamma_t} p_j + x_j - x*_j."""
    if spec.schedule != "lyapunov":
        raise ValueError("lyapunov_expectation needs the lyapunov schedule")
    mu = float(spec.mu)
    t = state.time
    gt = math.sqrt(mu) * t - 1.5 * math.log(mu)
    bt = math.sqrt(mu) * t + math.log(mu)
    obj = spec.objective
    grid = state.grid
    if x_star is None:
        x_star = obj.x_star if obj.is_quadratic else np.zeros(grid.dims)
    if f_star is None:
        f_star = obj.c if obj.is_quadratic else 0.0
    xs = np.broadcast_to(np.asarray(x_star, dtype=float), grid.dims)
    psi = state.amplitudes
    norm2 = float(np.sum(np.abs(psi) ** 2))
    X = grid.mesh()
    eg = math.exp(-gt)
    total = 0.0
    for j in range(grid.dims):
        J = eg * _momentum_apply(psi, grid, j) + (X[j] - xs[j]) * psi
        total += 0.5 * float(np.sum(np.abs(J) ** 2)) / norm2
    f = grid_tabulate(obj, grid) - f_star
    total += math.exp(bt) * float(np.sum(np.abs(psi) ** 2 * f)) / norm2
    return total


def lyapunov_initial_value(mom: MomentSummary, mean_f: float, mu: float, x_star=0.0) -> float:
    """<W>_0 from moments: 1/2 sum(mu^3 <p^2> + mu^{3/2} <{x,p}> + <x^2>) + mu <f>."""
    xs = np.broadcast_to(np.asarray(x_star, float), mom.mean_x.shape)
    dx = mom.mean_x - xs
    x2 = mom.var_x + dx ** 2
    p2 = mom.var_p + mom.mean_p ** 2
    xp2 = 2.0 * (mom.cov_xp + dx * mom.mean_p)
    return 0.5 * float(np.sum(mu ** 3 * p2 + mu ** 1.5 * xp2 + x2)) + mu * mean_f


def lyapunov_stopping_time(w0: float, mu: float, eps: float) -> float:
    """Time after which <f> - f* <= eps/3 is implied by <W> <= w0."""
    arg = 3.0 * w0 / (mu * eps)
    return max(0.0, math.log(arg) / math.sqrt(mu)) if arg > 0 else 0.0


# ---------------------------------------------------------------------------
# Local optimization driver


def next_pow2(n: float) -> int:
    return 1 << max(2, int(math.ceil(math.log2(max(n, 4)))))


def auto_grid_1d(params: FrictionParams, a: float, mean, cov, t_end: float, *,
                 n_times: int = 400, width: float = 8.0, max_points: int = 1 << 20) -> GridSpec:
    """Symmetric 1D grid holding a Gaussian packet over [0, t_end].

    Position extent and Nyquist wavenumber cover mean +- width standard
    deviations of the analytic position and momentum envelopes.
    """
    xmax = 0.0
    kmax = 0.0
    for t in np.linspace(0.0, t_end, n_times):
        mu, C = evolve_gaussian_moments(float(t), params, a, 0.0, mean, cov)
        xmax = max(xmax, abs(mu[0]) + width * math.sqrt(max(C[0, 0], 0.0)))
        kmax = max(kmax, abs(mu[1]) + width * math.sqrt(max(C[1, 1], 0.0)))
    h = math.pi / kmax
    n = next_pow2(2 * xmax / h)
    if n > max_points:
        raise ValueError(f"auto grid needs {n} points (> {max_points}); reduce t_end or widths")
    return GridSpec.symmetric(n, xmax)


@dataclass
class LocalRunReport:
    t_star: float
    equilibration: EquilibrationReport
    samples: int
    success: bool
    f_best: float
    f_star: float
    epsilon: float
    grid_points: list[int]
    beta: float

    def to_dict(self) -> dict:
        return {"t_star": self.t_star, "equilibration": self.equilibration.to_dict(),
                "samples": self.samples, "success": self.success, "f_best": self.f_best,
                "f_star": self.f_star, "epsilon": self.epsilon,
                "grid_points": self.grid_points, "beta": self.beta}


@dataclass
class PreparedLocalRun:
    """Propagated per-mode states at t_star, reusable across sampling seeds."""

    objective: ObjectiveSpec
    frame: object
    modes: list
    report: EquilibrationReport
    beta: float
    epsilon: float

    def sample(self, count: int, rng) -> np.ndarray:
        gen = as_generator(rng)
        ys = np.stack([sample_positions(s, count, gen)[:, 0] for s in self.modes], axis=-1)
        return self.frame.to_original(ys)


def samples_for_confidence(delta: float) -> int:
    """v >= log(1/delta)/log 3 independent draws at success probability 2/3."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return max(1, int(math.ceil(math.log(1 / delta) / math.log(3) - 1e-12)))


def prepare_local_quantum(obj: ObjectiveSpec, init: GaussianInit, eps: float, *, m: float = 1.0,
                          dt_cap: float = 0.01, stencil_order: int | None = None) -> PreparedLocalRun:
    if not obj.is_quadratic:
        raise ValueError("the local driver targets quadratic objectives")
    lmin, lmax, _ = hessian_spectrum(obj)
    beta = math.sqrt(lmin)
    params = FrictionParams(beta, m)
    mom = init.quantum_moments()
    setting = "quantum_1d" if obj.dim == 1 else "quantum_nd"
    report = equilibration_time(eps, params, lmin if obj.dim == 1 else (lmin, lmax), mom,
                                setting, obj.x_star)
    frame = decouple_quadratic(obj.A, obj.x_star, mom)
    if not init.is_product_in(frame.Q):
        raise ValueError("initial packet is not a product state in the Hessian eigenframe")
    sig = init.sigma_in(frame.Q)
    modes = []
    for j, lam in enumerate(frame.lam):
        fm = frame.moments
        mean = (fm.mean_x[j], fm.mean_p[j])
        cov = np.array([[fm.var_x[j], fm.cov_xp[j]], [fm.cov_xp[j], fm.var_p[j]]])
        grid = auto_grid_1d(params, float(lam), mean, cov, report.t_star)
        mode_obj = ObjectiveSpec.quadratic([[lam]], [0.0], 0.0, lower=grid.lower, upper=grid.upper)
        spec = FrictionHamiltonianSpec(mode_obj, params, stencil_order)
        st = build_gaussian_state(grid, mean[0], mean[1], sig[j])
        if report.t_star > 0:
            st = propagate(st, spec, report.t_star, None, dt_cap=dt_cap)
        modes.append(st)
    return PreparedLocalRun(obj, frame, modes, report, beta, eps)


def optimize_local(obj: ObjectiveSpec, init: GaussianInit, eps: float, delta: float, rng, *,
                   prepared: PreparedLocalRun | None = None, **kw):
    """Propagate to t_star, draw ceil(log(1/delta)/log 3) positions, keep the best."""
    if not 0 < eps:
        raise ValueError("epsilon must be positive")
    run = prepared or prepare_local_quantum(obj, init, eps, **kw)
    v = samples_for_confidence(delta)
    xs = run.sample(v, rng)
    fs = obj.value_unchecked(xs)
    i = int(np.argmin(fs))
    f_best = float(fs[i])
    rep = LocalRunReport(run.report.t_star, run.report, v, abs(f_best - obj.c) <= eps, f_best,
                         obj.c, eps, [s.grid.points[0] for s in run.modes], run.beta)
    return xs[i], f_best, rep
