"""Koopman-von Neumann propagation of classical phase-space densities under
the friction Liouvillian, plus a trajectory-ensemble oracle and the
classical-dynamics local optimizer.

The amplitude array has shape (x_1..x_N, p_1..p_N); |psi|^2 h_x^N h_p^N is
the phase-space probability of each cell.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .numerics import as_generator, central_difference_stencil
from .objective import GridSpec, ObjectiveSpec, hessian_spectrum
from .oscillator import (EquilibrationReport, FrictionParams, GaussianInit, MomentSummary,
                         chi0, decouple_quadratic, equilibration_time, evolve_gaussian_moments)
from .quantum_sim import (EDGE_TOL, PHASE_TARGET, BoundaryMassError, LocalRunReport, PhaseIncrementError,
                          Schedule, edge_masses, next_pow2, samples_for_confidence,
                          sample_positions as _sample_positions, support_spread,
                          WaveState)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LiouvillianSpec:
    objective: ObjectiveSpec
    params: FrictionParams
    order_x: int | None = None     # None: spectral derivative
    order_p: int | None = None
    force_mode: Literal["exact", "fd"] = "exact"
    fd_order: int = 2

    def timing(self) -> Schedule:
        return Schedule("friction", self.params.beta, self.params.m)

    def force(self, xgrid: GridSpec) -> np.ndarray:
        """df/dx_j on the position grid, shape (N, *xgrid.shape)."""
        pts = np.stack(xgrid.mesh(), axis=-1)
        obj = self.objective
        if self.force_mode == "exact":
            g = obj.gradient_unchecked(pts)
            return np.moveaxis(g, -1, 0)
        st = central_difference_stencil(self.fd_order, "first", 1.0)
        out = np.zeros((xgrid.dims,) + xgrid.shape)
        for j, h in enumerate(xgrid.spacing):
            for off, c in zip(st.offsets, st.coefficients):
                if c == 0.0:
                    continue
                shifted = pts.copy()
                shifted[..., j] += off * h
                out[j] += c * obj.value_unchecked(shifted) / h
        return out


def _derivative_wavenumbers(grid: GridSpec, order: int | None) -> list[np.ndarray]:
    """Real k_eff with D = i k_eff in the DFT basis."""
    out = []
    for n, h, k in zip(grid.points, grid.spacing, grid.wavenumbers()):
        if order is None:
            out.append(k)
        else:
            out.append(central_difference_stencil(order, "first", h).symbol(n).imag)
    return out


@dataclass
class KvnState:
    amplitudes: np.ndarray
    xgrid: GridSpec
    pgrid: GridSpec
    time: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.xgrid.dims != self.pgrid.dims:
            raise ValueError("position and momentum grids need the same dimension")
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex).reshape(
            self.xgrid.shape + self.pgrid.shape)

    @property
    def dims(self) -> int:
        return self.xgrid.dims

    @property
    def cell_volume(self) -> float:
        return self.xgrid.cell_volume * self.pgrid.cell_volume

    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2 * self.cell_volume

    def norm(self) -> float:
        return math.sqrt(float(self.density().sum()))

    def copy(self) -> "KvnState":
        return KvnState(self.amplitudes.copy(), self.xgrid, self.pgrid, self.time,
                        dict(self.diagnostics))


def build_kvn_gaussian(xgrid: GridSpec, pgrid: GridSpec, x0, p0, sigma_x, sigma_p) -> KvnState:
    """Square root of a normalized product Gaussian phase-space density."""
    n = xgrid.dims
    x0, p0, sx, sp = (np.broadcast_to(np.asarray(v, dtype=float), n) for v in (x0, p0, sigma_x, sigma_p))
    for grid, c, s in ((xgrid, x0, sx), (pgrid, p0, sp)):
        if np.any(s <= 0):
            raise ValueError("widths must be positive")
        if np.any(c - 5 * s < grid.lower) or np.any(c + 5 * s > grid.upper):
            raise ValueError("phase-space packet closer than 5 sigma to the box edge")
    lines = [np.exp(-(ax - x0[j]) ** 2 / (4 * sx[j] ** 2)) for j, ax in enumerate(xgrid.axes())]
    lines += [np.exp(-(ax - p0[j]) ** 2 / (4 * sp[j] ** 2)) for j, ax in enumerate(pgrid.axes())]
    psi = np.ones(xgrid.shape + pgrid.shape)
    for j, line in enumerate(lines):
        shape = [1] * (2 * n)
        shape[j] = -1
        psi = psi * line.reshape(shape)
    psi /= math.sqrt(float(np.sum(psi ** 2)) * xgrid.cell_volume * pgrid.cell_volume)
    return KvnState(psi.astype(complex), xgrid, pgrid, 0.0)


def _bshape(n2: int, axis: int) -> list[int]:
    s = [1] * n2
    s[axis] = -1
    return s


def propagate_kvn(state: KvnState, spec: LiouvillianSpec, t_end: float, dt: float | None = None,
                  *, dt_cap: float = 0.05, phase_target: float = PHASE_TARGET,
                  guard: str = "raise", strict_edges: bool = False,
                  callback=None, callback_every: int = 1) -> KvnState:
    """Strang splitting force/2 - streaming - force/2, each exact in a mixed DFT basis."""
    if not t_end >= state.time:
        raise ValueError("t_end must not precede the state's time")
    if dt is not None and not dt > 0:
        raise ValueError("dt must be positive")
    n = state.dims
    sched = spec.timing()
    m = spec.params.m
    xax = tuple(range(n))
    pax = tuple(range(n, 2 * n))
    kx = _derivative_wavenumbers(state.xgrid, spec.order_x)
    kp = _derivative_wavenumbers(state.pgrid, spec.order_p)
    paxes = state.pgrid.axes()
    F = spec.force(state.xgrid)
    # streaming phase per unit integral: sum_j k_xj p_j / m, shape broadcast over (x..., p...)
    stream = 0.0
    force = 0.0
    for j in range(n):
        stream = stream + kx[j].reshape(_bshape(2 * n, j)) * paxes[j].reshape(_bshape(2 * n, n + j)) / m
        force = force + F[j].reshape(state.xgrid.shape + (1,) * n) * kp[j].reshape(_bshape(2 * n, n + j))
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
    s_spread = f_spread = None
    pending = 0.0
    step = 0
    warned = False
    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        if fixed_steps is not None:
            h = dt_fixed if step < fixed_steps - 1 else t_end - t
        else:
            if s_spread is None:
                s_spread = support_spread(stream, np.abs(np.fft.fftn(psi, axes=xax)) ** 2, xax)
                f_spread = support_spread(force, np.abs(np.fft.fftn(psi, axes=pax)) ** 2, pax)
            rate = sched.kinetic_rate(t) * s_spread + sched.potential_rate(t) * f_spread
            h = min(dt_cap, phase_target / rate if rate > 0 else dt_cap, t_end - t)
        t1, t2 = t, t + h
        tm = 0.5 * (t1 + t2)
        ib1 = sched.potential_integral(t1, tm)
        ib2 = sched.potential_integral(tm, t2)
        ia = sched.kinetic_integral(t1, t2)

        # the trailing half kick of a step is merged into the next step's leading one
        ph = np.fft.fftn(psi, axes=pax)
        f_spread = support_spread(force, np.abs(ph) ** 2, pax)
        ph *= np.exp(1j * (pending + ib1) * force)
        psi = np.fft.ifftn(ph, axes=pax)
        xh = np.fft.fftn(psi, axes=xax)
        s_spread = support_spread(stream, np.abs(xh) ** 2, xax)
        xh *= np.exp(-1j * ia * stream)
        psi = np.fft.ifftn(xh, axes=xax)
        pending = ib2

        phase = max((ib1 + ib2) * f_spread, ia * s_spread)
        out.diagnostics["max_phase"] = max(out.diagnostics.get("max_phase", 0.0), phase)
        if phase > math.pi:
            suggested = 0.5 * h * math.pi / phase
            if guard == "raise":
                raise PhaseIncrementError(phase, h, suggested, t1)
            if not warned:
                logger.warning("KvN phase increment %.3g rad > pi at t=%.6g", phase, t1)
                warned = True
        t = t2
        step += 1
        last = t >= t_end - 1e-14 * max(1.0, abs(t_end))
        if last or (callback is not None and step % callback_every == 0):
            ph = np.fft.fftn(psi, axes=pax)
            ph *= np.exp(1j * pending * force)
            psi = np.fft.ifftn(ph, axes=pax)
            pending = 0.0
            if callback is not None and step % callback_every == 0:
                out.amplitudes, out.time = psi, t
                callback(out)
    out.amplitudes = psi
    out.time = t_end
    out.diagnostics["steps"] = out.diagnostics.get("steps", 0) + step
    _check_edges(out, strict_edges)
    return out


def _check_edges(state: KvnState, strict: bool) -> None:
    rho = state.density()
    n = state.dims
    px = rho.sum(axis=tuple(range(n, 2 * n)))
    pp = rho.sum(axis=tuple(range(n)))
    worst = max(max(edge_masses(px)), max(edge_masses(pp)))
    state.diagnostics["edge_mass"] = max(state.diagnostics.get("edge_mass", 0.0), worst)
    if worst > 1e-6:
        msg = f"KvN boundary mass {worst:.3e} exceeds 1e-6 at t={state.time:.6g}"
        if strict:
            raise BoundaryMassError(msg)
        logger.warning(msg)


def liouvillian_matrix(spec: LiouvillianSpec, xgrid: GridSpec, pgrid: GridSpec, t: float):
    """Dense L(t) = -i[k(t) p/m D_x - v(t) f'(x) D_p] and its two terms, 1D only."""
    if xgrid.dims != 1 or xgrid.size * pgrid.size > 1024:
        raise ValueError("dense Liouvillian only for tiny 1D phase-space grids")
    sched = spec.timing()

    def dmat(grid: GridSpec, order):
        keff = _derivative_wavenumbers(grid, order)[0]
        n = grid.size
        F = np.fft.fft(np.eye(n), axis=0)
        return np.fft.ifft(1j * keff[:, None] * F, axis=0)

    Dx, Dp = dmat(xgrid, spec.order_x), dmat(pgrid, spec.order_p)
    P = np.diag(pgrid.axes()[0] / spec.params.m)
    Fd = np.diag(spec.force(xgrid)[0])
    A = -1j * sched.kinetic_rate(t) * np.kron(Dx, P)
    B = 1j * sched.potential_rate(t) * np.kron(Fd, Dp)
    return A + B, A, B


def marginal_position_observables(state: KvnState) -> MomentSummary:
    """Moments of the classical density; position moments use the x-marginal."""
    n = state.dims
    rho = state.density()
    rho = rho / rho.sum()
    xm = rho.sum(axis=tuple(range(n, 2 * n)))
    pm = rho.sum(axis=tuple(range(n)))
    X = state.xgrid.mesh()
    P = state.pgrid.mesh()
    mx = np.array([float(np.sum(xm * X[j])) for j in range(n)])
    mp = np.array([float(np.sum(pm * P[j])) for j in range(n)])
    cxx = np.array([[float(np.sum(xm * X[i] * X[j])) - mx[i] * mx[j] for j in range(n)] for i in range(n)])
    cpp = np.array([[float(np.sum(pm * P[i] * P[j])) - mp[i] * mp[j] for j in range(n)] for i in range(n)])
    xaxes, paxes = state.xgrid.axes(), state.pgrid.axes()
    cxp = np.empty((n, n))
    for i in range(n):
        xi = xaxes[i].reshape(_bshape(2 * n, i))
        for j in range(n):
            pj = paxes[j].reshape(_bshape(2 * n, n + j))
            cxp[i, j] = float(np.sum(rho * xi * pj)) - mx[i] * mp[j]
    return MomentSummary(mx, mp, np.diag(cxx).copy(), np.diag(cpp).copy(), np.diag(cxp).copy(),
                         cov_xx_full=cxx, cov_pp_full=cpp, cov_xp_full=cxp)


def position_marginal(state: KvnState) -> WaveState:
    """x-marginal packaged as a WaveState with amplitudes sqrt(marginal density)."""
    n = state.dims
    xm = state.density().sum(axis=tuple(range(n, 2 * n)))
    return WaveState(np.sqrt(xm / state.xgrid.cell_volume), state.xgrid, state.time)


def sample_positions(state: KvnState, count: int, rng) -> np.ndarray:
    return _sample_positions(position_marginal(state), count, rng)


# ---------------------------------------------------------------------------
# Trajectory ensemble


@dataclass
class EnsembleResult:
    times: np.ndarray
    moments: list[MomentSummary]
    flagged: int
    positions: np.ndarray | None = None


def _moments_from_samples(x: np.ndarray, p: np.ndarray) -> MomentSummary:
    mx, mp = x.mean(axis=0), p.mean(axis=0)
    dx, dp = x - mx, p - mp
    n = len(x)
    cxx = dx.T @ dx / n
    cpp = dp.T @ dp / n
    cxp = dx.T @ dp / n
    return MomentSummary(mx, mp, np.diag(cxx).copy(), np.diag(cpp).copy(), np.diag(cxp).copy(),
                         cov_xx_full=cxx, cov_pp_full=cpp, cov_xp_full=cxp)


def ensemble_oracle(obj: ObjectiveSpec, params: FrictionParams, init: GaussianInit,
                    times: Sequence[float], n_traj: int, rng, dt_traj: float = 1e-3,
                    box_scale: float = 10.0, initial: tuple[np.ndarray, np.ndarray] | None = None,
                    keep_positions: bool = False) -> EnsembleResult:
    """RK4 integration of m x'' = -grad f - beta x' for an ensemble.

    Moments report the canonical momentum p = m e^{beta t/m} x'. Trajectories
    leaving box_scale times the objective's box are flagged and dropped.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    gen = as_generator(rng)
    m, beta = params.m, params.beta
    n = init.dim
    if initial is None:
        sp = np.asarray(init.sigma_p if init.sigma_p is not None else np.zeros(n))
        x = np.asarray(init.mean_x) + np.asarray(init.sigma_x) * gen.standard_normal((n_traj, n))
        p = np.asarray(init.mean_p) + sp * gen.standard_normal((n_traj, n))
    else:
        x, p = (np.array(a, dtype=float).reshape(n_traj, n) for a in initial)
    v = p / m
    lo, hi = np.array(obj.lower), np.array(obj.upper)
    center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    alive = np.ones(n_traj, dtype=bool)

    def acc(xx, vv):
        return (-obj.gradient_unchecked(xx) - beta * vv) / m

    times = np.asarray(sorted(times), dtype=float)
    out: list[MomentSummary] = []
    pos = []
    t = 0.0
    for target in times:
        steps = int(math.ceil((target - t) / dt_traj - 1e-9))
        if steps > 0:
            h = (target - t) / steps
            for _ in range(steps):
                k1x, k1v = v, acc(x, v)
                k2x, k2v = v + 0.5 * h * k1v, acc(x + 0.5 * h * k1x, v + 0.5 * h * k1v)
                k3x, k3v = v + 0.5 * h * k2v, acc(x + 0.5 * h * k2x, v + 0.5 * h * k2v)
                k4x, k4v = v + h * k3v, acc(x + h * k3x, v + h * k3v)
                x = x + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
                v = v + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
                bad = np.any(np.abs(x - center) > box_scale * half, axis=1) | ~np.all(np.isfinite(x), axis=1)
                if np.any(bad & alive):
                    alive &= ~bad
                    x[bad] = center
                    v[bad] = 0.0
            t = target
        pcan = m * math.exp(beta * t / m) * v
        out.append(_moments_from_samples(x[alive], pcan[alive]))
        if keep_positions:
            pos.append(x[alive].copy())
    flagged = int((~alive).sum())
    if flagged:
        logger.warning("ensemble_oracle: %d trajectories left the box and were dropped", flagged)
    return EnsembleResult(times, out, flagged, np.array(pos, dtype=object) if keep_positions else None)


# ---------------------------------------------------------------------------
# Classical local optimizer


def auto_kvn_grids(params: FrictionParams, a: float, mean, cov, t_end: float, *,
                   n_times: int = 400, width: float = 6.5,
                   max_points: int = 1 << 22) -> tuple[GridSpec, GridSpec]:
    """Phase-space grids for a Gaussian density transported over [0, t_end].

    The amplitude is the square root of the density, so its standard
    deviations are sqrt(2) times the density's. Box half-widths cover
    mean +- width amplitude sigmas of each marginal; spacings resolve the
    conditional widths sqrt(det C)/sigma, which set the finest structure of
    the sheared density, with the same margin in the DFT basis.
    """
    det0 = float(np.linalg.det(np.asarray(cov)))
    if det0 <= 0:
        raise ValueError("KvN grids need a nondegenerate initial covariance")
    r2 = math.sqrt(2.0)
    xmax = pmax = 0.0
    sx_max = sp_max = 0.0
    for t in np.linspace(0.0, t_end, n_times):
        mu, C = evolve_gaussian_moments(float(t), params, a, 0.0, mean, cov)
        sx, sp = math.sqrt(C[0, 0]), math.sqrt(C[1, 1])
        xmax = max(xmax, abs(mu[0]) + width * r2 * sx)
        pmax = max(pmax, abs(mu[1]) + width * r2 * sp)
        sx_max, sp_max = max(sx_max, sx), max(sp_max, sp)
    # the flow is Hamiltonian in (x, canonical p), so det C stays det0;
    # an amplitude of conditional density width c has wavenumber sigma 1/(r2 c)
    cond_x = math.sqrt(det0) / sp_max
    cond_p = math.sqrt(det0) / sx_max
    hx = math.pi * r2 * cond_x / width
    hp = math.pi * r2 * cond_p / width
    nx, npts = next_pow2(2 * xmax / hx), next_pow2(2 * pmax / hp)
    if nx * npts > max_points:
        raise ValueError(f"KvN grid {nx}x{npts} exceeds {max_points} cells")
    return GridSpec.symmetric(nx, xmax), GridSpec.symmetric(npts, pmax, role="momentum")


@dataclass
class PreparedClassicalRun:
    objective: ObjectiveSpec
    frame: object
    modes: list
    report: EquilibrationReport
    beta: float
    epsilon: float
    chi0_tilde: float

    def sample(self, count: int, rng) -> np.ndarray:
        gen = as_generator(rng)
        ys = np.stack([sample_positions(s, count, gen)[:, 0] for s in self.modes], axis=-1)
        return self.frame.to_original(ys)


def prepare_local_classical(obj: ObjectiveSpec, init: GaussianInit, eps: float, *,
                            m: float = 1.0, dt_cap: float = 0.05,
                            order: int | None = None) -> PreparedClassicalRun:
    if not obj.is_quadratic:
        raise ValueError("the local driver targets quadratic objectives")
    lmin, lmax, _ = hessian_spectrum(obj)
    beta = math.sqrt(lmin)
    params = FrictionParams(beta, m)
    mom = init.classical_moments()
    setting = "classical_1d" if obj.dim == 1 else "classical_nd"
    report = equilibration_time(eps, params, lmin if obj.dim == 1 else (lmin, lmax), mom,
                                setting, obj.x_star)
    frame = decouple_quadratic(obj.A, obj.x_star, mom)
    if not init.is_product_in(frame.Q):
        raise ValueError("initial density is not a product in the Hessian eigenframe")
    sx, sp = init.sigma_in(frame.Q, "x"), init.sigma_in(frame.Q, "p")
    modes = []
    for j, lam in enumerate(frame.lam):
        fm = frame.moments
        mean = (fm.mean_x[j], fm.mean_p[j])
        cov = np.array([[fm.var_x[j], fm.cov_xp[j]], [fm.cov_xp[j], fm.var_p[j]]])
        xg, pg = auto_kvn_grids(params, float(lam), mean, cov, report.t_star)
        mode_obj = ObjectiveSpec.quadratic([[lam]], [0.0], 0.0, lower=xg.lower, upper=xg.upper)
        spec = LiouvillianSpec(mode_obj, params, order, order)
        st = build_kvn_gaussian(xg, pg, mean[0], mean[1], sx[j], sp[j])
        if report.t_star > 0:
            st = propagate_kvn(st, spec, report.t_star, None, dt_cap=dt_cap)
        modes.append(st)
    return PreparedClassicalRun(obj, frame, modes, report, beta, eps, chi0(mom, params, obj.x_star))


def optimize_local_classical(obj: ObjectiveSpec, init: GaussianInit, eps: float, delta: float,
                             rng, *, prepared: PreparedClassicalRun | None = None, **kw):
    run = prepared or prepare_local_classical(obj, init, eps, **kw)
    v = samples_for_confidence(delta)
    xs = run.sample(v, rng)
    fs = obj.value_unchecked(xs)
    i = int(np.argmin(fs))
    f_best = float(fs[i])
    rep = LocalRunReport(run.report.t_star, run.report, v, abs(f_best - obj.c) <= eps, f_best,
                         obj.c, eps, [s.xgrid.points[0] * s.pgrid.points[0] for s in run.modes],
                         run.beta)
    return xs[i], f_best, rep
