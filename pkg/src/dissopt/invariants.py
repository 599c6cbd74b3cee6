"""Named invariant checks across all modules, run by ``dissopt validate``.

Each check is small enough that the full suite finishes in well under a
minute on one core. A check returns a short detail string and raises
AssertionError on failure.
"""

from __future__ import annotations

import math
import time
import traceback
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from . import baselines as bl
from . import kvn_sim as kv
from . import nose
from . import numerics as nm
from . import objective as ob
from . import oscillator as osc
from . import quantum_sim as qs


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


CHECKS: list[tuple[str, Callable[[], str]]] = []


def check(name: str):
    def deco(fn):
        CHECKS.append((name, fn))
        return fn
    return deco


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise AssertionError(msg)


# -- numerics ---------------------------------------------------------------


@check("lambert_w_residual")
def _lambert() -> str:
    ys = -np.exp(-1) * np.concatenate([np.logspace(-300, 0, 200)[::-1], [1 - 1e-15]])
    ys = np.concatenate([ys, -np.logspace(-300, -1, 200)])
    worst = 0.0
    for y in ys:
        if not (-1 / math.e <= y < 0):
            continue
        w = nm.lambert_w_minus1(float(y))
        _require(w <= -1, f"branch violated at y={y}")
        worst = max(worst, abs(w * math.exp(w) - y) / abs(y))
    _require(worst <= 1e-12, f"relative residual {worst:.3e}")
    return f"max relative residual {worst:.2e}"


@check("sinhc_continuity")
def _sinhc() -> str:
    xs = np.array([1e-9, 1e-5, 9.99e-5, 1.0001e-4, 1e-2])
    ref = np.sinh(xs) / xs
    err = float(np.max(np.abs(nm.sinhc(xs) - ref) / ref))
    _require(nm.sinhc(0.0) == 1.0 and err < 1e-13, f"sinhc error {err:.2e}")
    return f"max relative error {err:.2e}"


@check("stencil_monomial_exactness")
def _stencil() -> str:
    worst = 0.0
    for d in (1, 2, 4, 8):
        for deriv, k in (("first", 1), ("second", 2)):
            st = nm.central_difference_stencil(d, deriv)
            j = st.offsets.astype(float)
            # order-2d central stencils are exact through degree 2d (+1 for the even one)
            for p in range(2 * d + k):
                got = float(np.sum(st.coefficients * j ** p))
                want = math.factorial(k) if p == k else 0.0
                scale = float(np.sum(np.abs(st.coefficients) * np.abs(j) ** p))
                worst = max(worst, abs(got - want) / max(scale, 1.0))
    _require(worst < 1e-9, f"moment error {worst:.2e}")
    return f"scaled moment error {worst:.2e}"


@check("circulant_vs_dense")
def _circulant() -> str:
    rng = nm.SeededRng(3).generator()
    worst = 0.0
    for d, deriv in ((1, "first"), (3, "second"), (6, "first")):
        st = nm.central_difference_stencil(d, deriv, 0.1)
        f = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        dense = nm.stencil_matrix(st, 64) @ f
        diff = float(np.max(np.abs(nm.circulant_apply(st, f) - dense)))
        worst = max(worst, diff / max(1.0, float(np.max(np.abs(dense)))))
    _require(worst <= 1e-12, f"mismatch {worst:.2e}")
    return f"max relative difference {worst:.2e}"


@check("wishart_unit_dimension")
def _wishart1() -> str:
    k, _ = bl.wishart_kappa(1, 0, 0)
    _require(k == 1.0, "N=1 condition number is not 1")
    return "kappa(N=1) = 1"


# -- objective --------------------------------------------------------------


@check("objective_gradient_consistency")
def _gradient() -> str:
    worst = 0.0
    for obj in (ob.ObjectiveSpec.builtin("anisotropic2d", kappa=5.0, angle=0.4),
                ob.ObjectiveSpec.builtin("asym_double_well", x_max=2.0)):
        x = np.full(obj.dim, 0.37)
        g = ob.gradient(obj, x)
        for i in range(obj.dim):
            e = np.zeros(obj.dim)
            e[i] = 1e-6
            fd = (ob.eval(obj, x + e) - ob.eval(obj, x - e)) / 2e-6
            worst = max(worst, abs(fd - g[i]))
    _require(worst < 1e-7, f"gradient mismatch {worst:.2e}")
    return f"central-difference mismatch {worst:.2e}"


# -- oscillator analytics ---------------------------------------------------


@check("closed_form_vs_ode")
def _ode() -> str:
    worst = 0.0
    for beta, a in ((1.0, 1.0), (2.0, 1.0), (0.5, 2.0)):
        params = osc.FrictionParams(beta)
        init = osc.MomentSummary.gaussian(1.3, -0.4, 0.5, 0.5)
        sol = solve_ivp(lambda t, y: [y[1], -a * (y[0] - 0.2) - beta * y[1]], (0, 6),
                        [1.3, -0.4], rtol=1e-11, atol=1e-12, dense_output=True)
        for t in (0.5, 2.0, 6.0):
            worst = max(worst, abs(osc.classical_mean_position(t, params, a, 0.2, init) - sol.sol(t)[0]))
    _require(worst < 1e-8, f"mean position mismatch {worst:.2e}")
    return f"max |closed form - ODE| {worst:.2e}"


@check("equilibration_time_monotone_in_eps")
def _teq() -> str:
    params = osc.FrictionParams(1.0)
    init = osc.MomentSummary.coherent([2.0], [0.0], 0.5 ** 0.5)
    ts = [osc.equilibration_time(e, params, 1.0, init, "quantum_1d").t_star for e in (1e-1, 1e-2, 1e-3)]
    _require(ts[0] <= ts[1] <= ts[2], f"t_star not monotone: {ts}")
    return "t_star " + ", ".join(f"{t:.4g}" for t in ts)


# -- quantum simulation -----------------------------------------------------


@check("quantum_norm_and_ehrenfest")
def _quantum() -> str:
    grid = ob.GridSpec.symmetric(256, 8.0)
    params = osc.FrictionParams(1.0)
    obj = ob.ObjectiveSpec.quadratic([[1.0]], [0.0], x_max=8.0)
    spec = qs.FrictionHamiltonianSpec(obj, params)
    st = qs.build_gaussian_state(grid, 1.0, 0.0, 0.5 ** 0.5)
    out = qs.propagate(st, spec, 3.0, 1e-3)
    norm = out.norm()
    mom = osc.MomentSummary.coherent([1.0], [0.0], 0.5 ** 0.5)
    err = abs(qs.observables(out).mean_x[0] - osc.classical_mean_position(3.0, params, 1.0, 0.0, mom))
    _require(abs(norm - 1) < 1e-10 and err < 1e-6, f"norm {norm!r}, mean error {err:.2e}")
    return f"norm drift {abs(norm - 1):.1e}, mean error {err:.1e}"


@check("dense_propagator_unitarity")
def _dense() -> str:
    grid = ob.GridSpec.symmetric(16, 4.0)
    obj = ob.ObjectiveSpec.quadratic([[1.0]], [0.0], x_max=4.0)
    spec = qs.FrictionHamiltonianSpec(obj, osc.FrictionParams(1.0), stencil_order=2)
    U, res = qs.dense_propagator_oracle(spec, grid, 0.5, substeps=2000)
    un = float(np.linalg.norm(U.conj().T @ U - np.eye(grid.size)))
    _require(un <= 1e-8 and res <= 1e-6, f"unitarity {un:.2e}, factorization {res:.2e}")
    return f"unitarity {un:.1e}, factorization residual {res:.1e}"


# -- KvN --------------------------------------------------------------------


@check("kvn_norm_and_mean")
def _kvn() -> str:
    params = osc.FrictionParams(1.0)
    xg, pg = kv.auto_kvn_grids(params, 1.0, (0.5, 0.0), np.diag([0.04, 0.04]), 2.0)
    obj = ob.ObjectiveSpec.quadratic([[1.0]], [0.0], lower=xg.lower, upper=xg.upper)
    st = kv.build_kvn_gaussian(xg, pg, 0.5, 0.0, 0.2, 0.2)
    out = kv.propagate_kvn(st, kv.LiouvillianSpec(obj, params), 2.0)
    norm = out.norm()
    init = osc.MomentSummary.gaussian(0.5, 0.0, 0.04, 0.04)
    err = abs(kv.marginal_position_observables(out).mean_x[0]
              - osc.classical_mean_position(2.0, params, 1.0, 0.0, init))
    _require(abs(norm - 1) < 1e-8 and err < 1e-4, f"norm {norm!r}, mean error {err:.2e}")
    return f"norm drift {abs(norm - 1):.1e}, mean error {err:.1e}"


@check("kvn_liouvillian_hermitian")
def _lmat() -> str:
    xg = ob.GridSpec.symmetric(8, 2.0)
    pg = ob.GridSpec.symmetric(8, 2.0, role="momentum")
    obj = ob.ObjectiveSpec.quadratic([[1.0]], [0.0], x_max=2.0)
    L, _, _ = kv.liouvillian_matrix(kv.LiouvillianSpec(obj, osc.FrictionParams(1.0), 2, 2), xg, pg, 0.3)
    err = float(np.abs(L - L.conj().T).max())
    _require(err < 1e-12, f"non-Hermitian by {err:.2e}")
    return f"Hermiticity defect {err:.1e}"


# -- Nose -------------------------------------------------------------------


@check("nose_shell_integral_identity")
def _shell() -> str:
    p = nose.NoseParams(beta=5.0, g=2.0, E_ext=0.3, Delta=0.05)
    worst = 0.0
    for h in (0.0, 0.2, 0.31, 0.7):
        a, b = nose.shell_s_integral(h, p, 1), nose.shell_s_integral_quadrature(h, p, 1)
        worst = max(worst, abs(a - b) / abs(b))
    _require(worst < 1e-10, f"relative mismatch {worst:.2e}")
    return f"relative mismatch {worst:.1e}"


@check("nose_average_in_box")
def _nose_box() -> str:
    obj = ob.ObjectiveSpec.quadratic([[1.0]], [0.6], lower=[0.0], upper=[1.0])
    p = nose.select_discretization(0.05, 20.0, 1, 1.0, 1.0, 1.0, obj.fprime_max, g=2.0)
    v, d = nose.discrete_microcanonical_average(obj, p)
    _require(d.numerator >= 0 and d.denominator > 0 and 0.0 <= v <= 1.0, f"average {v}")
    return f"<x> = {v:.6f}, occupancy {d.occupancy:.3f}"


@check("time_average_density_properties")
def _tad() -> str:
    rng = nm.SeededRng(11).generator()
    L = nose.random_gapped_hermitian(8, rng)
    rho = nose.random_density(8, rng)
    avg = nose.time_averaged_density(L, rho, 3.0)
    avg.check()
    q = nose.time_average_quadrature(L, rho, 3.0, nodes=4000)
    err = float(np.abs(avg.matrix - q.matrix).max())
    inf = nose.dephase(rho, L)
    idem = float(np.abs(nose.dephase(inf, L).matrix - inf.matrix).max())
    _require(err < 1e-6 and idem < 1e-12, f"quadrature error {err:.2e}, idempotence {idem:.2e}")
    return f"quadrature error {err:.1e}, dephase idempotence {idem:.1e}"


# -- baselines ----------------------------------------------------------------


@check("gd_contraction")
def _gd() -> str:
    obj = ob.ObjectiveSpec.quadratic(np.diag([1.0, 7.0]), [0.3, -0.2])
    r = bl.gradient_descent(bl.GdRunConfig(obj, [2.0, 1.0], iterations=30))
    ratios = r.f_gap[1:] / r.f_gap[:-1]
    bound = bl.contraction_factor(1.0, 7.0)
    _require(float(ratios.max()) <= bound + 1e-12, f"ratio {ratios.max()} > {bound}")
    return f"max ratio {ratios.max():.6f} <= {bound:.6f}"


@check("gd_noise_envelope")
def _gd_noise() -> str:
    obj = ob.ObjectiveSpec.quadratic(np.diag([1.0, 4.0]), [0.0, 0.0])
    worst = 0.0
    for mode in ("random", "adversarial"):
        r = bl.gradient_descent(bl.GdRunConfig(obj, [1.0, 1.0], iterations=15, eps0=1e-3,
                                               noise_mode=mode, rng=5))
        env = np.array([bl.noise_deviation_bound(1e-3, k, 4.0) for k in range(r.steps + 1)])
        _require(np.all(r.deviation <= env + 1e-15), f"{mode} deviation above envelope")
        worst = max(worst, float(np.max(r.deviation[1:] / env[1:])))
    return f"max deviation/envelope {worst:.2e}"


@check("bound_formulas")
def _bounds() -> str:
    _require(bl.dyson_truncation_order(0.01) == 3, "Dyson order at 0.01")
    _require(bl.iteration_bound(1, 10, math.exp(4), 1, 1) == 10, "iteration bound example")
    _require(abs(bl.demmel_tail(4, 100) - 0.006) < 1e-15, "Demmel tail example")
    ks = [bl.dyson_truncation_order(e) for e in np.logspace(-12, math.log10(bl.DYSON_EPS_MAX), 60)[:-1]]
    _require(all(a >= b for a, b in zip(ks, ks[1:])), "Dyson order not monotone")
    q = bl.BoundQuery("global_quantum", {"N": 3, "gamma": 0.5, "delta": 0.1})
    _require(bl.query_estimates(q) == bl.query_estimates(q), "query_estimates not pure")
    return "K(0.01)=3, K_gd=10, demmel=0.006"


def run_all(names: list[str] | None = None) -> list[CheckResult]:
    known = {name for name, _ in CHECKS}
    unknown = sorted(set(names or ()) - known)
    if unknown:
        raise KeyError(f"unknown invariant(s) {', '.join(unknown)}; known: {', '.join(sorted(known))}")
    out = []
    for name, fn in CHECKS:
        if names and name not in names:
            continue
        t0 = time.perf_counter()
        try:
            detail = fn()
            ok = True
        except Exception as exc:  # report, never abort the suite
            detail = f"{type(exc).__name__}: {exc}"
            if not isinstance(exc, AssertionError):
                detail += " | " + traceback.format_exc(limit=2).strip().splitlines()[-1]
            ok = False
        out.append(CheckResult(name, ok, detail, time.perf_counter() - t0))
    return out
