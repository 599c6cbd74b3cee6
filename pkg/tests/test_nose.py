import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dissopt import nose
from dissopt.numerics import SeededRng
from dissopt.objective import ObjectiveSpec


def box_quadratic():
    return ObjectiveSpec.quadratic([[1.0]], [0.6], lower=[0.0], upper=[1.0])


def small_params(**kw):
    base = dict(m=1.0, Q=1.0, beta=5.0, g=2.0, E_ext=0.5, Delta=0.3, s_min=0.01, s_max=6.0,
                p_max=1.5, p_s_max=1.5, h_x=0.05, h_p=0.1, h_s=0.01, h_ps=0.1)
    base.update(kw)
    return nose.NoseParams(**base)


# -- continuum references ----------------------------------------------------------


@pytest.mark.parametrize("beta", [1.0, 20.0, 200.0])
def test_boltzmann_quadrature_matches_midpoint_rule(beta):
    obj = box_quadratic()
    q = float(nose.boltzmann_average_oracle(obj, beta)[0])
    r = nose.boltzmann_riemann(obj, beta, n=200_000)
    assert q == pytest.approx(r, abs=1e-9)


def test_boltzmann_oracle_frozen_value():
    assert float(nose.boltzmann_average_oracle(box_quadratic(), 20.0)[0]) == pytest.approx(
        0.58377029957619331, abs=1e-12)


def test_boltzmann_oracle_2d_separable():
    obj = ObjectiveSpec.quadratic(np.diag([1.0, 2.0]), [0.3, 0.6], lower=[0, 0], upper=[1, 1])
    q = nose.boltzmann_average_oracle(obj, 5.0, rtol=1e-7)
    one = [nose.boltzmann_riemann(ObjectiveSpec.quadratic([[a]], [c], lower=[0], upper=[1]), 5.0)
           for a, c in ((1.0, 0.3), (2.0, 0.6))]
    np.testing.assert_allclose(q, one, atol=1e-6)


# -- shell integral ----------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(h_rest=st.floats(-0.5, 1.0), beta=st.floats(0.5, 30.0), delta=st.floats(1e-3, 0.5),
       N=st.integers(1, 4))
def test_shell_integral_closed_form_matches_quadrature(h_rest, beta, delta, N):
    p = small_params(beta=beta, Delta=delta, E_ext=0.2)
    a = nose.shell_s_integral(h_rest, p, N)
    b = nose.shell_s_integral_quadrature(h_rest, p, N)
    assert a == pytest.approx(b, rel=1e-9)


def test_sinhc_factor_tends_to_one():
    p = small_params(Delta=1e-6)
    assert nose.sinhc_shell_factor(p, 1) == pytest.approx(1.0, abs=1e-10)
    assert nose.sinhc_shell_factor(small_params(Delta=0.3), 1) > 1.0


# -- discrete microcanonical sums ------------------------------------------------


def test_closed_form_s_sum_matches_brute_force():
    obj = box_quadratic()
    p = small_params()
    fast, diag = nose.discrete_microcanonical_average(obj, p)
    slow = nose.brute_force_microcanonical_average(obj, p)
    assert fast == pytest.approx(slow, abs=1e-12)
    assert 0 < diag.occupancy <= 1


def test_select_discretization_magnitudes():
    eps, beta, N, x_max, m, Q, fp = 0.05, 20.0, 1, 1.0, 1.0, 2.0, 0.6
    p = nose.select_discretization(eps, beta, N, x_max, m, Q, fp, g=2.0)
    root = math.sqrt(eps / x_max)
    assert p.h_x == pytest.approx(1 / (beta * N * fp))
    assert p.h_p == pytest.approx(math.sqrt(m / beta) * root)
    assert p.h_ps == pytest.approx(math.sqrt(Q / beta) * root)
    assert p.h_s == pytest.approx(eps / x_max ** 1.5)
    assert p.Delta == pytest.approx(root / beta)
    assert p.p_max == pytest.approx(math.sqrt(m / beta)) and p.p_s_max == pytest.approx(math.sqrt(Q / beta))
    assert p.E_ext == pytest.approx(p.Delta)
    half = nose.select_discretization(eps, beta, N, x_max, m, Q, fp, g=2.0, scale=0.5)
    for name in ("h_x", "h_p", "h_s", "h_ps", "Delta"):
        assert getattr(half, name) == pytest.approx(0.5 * getattr(p, name))
    assert set(p.formulas) >= {"Delta", "h_x", "h_p", "h_s", "h_ps", "E_ext"}


def test_select_discretization_default_g_and_validation():
    p = nose.select_discretization(0.05, 20.0, 3, 1.0, 1.0, 1.0, 0.6)
    assert p.g == 4.0
    with pytest.raises(ValueError):
        nose.select_discretization(0.0, 20.0, 1, 1.0, 1.0, 1.0, 0.6)


def test_refinement_reduces_error():
    obj = box_quadratic()
    ref = float(nose.boltzmann_average_oracle(obj, 20.0)[0])
    errs = []
    for s in (1.0, 0.5, 0.25, 0.125, 0.0625):
        p = nose.select_discretization(0.05, 20.0, 1, 1.0, 1.0, 1.0, obj.fprime_max, g=2.0, scale=s)
        errs.append(abs(nose.discrete_microcanonical_average(obj, p)[0] - ref))
    assert all(b <= a for a, b in zip(errs, errs[1:]))
    assert errs[0] <= 0.02


def test_empty_shell_reports_energy_window():
    obj = box_quadratic()
    p = small_params(E_ext=-5.0)
    with pytest.raises(nose.EmptyShellError, match="E_ext"):
        nose.discrete_microcanonical_average(obj, p)
    found = nose.find_shell_energy(obj, p)
    assert found.E_ext > -5.0
    assert nose.discrete_microcanonical_average(obj, found)[1].occupancy >= 1e-3


def test_hamiltonian_eval_and_validation():
    obj = box_quadratic()
    p = small_params()
    h = nose.nose_hamiltonian_eval([0.6], [1.0], 2.0, 0.5, obj, p)
    assert h == pytest.approx(1 / 8 + 0.125 + (2 / 5) * math.log(2))
    with pytest.raises(ValueError):
        nose.nose_hamiltonian_eval([0.6], [1.0], 0.0, 0.5, obj, p)
    with pytest.raises(ValueError):
        nose.NoseParams(beta=-1.0)


# -- Euler dynamics ---------------------------------------------------------------


def test_euler_converges_to_rk4_within_bound():
    obj = ObjectiveSpec.builtin("double_well", lower=[-2], upper=[2])
    p = nose.NoseParams(beta=3.0, g=2.0, s_min=0.3, p_max=2.0, p_s_max=2.0)
    init = (0.5, 0.3, 1.0, 0.1)
    T = 0.5
    ref = nose.nose_rk4_reference(obj, p, init, 1e-4, int(T / 1e-4))
    errs = []
    for h in (1e-3, 5e-4):
        tr = nose.nose_euler_trajectory(obj, p, h, int(round(T / h)), init=init, record_every=1)
        errs.append(np.abs(tr.states[-1] - nose.nose_rk4_reference(obj, p, init, h, int(round(T / h)) - 1)).max())
        end = np.array(tr.states[-1])
    assert errs[1] < errs[0]
    # global error of the final Euler run against the fine reference stays inside the envelope
    L, M = nose.lipschitz_bound(p, 1, obj.fprime_max, obj.fsecond_max)
    env = nose.euler_error_bound(L, 4, 5e-4, M * 10, T)
    assert np.abs(end - ref).max() <= env


def test_euler_energy_drift_shrinks_with_step():
    obj = ObjectiveSpec.builtin("double_well", lower=[-2], upper=[2])
    p = nose.NoseParams(beta=3.0, g=2.0, s_min=0.05)
    init = (0.5, 0.3, 1.0, 0.1)
    d = [nose.nose_euler_trajectory(obj, p, h, int(2.0 / h), init=init, record_every=10).energy_drift
         for h in (2e-3, 5e-4)]
    assert d[1] < d[0] / 2


def test_euler_termination_and_mode():
    obj = ObjectiveSpec.builtin("asym_double_well", lower=[-2], upper=[2])
    p = nose.NoseParams(beta=3.0, g=2.0, s_min=0.9)
    tr = nose.nose_euler_trajectory(obj, p, 1e-2, 10_000, init=(0.0, 0.0, 1.0, -5.0))
    assert tr.terminated is not None and "s collapsed" in tr.terminated
    tr = nose.nose_euler_trajectory(obj, nose.NoseParams(beta=3.0, s_min=0.05), 1e-3, 20_000,
                                    rng=SeededRng(1), x_init_range=(-1.5, -0.5))
    assert tr.terminated is None
    assert obj.lower[0] <= tr.mode <= obj.upper[0]
    assert tr.hist_counts.sum() > 0


def test_lipschitz_bound_dominates_sampled_difference_quotients():
    obj = ObjectiveSpec.builtin("double_well", lower=[-1.5], upper=[1.5])
    p = nose.NoseParams(beta=3.0, s_min=0.5, p_max=1.0, p_s_max=1.0)
    L, _ = nose.lipschitz_bound(p, 1, obj.fprime_max, obj.fsecond_max)
    m, Q, k = p.m, p.Q, p.g / p.beta

    def F(z):
        x, pp, s, ps = z
        return np.array([pp / (m * s * s), -float(obj.gradient_unchecked(np.array([x]))[0]), ps / Q,
                         pp * pp / (m * s ** 3) - k / s])

    gen = SeededRng(3).generator()
    worst = 0.0
    for _ in range(2000):
        lo = np.array([-1.5, -1.0, 0.5, -1.0])
        hi = np.array([1.5, 1.0, 2.0, 1.0])
        a, b = gen.uniform(lo, hi), gen.uniform(lo, hi)
        worst = max(worst, np.linalg.norm(F(a) - F(b)) / np.linalg.norm(a - b))
    assert worst <= L


# -- time-averaged density matrices -------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(D=st.integers(2, 24), seed=st.integers(0, 10 ** 6), t=st.floats(0.01, 1e4))
def test_time_average_is_a_density_matrix(D, seed, t):
    gen = SeededRng(seed).generator()
    L = nose.random_gapped_hermitian(D, gen)
    rho = nose.random_density(D, gen, rank=int(gen.integers(1, D + 1)))
    avg = nose.time_averaged_density(L, rho, t)
    avg.check(herm_tol=1e-12, trace_tol=1e-10, psd_tol=1e-10)
    inf = nose.dephase(rho, L)
    assert np.linalg.norm(avg.matrix - inf.matrix) <= nose.dephasing_envelope(L, rho) / t * (1 + 1e-9) + 1e-12


def test_time_average_matches_quadrature_and_short_time_limit():
    gen = SeededRng(5).generator()
    L = nose.random_gapped_hermitian(12, gen)
    rho = nose.random_density(12, gen)
    for t in (0.5, 4.0):
        a = nose.time_averaged_density(L, rho, t).matrix
        b = nose.time_average_quadrature(L, rho, t, nodes=4000).matrix
        assert np.abs(a - b).max() < 1e-7
    np.testing.assert_allclose(nose.time_averaged_density(L, rho, 1e-9).matrix, rho.matrix, atol=1e-8)


def test_dephase_keeps_degenerate_blocks():
    V, _ = np.linalg.qr(SeededRng(6).generator().standard_normal((4, 4)))
    L = V @ np.diag([0.0, 1.0, 1.0, 2.0]) @ V.T
    rho = nose.random_density(4, SeededRng(7))
    out = nose.dephase(rho, L).matrix
    r = V.T @ out @ V
    assert abs(r[1, 2]) > 1e-6
    assert abs(r[0, 1]) < 1e-12 and abs(r[2, 3]) < 1e-12
    np.testing.assert_allclose(nose.dephase(nose.DensityMatrix(out), L).matrix, out, atol=1e-12)
    assert nose.min_nonzero_gap(L) == pytest.approx(1.0)


def test_random_gapped_hermitian_respects_gap():
    L = nose.random_gapped_hermitian(64, SeededRng(8), min_gap=0.05)
    lam = np.linalg.eigvalsh(L)
    assert np.diff(lam).min() >= 0.05 - 1e-10
    with pytest.raises(ValueError):
        nose.time_averaged_density(np.ones((3, 3)) + 1j * np.eye(3) * 0 + np.triu(np.ones((3, 3))), nose.random_density(3, SeededRng(0)), 1.0)
