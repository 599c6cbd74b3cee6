import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from dissopt import kvn_sim as kv
from dissopt import oscillator as osc
from dissopt.numerics import SeededRng
from dissopt.objective import GridSpec, ObjectiveSpec


def small_setup(beta=0.5, n=16, x_max=6.0, order=None):
    xg = GridSpec.symmetric(n, x_max)
    pg = GridSpec.symmetric(n, x_max, role="momentum")
    obj = ObjectiveSpec.quadratic([[1.0]], [0.0], lower=xg.lower, upper=xg.upper)
    return xg, pg, kv.LiouvillianSpec(obj, osc.FrictionParams(beta), order, order)


@pytest.mark.parametrize("order", [None, 2])
def test_liouvillian_is_hermitian(order):
    xg, pg, spec = small_setup(order=order)
    for t in (0.0, 0.7, 2.0):
        L, A, B = kv.liouvillian_matrix(spec, xg, pg, t)
        assert np.abs(L - L.conj().T).max() <= 1e-12 * max(1.0, np.abs(L).max())
        np.testing.assert_allclose(L, A + B)


def test_split_step_matches_time_ordered_dense_exponential():
    xg, pg, spec = small_setup()
    st0 = kv.build_kvn_gaussian(xg, pg, 0.3, 0.0, 0.8, 0.8)
    T, n = 0.5, 100
    ds = T / n
    U = np.eye(xg.size * pg.size, dtype=complex)
    for k in range(n):
        U = expm(-1j * ds * kv.liouvillian_matrix(spec, xg, pg, (k + 0.5) * ds)[0]) @ U
    ref = U @ st0.amplitudes.ravel()
    out = kv.propagate_kvn(st0, spec, T, 1e-3)
    assert np.linalg.norm(out.amplitudes.ravel() - ref) * math.sqrt(st0.cell_volume) < 1e-5


def test_force_modes_agree_for_quadratic():
    xg, _, spec = small_setup(n=64)
    fd = kv.LiouvillianSpec(spec.objective, spec.params, force_mode="fd", fd_order=2)
    np.testing.assert_allclose(fd.force(xg), spec.force(xg), atol=1e-10)


@settings(max_examples=8, deadline=None)
@given(x0=st.floats(-0.5, 0.5), p0=st.floats(-0.3, 0.3), t=st.floats(0.2, 2.0))
def test_kvn_moments_match_closed_form(x0, p0, t):
    params = osc.FrictionParams(1.0)
    s = 0.3
    xg, pg = kv.auto_kvn_grids(params, 1.0, (x0, p0), np.diag([s * s, s * s]), t)
    obj = ObjectiveSpec.quadratic([[1.0]], [0.0], lower=xg.lower, upper=xg.upper)
    st0 = kv.build_kvn_gaussian(xg, pg, x0, p0, s, s)
    out = kv.propagate_kvn(st0, kv.LiouvillianSpec(obj, params), t, None)
    assert out.norm() == pytest.approx(1.0, abs=1e-12)
    mo = kv.marginal_position_observables(out)
    init = osc.MomentSummary.gaussian([x0], [p0], [s * s], [s * s])
    assert mo.mean_x[0] == pytest.approx(osc.classical_mean_position(t, params, 1.0, 0.0, init), abs=1e-4)
    assert mo.var_x[0] == pytest.approx(osc.classical_variance(t, params, 1.0, init), rel=1e-3, abs=1e-6)


def test_ensemble_oracle_matches_closed_form():
    params = osc.FrictionParams(1.0)
    obj = ObjectiveSpec.quadratic([[1.0]], [0.0], x_max=10.0)
    init = osc.GaussianInit.make([0.5], [0.1], 0.2, 0.2)
    res = kv.ensemble_oracle(obj, params, init, [0.0, 1.0, 3.0], 20_000, SeededRng(4))
    mom = init.classical_moments()
    for t, m in zip(res.times, res.moments):
        ref = osc.classical_mean_position(t, params, 1.0, 0.0, mom)
        sd = math.sqrt(osc.classical_variance(t, params, 1.0, mom) / 20_000)
        assert abs(m.mean_x[0] - ref) < 5 * sd
        pref = osc.classical_mean_momentum(t, params, 1.0, 0.0, mom)
        assert m.mean_p[0] == pytest.approx(pref, abs=5 * 0.2 * math.exp(t / 2) / math.sqrt(20_000) + 1e-3)
    assert res.flagged == 0


def test_ensemble_flags_escaping_trajectories():
    params = osc.FrictionParams(0.1)
    obj = ObjectiveSpec.quadratic([[1.0]], [0.0], x_max=1.0)
    init = osc.GaussianInit.make([0.0], [0.0], 0.1, 0.1)
    x = np.zeros((4, 1))
    p = np.array([[0.0], [0.0], [0.0], [100.0]])
    res = kv.ensemble_oracle(obj, params, init, [1.0], 4, SeededRng(0), initial=(x, p))
    assert res.flagged == 1


def test_auto_kvn_grids_are_powers_of_two_and_bounded():
    xg, pg = kv.auto_kvn_grids(osc.FrictionParams(1.0), 1.0, (0.2, 0.0), np.diag([0.01, 0.01]), 2.0)
    for g in (xg, pg):
        assert g.points[0] & (g.points[0] - 1) == 0
    with pytest.raises(ValueError):
        kv.auto_kvn_grids(osc.FrictionParams(1.0), 1.0, (0.2, 0.0), np.diag([1e-6, 1e-6]), 20.0)
    with pytest.raises(ValueError):
        kv.auto_kvn_grids(osc.FrictionParams(1.0), 1.0, (0.2, 0.0), np.zeros((2, 2)), 1.0)


def test_classical_driver_small_instance():
    obj = ObjectiveSpec.quadratic([[1.0]], [0.3], x_max=20.0)
    init = osc.GaussianInit.make([0.5], [0.0], 0.1, 0.1)
    run = kv.prepare_local_classical(obj, init, 0.1)
    wins = sum(kv.optimize_local_classical(obj, init, 0.1, 0.1, SeededRng(s), prepared=run)[2].success
               for s in range(50))
    assert wins >= 45
    xs = run.sample(4000, SeededRng(99))
    mom = init.classical_moments()
    params = osc.FrictionParams(1.0)
    t = run.report.t_star
    assert xs.mean() == pytest.approx(osc.classical_mean_position(t, params, 1.0, 0.3, mom), abs=0.01)
