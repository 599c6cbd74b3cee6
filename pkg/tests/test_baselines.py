import json
import math
import re

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dissopt import baselines as bl
from dissopt.numerics import DomainError, SeededRng
from dissopt.objective import ObjectiveSpec

mpmath.mp.dps = 50


# -- closed-form bounds -----------------------------------------------------------


def dyson_order_mpmath(eps):
    r = mpmath.log(2 / mpmath.mpf(eps))
    return int(mpmath.ceil(-1 + 2 * r / (mpmath.log(r) + 1)))


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-300, max_value=bl.DYSON_EPS_MAX))
def test_dyson_order_matches_50_digit_evaluation(eps):
    assert bl.dyson_truncation_order(eps) == dyson_order_mpmath(eps)


def test_dyson_order_values_and_domain():
    assert bl.dyson_truncation_order(0.01) == 3
    assert bl.DYSON_EPS_MAX == pytest.approx(float(mpmath.power(2, 1 - mpmath.e)))
    for bad in (0.0, -1e-3, 0.5, bl.DYSON_EPS_MAX * (1 + 1e-12)):
        with pytest.raises(DomainError):
            bl.dyson_truncation_order(bad)
    orders = [bl.dyson_truncation_order(e) for e in np.logspace(-12, -1, 30)]
    assert all(a >= b for a, b in zip(orders, orders[1:]))


def test_iteration_bound_values():
    assert bl.iteration_bound(1.0, 10.0, math.exp(4.0), 1.0, 1.0) == 10
    assert bl.iteration_bound(1.0, 10.0, 1.0, 1.0, 2.0) == 0
    with pytest.raises(ValueError):
        bl.iteration_bound(0.0, 10.0, 1.0, 1.0, 1.0)


def test_demmel_tail_and_noise_bound():
    assert bl.demmel_tail(4, 100.0) == pytest.approx(0.006, abs=1e-15)
    assert bl.noise_deviation_bound(0.1, 2, 4.0) == pytest.approx(0.2)
    assert bl.contraction_factor(1.0, 3.0) == pytest.approx(0.25)


# -- query-count envelopes ----------------------------------------------------------


def eval_expression(expr: str, params: dict) -> mpmath.mpf:
    """Evaluate a documented expression string independently with 50-digit arithmetic."""
    py = expr.replace("ln^2(", "LOG2(").replace("^", "**").replace("ln(", "log(")
    py = re.sub(r"\)\s*\(", ")*(", py)
    py = re.sub(r"(\w)\s+(?=[\w(])", r"\1*", py)
    py = re.sub(r"\)\s+(?=[\w(])", ")*", py)
    env = {k: mpmath.mpf(v) for k, v in params.items()}
    env.update(log=mpmath.log, sqrt=mpmath.sqrt, exp=mpmath.exp,
               LOG2=lambda z: mpmath.log(z) ** 2)
    return eval(py, {"__builtins__": {}}, env)


SCENARIO_STRATEGY = st.fixed_dictionaries({
    "N": st.integers(1, 64), "eps": st.floats(1e-4, 0.5), "lam_min": st.floats(0.1, 2.0),
    "kappa": st.floats(1.0, 20.0), "dist": st.floats(0.1, 5.0), "h_x": st.floats(0.01, 1.0),
    "delta": st.floats(0.01, 0.5), "x_max": st.floats(1.0, 20.0), "gamma": st.floats(0.2, 2.0),
})


@settings(max_examples=60, deadline=None)
@given(SCENARIO_STRATEGY, st.sampled_from(sorted(bl.SCENARIO_PARAMS)))
def test_query_estimates_match_documented_expressions(raw, scenario):
    params = dict(raw)
    params["lam_max"] = params["lam_min"] * params.pop("kappa")
    if scenario == "global_hybrid":
        params["N"] = min(params["N"], 16)
        params["gamma"] = max(params["gamma"], 1.0)
        params["delta"] = max(params["delta"], 0.3)
    if scenario == "local_quantum_bit":
        params["x_max"] = max(params["x_max"], params["eps"] / (params["lam_max"] * params["dist"]) * 3)
    q = {k: params[k] for k in bl.SCENARIO_PARAMS[scenario]}
    out = bl.query_estimates(bl.BoundQuery(scenario, q))
    ref = eval_expression(bl.SCENARIO_EXPRESSIONS[scenario], q)
    assert out["label"] == bl.ENVELOPE_LABEL
    assert out["value"] == pytest.approx(float(ref), rel=1e-10)


def test_local_hybrid_lipschitz_form():
    p = {"N": 4, "eps": 0.01, "lam_min": 1.0, "lam_max": 3.0, "dist": 2.0, "L": 6.0}
    out = bl.query_estimates(bl.BoundQuery("local_hybrid", p))
    assert out["value_lipschitz_form"] == pytest.approx(out["value"])  # L = lam_max * dist here
    e = 3.0 * math.log(3.0) / 4.0
    assert out["value"] == pytest.approx(8.0 * (2 * 3.0 * 4.0 / 0.01) ** e)


def test_global_hybrid_overflow_is_infinite():
    out = bl.query_estimates(bl.BoundQuery("global_hybrid", {"N": 1e6, "gamma": 0.01, "delta": 0.01}))
    assert out["value"] == math.inf


def test_bound_query_validation():
    with pytest.raises(ValueError):
        bl.BoundQuery("nope", {})
    with pytest.raises(ValueError):
        bl.BoundQuery("global_quantum", {"N": 2, "gamma": 1.0})
    with pytest.raises(ValueError):
        bl.BoundQuery("global_quantum", {"N": 2, "gamma": -1.0, "delta": 0.1})


# -- gradient descent ----------------------------------------------------------------


def random_quadratic(seed, n):
    g = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(g.standard_normal((n, n)))
    lam = g.uniform(0.2, 5.0, n)
    return ObjectiveSpec.quadratic(Q @ np.diag(lam) @ Q.T, g.standard_normal(n)), lam


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 10 ** 6))
def test_gd_contracts_at_optimal_rate(n, seed):
    obj, lam = random_quadratic(seed, n)
    r = bl.gradient_descent(bl.GdRunConfig(obj, np.full(n, 3.0), iterations=25))
    assert r.eta == pytest.approx(2 / (lam.min() + lam.max()))
    bound = bl.contraction_factor(lam.min(), lam.max())
    gaps = r.f_gap
    ok = gaps[:-1] > 1e-200
    # roundoff floor relative to the starting gap covers the exact one-step case kappa = 1
    assert np.all(gaps[1:][ok] <= bound * gaps[:-1][ok] * (1 + 1e-9) + 1e-14 * gaps[0])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(0, 10 ** 6), st.sampled_from(["random", "adversarial"]),
       st.floats(1e-4, 1.0))
def test_noise_deviation_within_envelope(n, seed, mode, eps0):
    obj, lam = random_quadratic(seed, n)
    r = bl.gradient_descent(bl.GdRunConfig(obj, np.ones(n), None, 15, eps0, mode, SeededRng(seed)))
    env = np.array([bl.noise_deviation_bound(eps0, k, lam.max()) for k in range(r.steps + 1)])
    assert np.all(r.deviation <= env * (1 + 1e-9))


def test_adversarial_noise_dominates_random():
    obj, _ = random_quadratic(1, 3)
    base = dict(objective=obj, x0=[1.0, 1.0, 1.0], iterations=20, eps0=0.1)
    adv = bl.gradient_descent(bl.GdRunConfig(**base, noise_mode="adversarial"))
    rnd = bl.gradient_descent(bl.GdRunConfig(**base, noise_mode="random", rng=SeededRng(0)))
    assert adv.deviation[-1] >= rnd.deviation[-1]


def test_gd_divergence_flag_and_validation():
    obj = ObjectiveSpec.quadratic([[1.0]])
    r = bl.gradient_descent(bl.GdRunConfig(obj, [1.0], eta=3.0, iterations=200))
    assert r.diverged and r.steps < 200
    with pytest.raises(ValueError):
        bl.GdRunConfig(obj, [1.0], eta=-1.0)
    with pytest.raises(ValueError):
        bl.GdRunConfig(ObjectiveSpec.builtin("double_well"), [1.0])
    with pytest.raises(ValueError):
        bl.GdRunConfig(obj, [1.0], noise_mode="loud")


# -- Wishart ---------------------------------------------------------------------------


def test_wishart_reproducible_and_stream_independent():
    a = bl.wishart_kappa(8, 3, 5)
    assert a == bl.wishart_kappa(8, 3, 5)
    assert a != bl.wishart_kappa(8, 3, 6)
    assert bl.wishart_kappa(1, 0, 0) == (1.0, 0)


def test_wishart_threads_do_not_change_results():
    a = bl.wishart_experiment([1, 2, 4, 8], 50, seed=2, threads=1)
    b = bl.wishart_experiment([1, 2, 4, 8], 50, seed=2, threads=3)
    np.testing.assert_array_equal(a.kappas, b.kappas)
    assert a.means[0] == 1.0


def test_wishart_outputs(tmp_path):
    res = bl.wishart_experiment([1, 2, 4], 20, seed=0)
    paths = res.write(tmp_path)
    assert [p.name for p in paths] == ["wishart_trials.csv", "wishart_summary.csv", "wishart_fit.json"]
    rows = paths[0].read_text().splitlines()
    assert rows[0] == "N,trial,kappa" and len(rows) == 61
    fit = json.loads(paths[2].read_text())
    assert fit["trials"] == 20 and set(fit["mean_fit"]) == {"statistic", "slope", "intercept", "r2"}
    with pytest.raises(ValueError):
        bl.wishart_experiment([4, 2], 10)


def test_wishart_kappa_has_inverse_square_root_tail():
    """P(kappa > x) ~ c / sqrt(x): the mean condition number diverges for N >= 2."""
    k = np.array([bl.wishart_kappa(2, 11, t)[0] for t in range(20_000)])
    xs = np.array([1e2, 1e3, 1e4])
    tail = np.array([(k > x).mean() for x in xs])
    slope = np.polyfit(np.log(xs), np.log(tail), 1)[0]
    assert -0.65 < slope < -0.35
