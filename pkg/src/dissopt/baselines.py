"""Gradient-descent baselines, closed-form cost bounds, query-count envelopes
and the Wishart condition-number experiment."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Mapping, Sequence

import numpy as np

from .numerics import DomainError, SeededRng, as_generator, wishart_sample
from .objective import ObjectiveSpec, hessian_spectrum

logger = logging.getLogger(__name__)

ENVELOPE_LABEL = "order-of-magnitude envelope, constants suppressed"


# ---------------------------------------------------------------------------
# Gradient descent


@dataclass
class GdRunConfig:
    objective: ObjectiveSpec
    x0: Sequence[float]
    eta: float | None = None            # None: 2 / (lambda_min + lambda_max)
    iterations: int = 100
    eps0: float = 0.0                   # norm of the per-step gradient error
    noise_mode: Literal["random", "adversarial"] = "random"
    rng: object = None
    divergence_factor: float = 1e6

    def __post_init__(self):
        if not self.objective.is_quadratic:
            raise ValueError("gradient_descent baselines need a quadratic objective")
        if self.eta is not None and not self.eta > 0:
            raise ValueError("learning rate must be positive")
        if self.eps0 < 0:
            raise ValueError("gradient noise magnitude must be nonnegative")
        if self.iterations < 0:
            raise ValueError("iteration cap must be nonnegative")
        if self.noise_mode not in ("random", "adversarial"):
            raise ValueError(f"unknown noise mode {self.noise_mode!r}")


@dataclass
class GdResult:
    iterates: np.ndarray        # (K+1, N)
    f_gap: np.ndarray           # (K+1,)
    distance: np.ndarray        # (K+1,) distance to x*
    deviation: np.ndarray       # (K+1,) distance from the noiseless twin
    eta: float
    diverged: bool = False

    @property
    def final_error(self) -> float:
        return float(self.f_gap[-1])

    @property
    def steps(self) -> int:
        return len(self.f_gap) - 1


def optimal_learning_rate(obj: ObjectiveSpec) -> float:
    lo, hi, _ = hessian_spectrum(obj)
    return 2.0 / (lo + hi)


def gradient_descent(cfg: GdRunConfig) -> GdResult:
    """x <- x - eta (grad f(x) + gamma_k) with ||gamma_k|| = eps0.

    A noiseless twin runs alongside so every step records the deviation the
    noise has caused. Adversarial noise points along the twin deviation
    propagated one step, which maximizes the next deviation.
    """
    obj = cfg.objective
    A, xs = obj.A, obj.x_star
    eta = optimal_learning_rate(obj) if cfg.eta is None else float(cfg.eta)
    gen = as_generator(cfg.rng) if cfg.eps0 > 0 and cfg.noise_mode == "random" else None
    n = obj.dim
    x = np.array(cfg.x0, dtype=float).reshape(n)
    clean = x.copy()
    _, vecs = np.linalg.eigh(A)

    def gap(y):
        d = y - xs
        return 0.5 * float(d @ A @ d)

    gap0 = gap(x)
    iters, gaps, dists, devs = [x.copy()], [gap0], [float(np.linalg.norm(x - xs))], [0.0]
    diverged = False
    M = np.eye(n) - eta * A
    for _ in range(cfg.iterations):
        g = A @ (x - xs)
        if cfg.eps0 > 0:
            if cfg.noise_mode == "random":
                u = gen.standard_normal(n)
            else:
                u = -(M @ (x - clean))
                if not np.linalg.norm(u) > 0:
                    u = vecs[:, 0].copy()
            g = g + cfg.eps0 * u / np.linalg.norm(u)
        x = x - eta * g
        clean = clean - eta * (A @ (clean - xs))
        iters.append(x.copy())
        gaps.append(gap(x))
        dists.append(float(np.linalg.norm(x - xs)))
        devs.append(float(np.linalg.norm(x - clean)))
        if not np.isfinite(gaps[-1]) or gaps[-1] > cfg.divergence_factor * max(gap0, 1e-300):
            diverged = True
            logger.warning("gradient descent diverged: f-gap %.3e after %d steps", gaps[-1], len(gaps) - 1)
            break
    return GdResult(np.array(iters), np.array(gaps), np.array(dists), np.array(devs), eta, diverged)


def noise_deviation_bound(eps0: float, K: int, lam_max: float) -> float:
    """Worst-case accumulated deviation eps0 (3^K - 1) / lambda_max."""
    return eps0 * (3.0 ** K - 1.0) / lam_max


def contraction_factor(lam_min: float, lam_max: float) -> float:
    """Per-step f-gap contraction ((l_max - l_min) / (l_max + l_min))^2 at the optimal rate."""
    return ((lam_max - lam_min) / (lam_max + lam_min)) ** 2


def iteration_bound(lam_min: float, lam_max: float, L: float, dist: float, eps_x: float) -> int:
    """ceil((1/4)(lambda_max/lambda_min) ln(L dist / eps_x)); 0 once eps_x >= L dist."""
    for name, v in (("lam_min", lam_min), ("lam_max", lam_max), ("L", L), ("dist", dist),
                    ("eps_x", eps_x)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    if eps_x >= L * dist:
        return 0
    return math.ceil(0.25 * (lam_max / lam_min) * math.log(L * dist / eps_x))


# ---------------------------------------------------------------------------
# Dyson series truncation

DYSON_EPS_MAX = 2.0 ** (1.0 - math.e)


def dyson_truncation_order(eps: float) -> int:
    """K = ceil(-1 + 2 ln(2/eps) / (ln ln(2/eps) + 1)) for 0 < eps <= 2^(1-e)."""
    if not (0 < eps <= DYSON_EPS_MAX):
        raise DomainError(f"dyson_truncation_order needs 0 < eps <= 2^(1-e) = {DYSON_EPS_MAX:.6g}; "
                          f"got {eps!r}")
    r = math.log(2.0 / eps)
    return math.ceil(-1.0 + 2.0 * r / (math.log(r) + 1.0))


# ---------------------------------------------------------------------------
# Query-count envelopes

SCENARIO_PARAMS = {
    "local_hybrid": ("N", "eps", "lam_min", "lam_max", "dist"),
    "local_quantum_phase": ("N", "eps", "lam_min", "lam_max", "h_x"),
    "local_quantum_bit": ("N", "eps", "delta", "lam_min", "lam_max", "h_x", "dist", "x_max"),
    "global_quantum": ("N", "gamma", "delta"),
    "global_hybrid": ("N", "gamma", "delta"),
}

SCENARIO_EXPRESSIONS = {
    "local_hybrid": "N^(3/2) (2 lam_max dist^2 / eps)^((lam_max/lam_min) ln(3)/4)",
    "local_quantum_phase": "N^2 lam_max^2 / (eps lam_min^2 h_x^2)",
    "local_quantum_bit": "(N / (h_x^2 sqrt(lam_min))) ln^2(lam_max dist x_max / eps) ln(1/delta)",
    "global_quantum": "N^3 / (gamma delta^2)",
    "global_hybrid": "N^(3/2) exp(2 sqrt(N) / (gamma delta^2)) / (gamma^3 delta^6)",
}


@dataclass(frozen=True)
class BoundQuery:
    scenario: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIO_PARAMS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {sorted(SCENARIO_PARAMS)}")
        for name in SCENARIO_PARAMS[self.scenario]:
            if name not in self.params:
                raise ValueError(f"scenario {self.scenario} needs parameter {name!r}")
            if not float(self.params[name]) > 0:
                raise ValueError(f"parameter {name!r} must be positive")


def hybrid_exponent(lam_min: float, lam_max: float) -> float:
    return (lam_max / lam_min) * math.log(3.0) / 4.0


def query_estimates(q: BoundQuery) -> dict:
    """Evaluate one scenario's query-count expression with unit constants.

    local_hybrid also reports the variant with the gradient bound L in place
    of lambda_max * dist when L is supplied.
    """
    p = {k: float(v) for k, v in q.params.items()}
    N = p["N"]
    out = {"scenario": q.scenario, "expression": SCENARIO_EXPRESSIONS[q.scenario],
           "label": ENVELOPE_LABEL}
    if q.scenario == "local_hybrid":
        e = hybrid_exponent(p["lam_min"], p["lam_max"])
        out["value"] = N ** 1.5 * (2 * p["lam_max"] * p["dist"] ** 2 / p["eps"]) ** e
        if p.get("L", 0) > 0:
            out["value_lipschitz_form"] = N ** 1.5 * (2 * p["L"] * p["dist"] / p["eps"]) ** e
            out["expression_lipschitz_form"] = "N^(3/2) (2 L dist / eps)^((lam_max/lam_min) ln(3)/4)"
    elif q.scenario == "local_quantum_phase":
        out["value"] = N ** 2 * p["lam_max"] ** 2 / (p["eps"] * p["lam_min"] ** 2 * p["h_x"] ** 2)
    elif q.scenario == "local_quantum_bit":
        lg = math.log(p["lam_max"] * p["dist"] * p["x_max"] / p["eps"])
        out["value"] = N / (p["h_x"] ** 2 * math.sqrt(p["lam_min"])) * lg ** 2 * math.log(1 / p["delta"])
    elif q.scenario == "global_quantum":
        out["value"] = N ** 3 / (p["gamma"] * p["delta"] ** 2)
    else:
        g, d = p["gamma"], p["delta"]
        arg = 2 * math.sqrt(N) / (g * d * d)
        out["value"] = (N ** 1.5 * math.exp(arg) / (g ** 3 * d ** 6) if arg < 700
                        else math.inf)
    return out


# ---------------------------------------------------------------------------
# Wishart condition numbers


def demmel_tail(N: int, x: float) -> float:
    """Leading tail term N (N^2 - 1) / x^2 for P(kappa > x)."""
    if not x > 0:
        raise ValueError("x must be positive")
    return N * (N * N - 1) / (x * x)


@dataclass
class WishartResult:
    Ns: list[int]
    kappas: np.ndarray          # (len(Ns), trials)
    resampled: int
    seed: int

    @property
    def means(self) -> np.ndarray:
        return self.kappas.mean(axis=1)

    @property
    def stderrs(self) -> np.ndarray:
        t = self.kappas.shape[1]
        return self.kappas.std(axis=1, ddof=1) / math.sqrt(t)

    @property
    def medians(self) -> np.ndarray:
        return np.median(self.kappas, axis=1)

    def fit(self, statistic: str = "mean") -> dict:
        """Least-squares line through log(statistic) vs log N, N = 1 excluded."""
        vals = self.means if statistic == "mean" else self.medians
        Ns = np.array(self.Ns, dtype=float)
        keep = Ns > 1
        if keep.sum() < 2:
            raise ValueError("power-law fit needs at least two N > 1")
        lx, ly = np.log(Ns[keep]), np.log(vals[keep])
        slope, intercept = np.polyfit(lx, ly, 1)
        resid = ly - (slope * lx + intercept)
        ss_tot = float(np.sum((ly - ly.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
        return {"statistic": statistic, "slope": float(slope), "intercept": float(intercept),
                "r2": r2}

    def write(self, out_dir: str | Path, prefix: str = "wishart") -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        raw, summ, fitp = (out / f"{prefix}_trials.csv", out / f"{prefix}_summary.csv",
                           out / f"{prefix}_fit.json")
        with raw.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "trial", "kappa"])
            for i, N in enumerate(self.Ns):
                for t, k in enumerate(self.kappas[i]):
                    w.writerow([N, t, "%.17g" % k])
        with summ.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "mean", "stderr", "median"])
            for N, m, s, md in zip(self.Ns, self.means, self.stderrs, self.medians):
                w.writerow([N, "%.17g" % m, "%.17g" % s, "%.17g" % md])
        report = {"mean_fit": self.fit("mean"), "median_fit": self.fit("median"),
                  "resampled": self.resampled, "seed": self.seed, "trials": self.kappas.shape[1]}
        fitp.write_text(json.dumps(report, indent=2))
        return [raw, summ, fitp]


def wishart_kappa(N: int, seed: int, trial: int) -> tuple[float, int]:
    """Condition number of one Wishart sample on its own Philox stream.

    The stream index packs (N, trial) so every (N, trial) pair is independent
    and reproducible. Returns (kappa, number of resamples).
    """
    gen = SeededRng(seed, (int(N) << 32) | int(trial)).generator()
    redo = 0
    while True:
        w = np.linalg.eigvalsh(wishart_sample(N, gen))
        if w[0] >= 1e-300:
            return (1.0 if N == 1 else float(w[-1] / w[0])), redo
        redo += 1


def wishart_experiment(Ns: Sequence[int], trials: int, seed: int = 0, threads: int = 1) -> WishartResult:
    """Mean condition numbers of B B^T for B N x N standard normal."""
    Ns = [int(n) for n in Ns]
    if trials < 2:
        raise ValueError("trials must be >= 2")
    if any(n < 1 for n in Ns) or Ns != sorted(Ns):
        raise ValueError("Ns must be positive and ascending")
    kappas = np.empty((len(Ns), trials))
    redo = 0

    def row(i):
        vals = [wishart_kappa(Ns[i], seed, t) for t in range(trials)]
        return i, vals

    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        for i, vals in pool.map(row, range(len(Ns))):
            kappas[i] = [v for v, _ in vals]
            redo += sum(r for _, r in vals)
    if redo:
        logger.info("wishart_experiment resampled %d singular draws", redo)
    return WishartResult(Ns, kappas, redo, seed)
