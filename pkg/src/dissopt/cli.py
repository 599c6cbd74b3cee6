"""Command-line front end.

Every subcommand declares typed defaults. Values are resolved in the order
defaults < config file ([common] then the subcommand's own section) <
``--set key=value`` < dedicated ``--key`` flags. Outputs go to ``--out``
together with a JSON run manifest.

Exit codes: 0 success, 1 usage error, 2 numerical precondition failure or a
failed validation.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from . import baselines as bl
from . import kvn_sim as kv
from . import nose
from . import oscillator as osc
from . import quantum_sim as qs
from .numerics import DomainError, SeededRng
from .objective import ObjectiveSpec, hessian_spectrum

logger = logging.getLogger("dissopt")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


def fmt(v) -> str:
    """17 significant digits for floats, plain str otherwise."""
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def parse_vec(text: str) -> list[float]:
    text = str(text).strip()
    return [float(t) for t in text.split(",")] if text else []


def parse_matrix(text: str) -> np.ndarray:
    rows = [parse_vec(r) for r in str(text).split(";") if r.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise UsageError(f"matrix {text!r} must be rows of equal length separated by ';'")
    return np.array(rows)


# ---------------------------------------------------------------------------
# Manifest and output helpers


@dataclass
class RunManifest:
    subcommand: str
    parameters: dict
    seed: int
    version: str = __version__
    started: str = ""
    finished: str = ""
    outputs: list[str] = field(default_factory=list)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True))


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def write_csv(path: Path, header: list[str], rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def write_json(path: Path, payload: dict) -> Path:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True))
    return path


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


# ---------------------------------------------------------------------------
# Objectives from parameters

OBJECTIVE_DEFAULTS = {
    "objective": "quadratic1d", "A": "", "x_star": "", "a": 1.0, "kappa": 10.0, "angle": 0.0,
    "tilt": 0.3, "c": 0.0, "x_max": 10.0, "lower": "", "upper": "",
}


def build_objective(p: dict) -> ObjectiveSpec:
    name = p["objective"]
    lower = parse_vec(p["lower"]) or None
    upper = parse_vec(p["upper"]) or None
    if name == "quadratic" or p["A"]:
        A = parse_matrix(p["A"] or "1")
        xs = parse_vec(p["x_star"]) or [0.0] * A.shape[0]
        return ObjectiveSpec.quadratic(A, xs, p["c"], p["x_max"], lower, upper)
    kw: dict = {}
    if name == "quadratic1d":
        kw = {"a": p["a"], "x_star": (parse_vec(p["x_star"]) or [0.0])[0], "c": p["c"]}
    elif name == "quadratic2d":
        xs = parse_vec(p["x_star"]) or [0.0, 0.0]
        kw = {"a1": 1.0, "a2": p["a"], "x1": xs[0], "x2": xs[1], "c": p["c"]}
    elif name == "anisotropic2d":
        kw = {"kappa": p["kappa"], "angle": p["angle"]}
    elif name == "asym_double_well":
        kw = {"tilt": p["tilt"]}
    return ObjectiveSpec.builtin(name, p["x_max"], lower, upper, **kw)


# ---------------------------------------------------------------------------
# Subcommands


@dataclass
class Subcommand:
    name: str
    help: str
    defaults: dict
    handler: Callable[[dict, int, Path, int], tuple[dict, list[Path]]]


def _init_from(p: dict, n: int, classical: bool) -> osc.GaussianInit:
    x0 = parse_vec(p["x0"])
    if len(x0) != n:
        raise UsageError(f"x0 has {len(x0)} entries for a {n}-dimensional objective")
    p0 = parse_vec(p["p0"]) or [0.0] * n
    if classical:
        return osc.GaussianInit.make(x0, p0, parse_vec(p["sigma_x"]), parse_vec(p["sigma_p"]))
    return osc.GaussianInit.make(x0, p0, parse_vec(p["sigma"]))


def _local_outputs(kind: str, p: dict, seed: int, out: Path, run, x_best, f_best, rep,
                   moments) -> tuple[dict, list[Path]]:
    xs = run.sample(int(p["draws"]), SeededRng(seed, 1))
    paths = [write_csv(out / f"{kind}_moments.csv",
                       ["mode", "curvature", "mean_x", "var_x", "mean_p", "var_p"], moments),
             write_csv(out / f"{kind}_samples.csv", [f"x{i}" for i in range(xs.shape[1])] + ["f"],
                       [list(x) + [float(run.objective.value_unchecked(x))] for x in xs])]
    report = {"x_best": list(x_best), "f_best": f_best, "report": rep.to_dict()}
    paths.append(write_json(out / f"{kind}_report.json", report))
    return report, paths


def cmd_local_quantum(p, seed, out, threads):
    obj = build_objective(p)
    init = _init_from(p, obj.dim, classical=False)
    run = qs.prepare_local_quantum(obj, init, p["eps"], m=p["m"], dt_cap=p["dt_cap"])
    x, f, rep = qs.optimize_local(obj, init, p["eps"], p["delta"], SeededRng(seed), prepared=run)
    moments = []
    for j, st in enumerate(run.modes):
        mo = qs.observables(st)
        moments.append([j, run.frame.lam[j], mo.mean_x[0], mo.var_x[0], mo.mean_p[0], mo.var_p[0]])
    return _local_outputs("local_quantum", p, seed, out, run, x, f, rep, moments)


def cmd_local_classical(p, seed, out, threads):
    obj = build_objective(p)
    init = _init_from(p, obj.dim, classical=True)
    run = kv.prepare_local_classical(obj, init, p["eps"], m=p["m"], dt_cap=p["dt_cap"])
    x, f, rep = kv.optimize_local_classical(obj, init, p["eps"], p["delta"], SeededRng(seed),
                                            prepared=run)
    moments = []
    for j, st in enumerate(run.modes):
        mo = kv.marginal_position_observables(st)
        moments.append([j, run.frame.lam[j], mo.mean_x[0], mo.var_x[0], mo.mean_p[0], mo.var_p[0]])
    return _local_outputs("local_classical", p, seed, out, run, x, f, rep, moments)


def cmd_equilibration_table(p, seed, out, threads):
    x0 = parse_vec(p["x0"])
    n = len(x0)
    init = osc.MomentSummary.gaussian(x0, parse_vec(p["p0"]) or [0.0] * n,
                                      parse_vec(p["var_x"]), parse_vec(p["var_p"]))
    beta = p["beta"] if p["beta"] > 0 else math.sqrt(p["lam_min"])
    params = osc.FrictionParams(beta, p["m"])
    spectrum = p["lam_min"] if p["setting"].endswith("1d") else (p["lam_min"], p["lam_max"])
    xs = parse_vec(p["x_star"]) or [0.0] * n
    rows = []
    for eps in parse_vec(p["eps_list"]):
        r = osc.equilibration_time(eps, params, spectrum, init, p["setting"], xs)
        rows.append([eps, r.t_x1, r.t_x2, r.t_s1, r.t_s2, r.t_s3, r.t_star])
    path = write_csv(out / "equilibration_table.csv",
                     ["eps", "t_x1", "t_x2", "t_s1", "t_s2", "t_s3", "t_star"], rows)
    return {"beta": beta, "rows": len(rows), "t_star": [r[-1] for r in rows]}, [path]


def cmd_nose_average(p, seed, out, threads):
    obj = build_objective(p)
    if obj.dim != 1:
        raise UsageError("nose-average works on one-dimensional objectives")
    ref = float(nose.boltzmann_average_oracle(obj, p["beta"])[0])
    x_max = max(abs(obj.lower[0]), abs(obj.upper[0]))
    f_min = float(np.min(obj.value_unchecked(np.linspace(obj.lower[0], obj.upper[0], 4001)[:, None])))
    rows, formulas = [], {}
    for sc in parse_vec(p["scales"]):
        prm = nose.select_discretization(p["eps"], p["beta"], 1, x_max, p["m"], p["Q"],
                                         obj.fprime_max, g=p["g"], f_min=f_min, scale=sc)
        formulas = prm.formulas
        v, d = nose.discrete_microcanonical_average(obj, prm)
        rows.append([sc, v, ref, abs(v - ref), d.occupancy, d.sinhc_factor])
    path = write_csv(out / "nose_average.csv",
                     ["scale", "average", "boltzmann", "abs_error", "occupancy", "sinhc_factor"], rows)
    report = {"boltzmann_average": ref, "errors": [r[3] for r in rows], "formulas": formulas}
    return report, [path, write_json(out / "nose_average.json", report)]


def cmd_nose_trajectory(p, seed, out, threads):
    obj = build_objective(p)
    prm = nose.NoseParams(m=p["m"], Q=p["Q"], beta=p["beta"], g=p["g"], s_min=p["s_min"])
    rng_range = parse_vec(p["x_init"]) or None
    tr = nose.nose_euler_trajectory(obj, prm, p["h"], int(p["steps"]), rng=SeededRng(seed),
                                    x_init_range=rng_range, bins=int(p["bins"]))
    centers = 0.5 * (tr.hist_edges[1:] + tr.hist_edges[:-1])
    path = write_csv(out / "nose_histogram.csv", ["x", "count"], zip(centers, tr.hist_counts))
    report = {"mode": tr.mode, "energy_drift": tr.energy_drift, "steps": tr.steps, "h": tr.h,
              "terminated": tr.terminated}
    return report, [path, write_json(out / "nose_trajectory.json", report)]


def cmd_microcanonical(p, seed, out, threads):
    rows = []
    for inst in range(int(p["instances"])):
        gen = SeededRng(seed, inst).generator()
        L = nose.random_gapped_hermitian(int(p["dim"]), gen, p["min_gap"])
        rho = nose.random_density(int(p["dim"]), gen)
        inf = nose.dephase(rho, L)
        C = nose.dephasing_envelope(L, rho)
        for t in parse_vec(p["times"]):
            d = float(np.linalg.norm(nose.time_averaged_density(L, rho, t).matrix - inf.matrix))
            rows.append([inst, t, d, C / t])
    path = write_csv(out / "microcanonical.csv", ["instance", "t", "distance", "envelope"], rows)
    ok = all(r[2] <= r[3] * (1 + 1e-9) for r in rows)
    return {"within_envelope": ok, "rows": len(rows)}, [path]


def cmd_gd_baseline(p, seed, out, threads):
    obj = build_objective(p)
    x0 = parse_vec(p["x0"])
    cfg = bl.GdRunConfig(obj, x0, None if p["eta"] <= 0 else p["eta"], int(p["iterations"]),
                         p["eps0"], p["noise_mode"], SeededRng(seed))
    r = bl.gradient_descent(cfg)
    lmin, lmax, _ = hessian_spectrum(obj)
    env = [bl.noise_deviation_bound(p["eps0"], k, lmax) for k in range(r.steps + 1)]
    path = write_csv(out / "gd_trajectory.csv", ["k", "f_gap", "distance", "deviation", "envelope"],
                     zip(range(r.steps + 1), r.f_gap, r.distance, r.deviation, env))
    report = {"eta": r.eta, "final_f_gap": r.final_error, "diverged": r.diverged,
              "contraction_bound": bl.contraction_factor(lmin, lmax)}
    return report, [path, write_json(out / "gd_report.json", report)]


def cmd_wishart(p, seed, out, threads):
    n_max = int(p["n_max"])
    if n_max < 2:
        raise UsageError("n_max must be at least 2")
    Ns = [2 ** k for k in range(int(math.log2(n_max)) + 1)]
    res = bl.wishart_experiment(Ns, int(p["trials"]), seed, threads=threads)
    paths = res.write(out)
    report = {"mean_fit": res.fit("mean"), "median_fit": res.fit("median"),
              "means": dict(zip(Ns, res.means.tolist())), "resampled": res.resampled}
    return report, paths


def cmd_bounds(p, seed, out, threads):
    report: dict = {}
    params = {k: float(v) for k, v in p["param"].items()}
    if p["scenario"]:
        report["query_estimate"] = bl.query_estimates(bl.BoundQuery(p["scenario"], params))
    if p["dyson_eps"] > 0:
        report["dyson_truncation_order"] = bl.dyson_truncation_order(p["dyson_eps"])
    need = ("lam_min", "lam_max", "L", "dist", "eps_x")
    if all(k in params for k in need):
        report["iteration_bound"] = bl.iteration_bound(*(params[k] for k in need))
    if "N" in params and "x" in params:
        report["demmel_tail"] = bl.demmel_tail(int(params["N"]), params["x"])
    if not report:
        raise UsageError("bounds needs --scenario, --dyson-eps or matching --param values")
    return report, [write_json(out / "bounds.json", report)]


def cmd_validate(p, seed, out, threads):
    from .invariants import run_all

    names = [n for n in p["names"].split(",") if n] or None
    try:
        results = run_all(names)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<38s} {r.seconds:7.2f}s  {r.detail}")
    rows = [[r.name, r.passed, r.seconds, r.detail] for r in results]
    path = write_csv(out / "validate.csv", ["invariant", "passed", "seconds", "detail"], rows)
    failed = [r.name for r in results if not r.passed]
    return {"checks": len(results), "failed": failed}, [path]


LOCAL_COMMON = {"eps": 0.01, "delta": 0.1, "m": 1.0, "p0": "", "draws": 100}

SUBCOMMANDS = {s.name: s for s in [
    Subcommand("local-quantum", "quantum friction dynamics on a quadratic, sampled at t_star",
               {**OBJECTIVE_DEFAULTS, **LOCAL_COMMON, "x0": "1.0", "sigma": "0.7071067811865476",
                "dt_cap": 0.01}, cmd_local_quantum),
    Subcommand("local-classical", "KvN phase-space dynamics on a quadratic, sampled at t_star",
               {**OBJECTIVE_DEFAULTS, **LOCAL_COMMON, "x0": "0.2", "sigma_x": "0.05",
                "sigma_p": "0.05", "dt_cap": 0.05}, cmd_local_classical),
    Subcommand("equilibration-table", "equilibration-time components over a list of tolerances",
               {"setting": "quantum_1d", "eps_list": "0.1,0.01,0.001", "lam_min": 1.0,
                "lam_max": 1.0, "beta": 0.0, "m": 1.0, "x0": "1.0", "p0": "", "var_x": "0.5",
                "var_p": "0.5", "x_star": ""}, cmd_equilibration_table),
    Subcommand("nose-average", "discrete microcanonical <x> against the Boltzmann average",
               {**OBJECTIVE_DEFAULTS, "x_star": "0.6", "lower": "0", "upper": "1", "eps": 0.05,
                "beta": 20.0, "g": 2.0, "m": 1.0, "Q": 1.0, "scales": "1,0.5,0.25"}, cmd_nose_average),
    Subcommand("nose-trajectory", "forward-Euler Nose run with a position histogram",
               {**OBJECTIVE_DEFAULTS, "objective": "asym_double_well", "lower": "-2", "upper": "2",
                "beta": 3.0, "g": 2.0, "m": 1.0, "Q": 1.0, "h": 1e-3, "steps": 400000,
                "s_min": 0.05, "x_init": "-1.5,1.5", "bins": 80}, cmd_nose_trajectory),
    Subcommand("microcanonical-avg", "time-averaged density matrices of random gapped generators",
               {"dim": 64, "instances": 1, "min_gap": 0.01, "times": "1,10,100,1000"},
               cmd_microcanonical),
    Subcommand("gd-baseline", "gradient descent with optional fixed-norm gradient noise",
               {**OBJECTIVE_DEFAULTS, "x0": "3.0", "iterations": 50, "eps0": 0.0,
                "noise_mode": "random", "eta": 0.0}, cmd_gd_baseline),
    Subcommand("wishart", "Wishart condition-number scaling experiment",
               {"n_max": 256, "trials": 1000}, cmd_wishart),
    Subcommand("bounds", "closed-form bounds and query-count envelopes",
               {"scenario": "", "dyson_eps": 0.0}, cmd_bounds),
    Subcommand("validate", "run the named invariant suite", {"names": ""}, cmd_validate),
]}


# ---------------------------------------------------------------------------
# Argument handling


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _coerce(key: str, raw, default):
    try:
        if isinstance(default, bool):
            return str(raw).lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(float(raw)) if float(raw) == int(float(raw)) else int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise UsageError(f"parameter {key} expects {type(default).__name__}, got {raw!r}") from None
    return str(raw)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dissopt", description="Friction-dynamics optimization experiments.")
    ap.add_argument("--version", action="version", version=f"dissopt {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="SUBCOMMAND")
    for sc in SUBCOMMANDS.values():
        sp = sub.add_parser(sc.name, help=sc.help, description=sc.help)
        sp.add_argument("--config", help="key = value file with [common] and [%s] sections" % sc.name)
        sp.add_argument("--seed", type=int, help="default: $DISSOPT_SEED or 0")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--out", default="dissopt-out", help="output directory")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        sp.add_argument("-v", "--verbose", action="store_true")
        if sc.name == "bounds":
            sp.add_argument("--param", action="append", default=[], metavar="NAME=VALUE")
        for key, val in sc.defaults.items():
            sp.add_argument("--" + key.replace("_", "-"), dest="opt_" + key, default=None,
                            help=f"default {val!r}")
    return ap


def _split_kv(items: list[str], what: str) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"{what} expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve_parameters(sc: Subcommand, ns: argparse.Namespace) -> dict:
    p = dict(sc.defaults)
    layers: list[dict] = []
    if ns.config:
        cfg = configparser.ConfigParser(interpolation=None)
        cfg.optionxform = str
        if not cfg.read(ns.config):
            raise UsageError(f"cannot read config file {ns.config}")
        for section in ("common", sc.name):
            if cfg.has_section(section):
                layers.append(dict(cfg.items(section)))
    layers.append(_split_kv(ns.set, "--set"))
    layers.append({k: getattr(ns, "opt_" + k) for k in sc.defaults
                   if getattr(ns, "opt_" + k) is not None})
    for layer in layers:
        for k, v in layer.items():
            key = k.replace("-", "_")
            if key not in sc.defaults:
                raise UsageError(f"unknown parameter {k!r} for {sc.name}")
            p[key] = _coerce(key, v, sc.defaults[key])
    if sc.name == "bounds":
        p["param"] = {k: _coerce(k, v, 0.0) for k, v in _split_kv(ns.param, "--param").items()}
    return p


def resolve_seed(ns: argparse.Namespace) -> int:
    if ns.seed is not None:
        return ns.seed
    env = os.environ.get("DISSOPT_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"DISSOPT_SEED must be an integer, got {env!r}") from None


NUMERIC_ERRORS = (ValueError, ArithmeticError, DomainError, RuntimeError, np.linalg.LinAlgError)


def run(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
        if not ns.command:
            ap.print_help(sys.stderr)
            return EXIT_USAGE
        sc = SUBCOMMANDS[ns.command]
        params = resolve_parameters(sc, ns)
        seed = resolve_seed(ns)
        if ns.threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"dissopt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(sc.name, _jsonable(params), seed, started=_now())
    try:
        report, paths = sc.handler(params, seed, out, ns.threads)
    except UsageError as exc:
        print(f"dissopt {sc.name}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"dissopt {sc.name}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    manifest.finished = _now()
    manifest.outputs = [str(p) for p in paths]
    manifest.write(out / f"{sc.name}_manifest.json")
    _print_report(report)
    if sc.name == "validate" and report["failed"]:
        return EXIT_NUMERIC
    return EXIT_OK


def _print_report(report: dict, prefix: str = "") -> None:
    for k, v in report.items():
        if isinstance(v, dict):
            _print_report(v, prefix + k + ".")
        elif isinstance(v, (list, tuple)):
            print(f"{prefix}{k} = " + ", ".join(fmt(x) for x in v))
        else:
            print(f"{prefix}{k} = {fmt(v)}")


def main() -> int:
    return run(sys.argv[1:])
