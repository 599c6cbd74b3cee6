"""KvN marginal, quantum and RK4-ensemble position means on one 1D quadratic up to t_star."""

import argparse
import csv

import numpy as np

from dissopt import kvn_sim as kv
from dissopt import oscillator as osc
from dissopt import quantum_sim as qs
from dissopt.numerics import SeededRng
from dissopt.objective import ObjectiveSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--x0", type=float, default=0.2)
    ap.add_argument("--sigma", type=float, default=0.05, help="classical position and momentum std")
    ap.add_argument("--eps", type=float, default=1e-2)
    ap.add_argument("--times", type=int, default=12)
    ap.add_argument("--trajectories", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--out", default="kvn_triangle.csv")
    args = ap.parse_args()

    params = osc.FrictionParams(1.0)
    s = args.sigma
    cmom = osc.MomentSummary.gaussian([args.x0], [0.0], [s * s], [s * s])
    t_star = osc.equilibration_time(args.eps, params, 1.0, cmom, "classical_1d").t_star
    times = np.linspace(0.0, t_star, args.times)

    xg, pg = kv.auto_kvn_grids(params, 1.0, (args.x0, 0.0), np.diag([s * s, s * s]), t_star)
    kspec = kv.LiouvillianSpec(ObjectiveSpec.quadratic([[1.0]], [0.0], lower=xg.lower, upper=xg.upper), params)
    kst = kv.build_kvn_gaussian(xg, pg, args.x0, 0.0, s, s)
    qgrid = qs.auto_grid_1d(params, 1.0, (args.x0, 0.0), np.diag([0.5, 0.5]), t_star)
    qspec = qs.FrictionHamiltonianSpec(
        ObjectiveSpec.quadratic([[1.0]], [0.0], lower=qgrid.lower, upper=qgrid.upper), params)
    qst = qs.build_gaussian_state(qgrid, args.x0, 0.0, 0.5 ** 0.5)
    ens = kv.ensemble_oracle(ObjectiveSpec.quadratic([[1.0]], [0.0], x_max=10.0), params,
                             osc.GaussianInit.make([args.x0], [0.0], s, s), times,
                             args.trajectories, SeededRng(args.seed))
    rows = []
    for t, em in zip(times, ens.moments):
        kst = kv.propagate_kvn(kst, kspec, float(t))
        qst = qs.propagate(qst, qspec, float(t))
        exact = osc.classical_mean_position(float(t), params, 1.0, 0.0, cmom)
        rows.append((t, kv.marginal_position_observables(kst).mean_x[0], qs.observables(qst).mean_x[0],
                     em.mean_x[0], exact))
        print("t=%.3f kvn=%.6f quantum=%.6f ensemble=%.6f exact=%.6f" % rows[-1], flush=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "kvn_mean", "quantum_mean", "ensemble_mean", "closed_form_mean"])
        w.writerows([["%.17g" % v for v in r] for r in rows])
    print(f"KvN grid {xg.points[0]}x{pg.points[0]}, quantum grid {qgrid.points[0]}; wrote {args.out}")


if __name__ == "__main__":
    main()
