"""Sweep the extension parameter theta on the 64x64 Poisson reference case.

Runs both nested solvers for each theta, prints SNR, iterations and the
time to reach a normalized objective of 1e-3, and writes one trace CSV per
run under ``out/theta_sweep`` (the CSVs are what a convergence plot needs).
Takes a few minutes.

    python demos/theta_sweep.py [outdir]
"""

import sys
from pathlib import Path

import numpy as np

from nestedprox import io as nio
from nestedprox.imaging import snr
from nestedprox.pipeline import RunConfig, build_setup, run_solver, simulate, trace_rows

ROOT = Path(__file__).resolve().parents[1]
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("out/theta_sweep")

cfg0 = RunConfig.from_file(ROOT / "configs" / "poisson_reference.conf")
truth, obs = simulate(cfg0)
print(f"degraded SNR {snr(obs.z / cfg0.alpha, truth):.2f} dB")

runs = {}
for theta in (0.001, 0.01, 0.1, 1.0):
    for alg in ("dr-outer", "fb-outer"):
        cfg = cfg0.with_overrides(theta=theta, algorithm=alg)
        setup = build_setup(cfg, obs)
        rep = run_solver(setup.problem, cfg.solver, setup.initial_point(), alg)
        runs[theta, alg] = rep
        nio.write_trace_csv(out / f"trace_{alg}_theta{theta:g}.csv", trace_rows(rep))
        print(f"theta {theta:<6g} {alg}  SNR {snr(setup.image(rep.solution), truth):6.2f} dB  "
              f"outer {len(rep.inner_counts):5d}  inner {sum(rep.inner_counts):6d}  "
              f"F {rep.objective_final:.6f}  {rep.trace.wall_seconds[-1]:.1f}s")

print("\ntime / iterations to normalized objective 1e-3 (common final value per theta)")
for theta in (0.001, 0.01, 0.1, 1.0):
    fstar = min(runs[theta, a].objective_final for a in ("dr-outer", "fb-outer"))
    for alg in ("dr-outer", "fb-outer"):
        rep = runs[theta, alg]
        obj = np.asarray(rep.trace.objective)
        hit = np.flatnonzero((obj - fstar) / (obj[0] - fstar) <= 1e-3)
        if hit.size:
            print(f"theta {theta:<6g} {alg}  iter {hit[0]:5d}  {rep.trace.wall_seconds[hit[0]]:.2f}s")
        else:
            print(f"theta {theta:<6g} {alg}  not reached")
