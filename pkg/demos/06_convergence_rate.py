"""Measuring the homogenization convergence rate eps^beta.

For each epsilon: solve the limit system, build the correctors, run the
perforated compressible solver from fully prepared data, and evaluate the
error functional

    max_t ||rho_eps - rho||_L2(Omega_eps)^2 + int ||u_eps - u||_W^-1,2^2 dt.

The fitted slope is compared against the theorem value
beta = min{1, 2 lambda - 2, lambda - 3/gamma} in the upper-bound direction
(the estimate is one-sided; steeper is consistent).  A short horizon and a
two-member sweep keep this demo fast; the acceptance suite runs the full
three-member sweep.
"""

import time

import numpy as np

from poroscale.harness import ExperimentConfig, run_rate_case
from poroscale import (build_reference_cell, fit_rate, make_obstacle,
                       solve_cell, theoretical_rate)

cfg = ExperimentConfig(
    kind="rate", domain_kind="torus", dim=2, obstacle="ball", radius=0.5,
    epsilons=(1 / 4, 1 / 8), n_per_cell=32, gamma=2.0, a=1.0, lam=2.5,
    rho0="1 + 0.2*sin(2*pi*x1)*sin(2*pi*x2)", T=0.02, n_outputs=5)

sol = solve_cell(build_reference_cell(make_obstacle("ball", 0.5), 2, 32))
rows = []
for eps in cfg.epsilons:
    t0 = time.time()
    row = run_rate_case(cfg, eps, sol)
    rows.append(row)
    print(f"eps = {eps}: total error {row['total_error']:.4e} "
          f"(density {row['density_error']:.3e}, velocity "
          f"{row['velocity_error']:.3e})  [{time.time() - t0:.0f}s]")

slope = np.log(rows[0]["total_error"] / rows[1]["total_error"]) / np.log(2)
lam0, beta, _ = theoretical_rate(cfg.gamma, cfg.lam, cfg.domain_kind)
print(f"\ntwo-point slope: {slope:.3f}")
print(f"theorem: lambda0 = {lam0:.4f}, beta = {beta} (upper bound direction:")
print("measured slopes at or above beta are consistent; the observed ~2 echoes")
print("the conjectured optimal torus rate).")
