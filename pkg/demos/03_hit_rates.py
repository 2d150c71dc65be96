"""Hit-rate campaign for both meter models: base case plus 10x / 0.1x rows per noise source.

Usage: python3 demos/03_hit_rates.py [repetitions]   (default 50000)
"""
import sys
import time

import numpy as np

from gridstate.assessment import CampaignConfig, GridModel, run_campaign
from gridstate.grid import build_ordering
from gridstate.loadflow import empirical_theta_sigma, solve_loadflow
from gridstate.metering import NoiseSpec
from gridstate.synthetic import daily_scenarios, example_grid, reference_scenario

R = int(sys.argv[1]) if len(sys.argv) > 1 else 50_000

grid = example_grid()
ordering = build_ordering(grid)
theta = empirical_theta_sigma([solve_loadflow(grid, ordering, s).state for s in daily_scenarios(grid)])
true = solve_loadflow(grid, ordering, reference_scenario(grid)).state
model = GridModel.build(grid)
base = NoiseSpec(sigma_theta=theta, sigma_u=np.sqrt(2.41), sigma_i=np.sqrt(2.1e-3), sigma_phi=0.01)

rows = [("base", {})]
for q in ("sigma_u", "sigma_i", "sigma_phi"):
    rows += [(f"10x {q}", {q: 10.0}), (f"0.1x {q}", {q: 0.1})]

print(f"R = {R}, alpha = 0.05; hit rates in %, Dev.HR in brackets")
print(f"{'row':<15} {'PMU U':>14} {'PMU I':>14} {'EM U':>14} {'EM I':>14}")
t0 = time.perf_counter()
for label, mult in rows:
    cells = []
    for meter in ("pmu", "em"):
        rep = run_campaign(model, true, CampaignConfig(meter, base, repetitions=R, seed=2023, multipliers=mult))
        cells += [(rep.avg_voltage_hr, rep.avg_voltage_dev), (rep.avg_current_hr, rep.avg_current_dev)]
    print(f"{label:<15} " + " ".join(f"{100 * h:6.2f} ({100 * d:.2f})" for h, d in cells))
print(f"\n{time.perf_counter() - t0:.1f} s")
