"""Confidence ranges at the seven report locations while one noise std varies.

Prints Delta C_U and Delta C_I per location and value; write the long-format
CSV with ``ConfidenceRangeReport.write_csv`` for plotting elsewhere.
"""
import numpy as np

from gridstate.assessment import CampaignConfig, GridModel, sweep
from gridstate.grid import build_ordering
from gridstate.loadflow import empirical_theta_sigma, solve_loadflow
from gridstate.metering import NoiseSpec
from gridstate.synthetic import REPORT_LOCATIONS, daily_scenarios, example_grid, reference_scenario

grid = example_grid()
ordering = build_ordering(grid)
theta = empirical_theta_sigma([solve_loadflow(grid, ordering, s).state for s in daily_scenarios(grid)])
true = solve_loadflow(grid, ordering, reference_scenario(grid)).state
model = GridModel.build(grid)
config = CampaignConfig("em", NoiseSpec(sigma_theta=theta, sigma_u=np.sqrt(2.41), sigma_i=np.sqrt(2.1e-3)),
                        report_locations=REPORT_LOCATIONS)

sweeps = {
    "sigma_u": np.linspace(1.0, 4.0, 7),
    "sigma_i": np.linspace(0.01, 0.2, 7),
    "sigma_phi": np.linspace(0.0, 0.018, 7),
}
for param, values in sweeps.items():
    rep = sweep(model, true, config, param, values)
    for kind in ("voltage", "current"):
        print(f"\nDelta C_{'U' if kind == 'voltage' else 'I'} vs {param}")
        print(f"{'location':<8} " + " ".join(f"{v:>9.4g}" for v in values))
        for loc in REPORT_LOCATIONS:
            print(f"{loc:<8} " + " ".join(f"{dc:9.5f}" for dc in rep.series(loc, kind)))
