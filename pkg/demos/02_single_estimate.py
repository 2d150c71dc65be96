"""One EM snapshot: simulate meter readings, estimate every phasor, show ellipses.

Junction boxes carry no meter; their estimates come entirely from the
Kirchhoff and voltage-drop equations.
"""
import numpy as np

from gridstate.assessment import GridModel, estimate_state, measurement_covariances, simulate_measurements
from gridstate.estimator import confidence_ellipse, ellipse_contains
from gridstate.grid import build_ordering
from gridstate.loadflow import empirical_theta_sigma, solve_loadflow
from gridstate.metering import NoiseSpec
from gridstate.synthetic import REPORT_LOCATIONS, daily_scenarios, example_grid, reference_scenario

grid = example_grid()
ordering = build_ordering(grid)
theta = empirical_theta_sigma([solve_loadflow(grid, ordering, s).state for s in daily_scenarios(grid)])
true = solve_loadflow(grid, ordering, reference_scenario(grid)).state

noise = NoiseSpec(sigma_theta=theta, sigma_i=np.sqrt(2.1e-3))
model = GridModel.build(grid)
z, raw = simulate_measurements(model, true, "em", noise, np.random.default_rng(7))
s1, s2 = measurement_covariances(model, true, "em", noise)
result = estimate_state(model, z, s1, s2)
print(f"stationarity residual {result.stationarity_residual():.1e}, C x residual {result.constraint_residual():.1e}")

print(f"\n{'entry':<18} {'true':>18} {'estimate':>18} {'a':>7} {'b':>7} {'angle':>7}  hit")
for loc, kind, pos in model.location_positions(REPORT_LOCATIONS):
    ell = confidence_ellipse(result, pos, 0.05)
    x, xh = true.x[pos], result.x_hat[pos]
    hit = "yes" if ellipse_contains(ell, x) else "no"
    print(f"{loc + ' ' + kind:<18} {x.real:>9.2f}{x.imag:+8.2f}i {xh.real:>9.2f}{xh.imag:+8.2f}i "
          f"{ell.semi_major:7.3f} {ell.semi_minor:7.3f} {np.degrees(ell.angle):7.1f}  {hit}")
