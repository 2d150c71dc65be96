import csv
import json

import numpy as np
import pytest

from gridstate.assessment import (
    CampaignConfig,
    GridModel,
    confidence_range,
    ellipse_covariances,
    estimate_state,
    hit_rate_deviation,
    measurement_covariances,
    run_campaign,
    simulate_measurements,
    sweep,
)
from gridstate.estimator import NonIdentifiable, confidence_ellipse, ellipse_from_covariance
from gridstate.grid import build_ordering, path_grid
from gridstate.loadflow import LoadScenario, solve_loadflow
from gridstate.synthetic import REPORT_LOCATIONS


def test_dev_hr_examples():
    assert hit_rate_deviation(0.95, 50_000) == pytest.approx(0.00382, abs=1e-5)
    assert hit_rate_deviation(0.0, 10) == 0.0 and hit_rate_deviation(1.0, 10) == 0.0
    assert hit_rate_deviation(0.5, 100) == pytest.approx(0.196, abs=1e-3)
    with pytest.raises(ValueError):
        hit_rate_deviation(1.2, 10)
    with pytest.raises(ValueError):
        hit_rate_deviation(0.5, 0)


def test_dev_hr_against_binomial_simulation():
    rng = np.random.default_rng(0)
    hr = rng.binomial(100, 0.5, size=200_000) / 100
    lo, hi = np.quantile(hr, [0.025, 0.975])
    assert hit_rate_deviation(0.5, 100) == pytest.approx(hi - lo, rel=0.05)


def test_range_of_circle():
    ell = ellipse_from_covariance(10 + 5j, 0.5 * np.eye(2), 0.05)
    assert confidence_range(ell) == pytest.approx(2 * ell.semi_major, rel=1e-6)


def test_range_with_origin_inside():
    ell = ellipse_from_covariance(0.3 + 0.1j, np.array([[2.0, 0.3], [0.3, 1.0]]), 0.05)
    t = np.linspace(0, 2 * np.pi, 100_000)
    rot = np.exp(1j * ell.angle)
    far = np.abs(ell.center + rot * (ell.semi_major * np.cos(t) + 1j * ell.semi_minor * np.sin(t))).max()
    assert confidence_range(ell) == pytest.approx(far, rel=1e-6)


def refined_range(ell, n=1_000_000):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    w = ell.center + np.exp(1j * ell.angle) * (ell.semi_major * np.cos(t) + 1j * ell.semi_minor * np.sin(t))
    return np.abs(w).max() - np.abs(w).min()


@pytest.mark.parametrize("seed", range(5))
def test_range_against_refined_parametrization(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(2, 2))
    cov = A @ A.T + 0.05 * np.eye(2)
    center = complex(*(rng.normal(size=2) * 5 + 8))
    ell = ellipse_from_covariance(center, cov, 0.05)
    assert not np.any(np.abs(center) < ell.semi_major)  # origin far outside
    assert confidence_range(ell) == pytest.approx(refined_range(ell), rel=1e-4)


def test_config_validation():
    with pytest.raises(ValueError):
        CampaignConfig(repetitions=0)
    with pytest.raises(ValueError):
        CampaignConfig(multipliers={"sigma_u": 0})
    with pytest.raises(ValueError):
        CampaignConfig(multipliers={"sigma_x": 2})
    with pytest.raises(ValueError):
        CampaignConfig(meter="scada")
    with pytest.raises(ValueError):
        CampaignConfig(alpha=1.0)


def test_campaign_is_reproducible_and_worker_independent(model, true_state, base_noise):
    cfg = CampaignConfig(meter="em", noise=base_noise, repetitions=1500, seed=42, chunk_size=400, workers=1)
    a = run_campaign(model, true_state, cfg)
    b = run_campaign(model, true_state, cfg)
    from dataclasses import replace

    c = run_campaign(model, true_state, replace(cfg, workers=3))
    np.testing.assert_array_equal(a.hit_rate, b.hit_rate)
    np.testing.assert_array_equal(a.hit_rate, c.hit_rate)
    d = run_campaign(model, true_state, replace(cfg, seed=43))
    assert not np.array_equal(a.hit_rate, d.hit_rate)


def test_campaign_report_contents(tmp_path, model, true_state, base_noise):
    cfg = CampaignConfig(meter="pmu", noise=base_noise, repetitions=2000, seed=1, report_locations=REPORT_LOCATIONS)
    rep = run_campaign(model, true_state, cfg)
    assert rep.hit_rate.shape == (model.ordering.N,)
    assert np.all((rep.hit_rate >= 0) & (rep.hit_rate <= 1)) and np.all(rep.dev_hr >= 0)
    assert 0.93 <= rep.avg_voltage_hr <= 0.97 and 0.93 <= rep.avg_current_hr <= 0.97
    n = model.ordering.n
    assert rep.avg_voltage_hr == pytest.approx(rep.hit_rate[:n].mean())
    assert rep.avg_current_hr == pytest.approx(rep.hit_rate[n:].mean())
    rep.write_csv(tmp_path / "hr.csv")
    rep.write_json(tmp_path / "hr.json")
    rows = list(csv.DictReader(open(tmp_path / "hr.csv")))
    assert len(rows) == model.ordering.N and set(rows[0]) == {"location", "kind", "HR", "DevHR"}
    data = json.loads((tmp_path / "hr.json").read_text())
    assert len(data["report"]) == 2 * len(REPORT_LOCATIONS)
    assert data["seed"] == 1 and data["repetitions"] == 2000


def test_exclude_root(model, true_state, base_noise):
    from dataclasses import replace

    cfg = CampaignConfig(meter="em", noise=base_noise, repetitions=500, seed=3)
    a = run_campaign(model, true_state, cfg)
    b = run_campaign(model, true_state, replace(cfg, exclude_root=True))
    n = model.ordering.n
    assert b.avg_voltage_hr == pytest.approx(a.hit_rate[1:n].mean())
    assert b.avg_current_hr == a.avg_current_hr


def test_non_identifiable_campaign_aborts():
    topo = path_grid([0.1 + 0.05j, 0.1 + 0.05j])
    o = build_ordering(topo)
    state = solve_loadflow(topo, o, LoadScenario(400.0, {"N2": (2000.0, 100.0)})).state
    model = GridModel.build(topo, ["N2"], [])
    with pytest.raises(NonIdentifiable):
        run_campaign(model, state, CampaignConfig(meter="pmu", repetitions=10))


def test_fast_path_matches_full_runs(model, true_state, base_noise):
    """Ellipse shape does not depend on the measured values."""
    cov = ellipse_covariances(model, true_state, "em", base_noise)
    s1, s2 = measurement_covariances(model, true_state, "em", base_noise)
    rng = np.random.default_rng(12)
    for _ in range(10):
        z, _ = simulate_measurements(model, true_state, "em", base_noise, rng)
        res = estimate_state(model, z, s1, s2)
        for i in (0, 5, model.ordering.n + 2):
            full = confidence_ellipse(res, i, 0.05)
            fast = ellipse_from_covariance(true_state.x[i], cov[i], 0.05)
            assert full.semi_major == pytest.approx(fast.semi_major, rel=1e-12)
            assert full.semi_minor == pytest.approx(fast.semi_minor, rel=1e-12)
            assert full.angle == pytest.approx(fast.angle, abs=1e-12)


@pytest.mark.parametrize(
    "param, values",
    [("sigma_u", [0.5, 1.0, 2.0, 4.0]), ("sigma_i", [0.01, 0.05, 0.2]), ("sigma_phi", [0.0, 0.01, 0.05])],
)
def test_range_monotone(model, true_state, base_noise, param, values):
    cfg = CampaignConfig(meter="em", noise=base_noise)
    rep = sweep(model, true_state, cfg, param, values, REPORT_LOCATIONS)
    for loc in REPORT_LOCATIONS:
        s = rep.series(loc, "voltage")
        assert np.all(np.diff(s) >= -1e-12 * s.max())
        assert np.all(s >= 0)


def test_sweep_output(tmp_path, model, true_state, base_noise):
    cfg = CampaignConfig(meter="em", noise=base_noise)
    rep = sweep(model, true_state, cfg, "sigma_u", np.linspace(1, 4, 7), REPORT_LOCATIONS)
    assert len(rep.rows) == 7 * len(REPORT_LOCATIONS) * 2
    rep.write_csv(tmp_path / "s.csv")
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert set(rows[0]) == {"location", "kind", "param", "value", "delta_c"}
    assert sweep(model, true_state, cfg, "sigma_u", []).rows == ()
    with pytest.raises(ValueError, match="sorted"):
        sweep(model, true_state, cfg, "sigma_u", [2.0, 1.0])
    with pytest.raises(ValueError):
        sweep(model, true_state, cfg, "rho_u", [1.0])
