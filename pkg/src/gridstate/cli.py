"""``gridstate`` command line: loadflow | estimate | assess | sweep.

Every command falls back to the bundled example grid, loads, noise spec and
meter scenario, so ``gridstate assess --reps 5000`` runs out of the box.
Exit codes: 0 success, 1 numerical failure, 2 input error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .assessment import (
    CampaignConfig,
    GridModel,
    estimate_state,
    measurement_covariances,
    run_campaign,
    simulate_measurements,
    sweep,
)
from .estimator import CovarianceInconsistency, NonIdentifiable, write_result_csv, write_result_json
from .grid import GridError, StateVector, build_ordering, topology_from_dict
from .loadflow import (
    LoadFlowError,
    empirical_theta_sigma,
    load_interval_csv,
    scenario_from_dict,
    solve_loadflow,
    state_from_records,
    state_to_records,
)
from .metering import (
    NoiseSpec,
    PreparedMeasurements,
    assemble_em_covariances,
    prepare_em,
    read_raw_csv,
    write_prepared_csv,
    write_raw_csv,
)
from .synthetic import REPORT_LOCATIONS


class InputError(Exception):
    """Bad or unreadable input file or parameter (exit code 2)."""


def bundled(name: str) -> Path:
    return Path(str(resources.files("gridstate") / "data" / name))


def read_json(path: str | Path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON ({exc.msg})") from exc
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc


@dataclass
class RunManifest:
    """Resolved inputs of one command invocation."""

    grid: Path
    loads: Path
    noise: Path
    scenario: Path
    out: Path
    seed: int
    params: dict = field(default_factory=dict)

    @classmethod
    def from_args(cls, args) -> "RunManifest":
        seed = args.seed
        if seed is None:
            env = os.environ.get("GRIDSTATE_SEED")
            try:
                seed = int(env) if env else 0
            except ValueError:
                raise InputError(f"GRIDSTATE_SEED={env!r} is not an integer") from None
        m = cls(
            Path(args.grid or bundled("grid.json")),
            Path(args.loads or bundled("loads.json")),
            Path(args.noise or bundled("noise.json")),
            Path(args.scenario or bundled("scenario.json")),
            Path(args.out),
            seed,
            {k: v for k, v in vars(args).items() if k not in {"grid", "loads", "noise", "scenario", "out", "seed", "func"}},
        )
        for p in (m.grid, m.loads, m.noise, m.scenario):
            if not p.is_file():
                raise InputError(f"no such file: {p}")
        try:
            m.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise InputError(f"cannot create output directory {m.out}: {exc.strerror}") from exc
        if not os.access(m.out, os.W_OK):
            raise InputError(f"output directory {m.out} is not writable")
        return m

    def topology(self):
        try:
            return topology_from_dict(read_json(self.grid))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"{self.grid}: invalid grid ({exc})") from exc

    def noise_spec(self) -> NoiseSpec:
        try:
            return NoiseSpec.from_dict(read_json(self.noise))
        except (TypeError, ValueError) as exc:
            raise InputError(f"{self.noise}: invalid noise spec ({exc})") from exc

    def model(self, topology) -> GridModel:
        data = read_json(self.scenario)
        try:
            return GridModel.build(topology, list(data.get("measured_nodes", [])), list(data.get("measured_edges", [])))
        except (KeyError, ValueError, AttributeError) as exc:
            raise InputError(f"{self.scenario}: invalid meter scenario ({exc})") from exc

    def load_scenarios(self, topology):
        slack = self.params.get("slack_voltage")
        try:
            if self.loads.suffix.lower() == ".csv":
                return load_interval_csv(self.loads, complex(slack if slack is not None else topology.nominal_voltage))
            sc = scenario_from_dict(read_json(self.loads))
            return [sc]
        except InputError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{self.loads}: invalid load data ({exc})") from exc


def _true_state(manifest: RunManifest, topology, ordering) -> StateVector:
    """True state from ``--state`` if given, else a load flow of the (first) load scenario."""
    state_path = manifest.params.get("state")
    if state_path:
        data = read_json(state_path)
        recs = data["state"] if isinstance(data, dict) else data
        try:
            return state_from_records(recs, ordering)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{state_path}: invalid state file ({exc})") from exc
    scenario = _pick_scenario(manifest.load_scenarios(topology), manifest.params.get("interval"))
    return solve_loadflow(topology, ordering, scenario).state


def _pick_scenario(scenarios, label):
    if not scenarios:
        raise InputError("load file contains no scenarios")
    if label is None:
        return scenarios[0]
    for s in scenarios:
        if s.label == label:
            return s
    raise InputError(f"no load interval labelled {label!r}")


def _report_nodes(args, topology) -> tuple[str, ...]:
    if args.report_nodes is None:
        return ()
    known = {n.id for n in topology.nodes}
    if not args.report_nodes:
        return tuple(n for n in REPORT_LOCATIONS if n in known)
    missing = [n for n in args.report_nodes if n not in known]
    if missing:
        raise InputError(f"unknown report nodes {missing}")
    return tuple(args.report_nodes)


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2)
    sys.stdout.write("\n")


def cmd_loadflow(args) -> int:
    m = RunManifest.from_args(args)
    topology = m.topology()
    ordering = build_ordering(topology)
    scenarios = m.load_scenarios(topology)
    chosen = _pick_scenario(scenarios, args.interval)
    results = {s.label: solve_loadflow(topology, ordering, s, tol=args.tol) for s in scenarios}
    res = results[chosen.label]
    records = state_to_records(topology, res.state)
    with open(m.out / "true_state.json", "w") as fh:
        json.dump({"label": chosen.label, "iterations": res.iterations, "max_mismatch": res.max_mismatch,
                   "state": records}, fh, indent=2)
    with open(m.out / "true_state.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["id", "kind", "re", "im", "node_kind"])
        w.writeheader()
        w.writerows(records)
    summary = {"label": chosen.label, "iterations": res.iterations, "max_mismatch": res.max_mismatch}
    if len(scenarios) > 1:
        theta = empirical_theta_sigma([r.state for r in results.values()])
        summary["sigma_theta"] = theta
        summary["scenarios"] = len(scenarios)
        with open(m.out / "sigma_theta.json", "w") as fh:
            json.dump({"sigma_theta": theta, "scenarios": len(scenarios)}, fh, indent=2)
    nodes = _report_nodes(args, topology) or tuple(ordering.node_ids)
    listing = []
    for nid in nodes:
        row = {"location": nid, "voltage": _fmt(res.state.voltage(nid))}
        eid = topology.parent_edge(nid)
        row["current"] = _fmt(res.state.current(eid)) if eid else None
        listing.append(row)
    summary["phasors"] = listing
    _emit(summary)
    return 0


def _fmt(z: complex) -> str:
    return f"{z.real:.2f}{z.imag:+.2f}i"


def _alpha(args) -> float:
    """CLI ``--alpha`` is the confidence level; the library works with its complement."""
    return round(1.0 - args.alpha, 12)


def cmd_estimate(args) -> int:
    m = RunManifest.from_args(args)
    topology = m.topology()
    model = m.model(topology)
    spec = m.noise_spec()
    nominal = topology.nominal_voltage
    if args.raw:
        if args.model != "em":
            raise InputError("--raw readings are EM magnitudes and local angles; use --model em")
        try:
            raw = read_raw_csv(args.raw, model.layout)
        except (KeyError, ValueError) as exc:
            raise InputError(f"{args.raw}: {exc}") from exc
        except OSError as exc:
            raise InputError(f"cannot read {args.raw}: {exc.strerror}") from exc
        z = prepare_em(raw)
        s1, s2 = assemble_em_covariances(z, model.layout, spec, nominal)
    else:
        true = _true_state(m, topology, model.ordering)
        rng = np.random.default_rng(m.seed)
        z, raw = simulate_measurements(model, true, args.model, spec, rng)
        s1, s2 = measurement_covariances(model, true, args.model, spec)
        if args.model == "em":
            write_raw_csv(m.out / "raw_measurements.csv", raw)
    write_prepared_csv(m.out / "measurements.csv", model.layout, PreparedMeasurements(z, s1, s2, args.model.upper()))
    result = estimate_state(model, z, s1, s2)
    labels = model.ordering.labels()
    write_result_json(m.out / "estimate.json", result, labels, _alpha(args))
    write_result_csv(m.out / "estimate.csv", result, labels, _alpha(args))
    _emit({
        "model": args.model,
        "seed": m.seed,
        "mode": "field" if args.raw else "simulation",
        "entries": len(labels),
        "stationarity_residual": result.stationarity_residual(),
        "constraint_residual": result.constraint_residual(),
    })
    return 0


def _campaign_config(args, m: RunManifest, topology, spec) -> CampaignConfig:
    mult = {k: v for k, v in (("sigma_u", args.mult_sigma_u), ("sigma_i", args.mult_sigma_i),
                              ("sigma_phi", args.mult_sigma_phi)) if v is not None}
    return CampaignConfig(
        meter=args.model, noise=spec, repetitions=getattr(args, "reps", 1), alpha=_alpha(args), seed=m.seed,
        multipliers=mult, report_locations=_report_nodes(args, topology), exclude_root=args.exclude_root,
        workers=args.workers,
    )


def cmd_assess(args) -> int:
    m = RunManifest.from_args(args)
    topology = m.topology()
    model = m.model(topology)
    true = _true_state(m, topology, model.ordering)
    try:
        config = _campaign_config(args, m, topology, m.noise_spec())
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    report = run_campaign(model, true, config)
    report.write_csv(m.out / "hit_rates.csv")
    report.write_json(m.out / "hit_rates.json")
    out = report.summary()
    if config.report_locations:
        out["report"] = report.to_dict()["report"]
    _emit(out)
    return 0


def cmd_sweep(args) -> int:
    m = RunManifest.from_args(args)
    topology = m.topology()
    model = m.model(topology)
    true = _true_state(m, topology, model.ordering)
    try:
        config = _campaign_config(args, m, topology, m.noise_spec())
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    values = np.linspace(args.lo, args.hi, args.steps) if args.steps > 0 else np.array([])
    locations = config.report_locations or tuple(n for n in REPORT_LOCATIONS if n in model.ordering.node_index)
    report = sweep(model, true, config, args.sweep, values, locations or None)
    report.write_csv(m.out / "sweep.csv")
    report.write_json(m.out / "sweep.json")
    _emit({"parameter": report.parameter, "values": list(report.values), "rows": len(report.rows)})
    return 0


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _confidence(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("confidence level must lie in (0, 1)")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if v <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridstate", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid", help="grid topology JSON (default: bundled example grid)")
    common.add_argument("--loads", help="load scenario JSON or interval CSV (node_id,timestamp,p_w,q_var)")
    common.add_argument("--interval", help="timestamp of the interval CSV row set to use as true state")
    common.add_argument("--slack-voltage", type=float, help="slack voltage for interval CSV input (default: nominal)")
    common.add_argument("--noise", help="noise spec JSON")
    common.add_argument("--scenario", help="meter scenario JSON {measured_nodes, measured_edges}")
    common.add_argument("--seed", type=int, help="master seed (fallback: $GRIDSTATE_SEED, then 0)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--report-nodes", nargs="*", metavar="ID",
                        help="report locations; without ids, the standard seven when present")

    p = sub.add_parser("loadflow", parents=[common], help="solve the load flow for the true state")
    p.add_argument("--tol", type=_positive_float, default=1e-10, help="mismatch tolerance in per unit")
    p.set_defaults(func=cmd_loadflow)

    est = argparse.ArgumentParser(add_help=False)
    est.add_argument("--model", choices=("pmu", "em"), default="em")
    est.add_argument("--alpha", type=_confidence, default=0.95, help="confidence level of the ellipses")
    est.add_argument("--state", help="true state JSON written by 'loadflow' (default: solve --loads)")

    p = sub.add_parser("estimate", parents=[common, est], help="simulate or read measurements and estimate")
    p.add_argument("--raw", help="EM readings CSV (meter_id,kind,u,i,phi); field mode")
    p.set_defaults(func=cmd_estimate)

    camp = argparse.ArgumentParser(add_help=False)
    for q in ("u", "i", "phi"):
        camp.add_argument(f"--mult-sigma-{q}", type=_positive_float, help=f"multiplier on the sigma_{q} error std")
    camp.add_argument("--workers", type=_positive_int, help="worker threads (default: available cores)")
    camp.add_argument("--exclude-root", action="store_true", help="leave the substation out of voltage averages")

    p = sub.add_parser("assess", parents=[common, est, camp], help="Monte-Carlo hit-rate campaign")
    p.add_argument("--reps", type=_positive_int, default=5000, help="repetitions R")
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("sweep", parents=[common, est, camp], help="confidence ranges over a noise sweep")
    p.add_argument("--sweep", required=True, choices=("sigma_u", "sigma_i", "sigma_phi"))
    p.add_argument("--from", dest="lo", type=float, required=True)
    p.add_argument("--to", dest="hi", type=float, required=True)
    p.add_argument("--steps", type=int, default=7)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="gridstate: %(levelname)s: %(message)s")
    if getattr(args, "steps", 0) < 0:
        parser.error("--steps must be nonnegative")
    if getattr(args, "sweep", None) and args.hi < args.lo:
        parser.error("--to must not be below --from")
    try:
        return args.func(args)
    except (NonIdentifiable, LoadFlowError, CovarianceInconsistency, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"gridstate: numerical failure: {exc}", file=sys.stderr)
        return 1
    except (InputError, GridError) as exc:
        print(f"gridstate: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"gridstate: invalid input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
