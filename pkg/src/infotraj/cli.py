"""Command-line driver: scenario files, solve / extract / plot / validate.

Exit codes: 0 success, 1 validation failure, 2 input error, 3 numerical
instability. The worker count is capped by the INFOTRAJ_WORKERS environment
variable. All artifacts are deterministic for a fixed configuration; wall
clock timings are segregated into timings.json.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from infotraj.dynamics import DubinsCar, State, trajectory_to_csv, trajectory_from_csv
from infotraj.grid import GridSpec, interpolate, read_manifest, write_manifest
from infotraj.hjsolver import (
    InstabilityError,
    SolverConfig,
    classic_solve,
    hybrid_solve,
    info_rate_on_grid,
    load_solution,
    save_solution,
)
from infotraj.matrixcore import LogDetMetric, NotPositiveDefiniteError, vec
from infotraj.sensing import DopplerSensor, GaussianPrior, prior_fim, suite_info_rate
from infotraj.trajectories import (
    BoundaryExitError,
    ValidationReport,
    brute_force_value,
    extract_characteristic,
    extract_receding,
    gradient_consistency_check,
)
from infotraj.dynamics import ToyCascade
from infotraj.grid import Axis

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INPUT = 2
EXIT_INSTABILITY = 3

# 95% quantile of the chi-square distribution with 2 degrees of freedom:
# the CDF is 1 - exp(-x/2), so the quantile is -2 ln(0.05).
CHI2_2DOF_95 = -2.0 * math.log(0.05)


class ScenarioError(ValueError):
    """A scenario file failed to parse or validate; names the offending field."""


def _require(condition: bool, where: str, message: str) -> None:
    if not condition:
        raise ScenarioError(f"{where}: {message}")


def _take(obj: dict, where: str, known: dict) -> dict:
    """Pull known fields (with defaults, None = required) and reject unknowns."""
    unknown = set(obj) - set(known)
    _require(not unknown, where, f"unknown field(s) {sorted(unknown)}")
    out = {}
    for key, default in known.items():
        if default is None and key not in obj:
            raise ScenarioError(f"{where}.{key}: required field is missing")
        out[key] = obj.get(key, default)
    return out


@dataclass
class Scenario:
    """Everything needed to reproduce a run: vehicle, prior, sensor suite,
    grid, solver settings, extraction settings, and initial states."""

    name: str
    speed: float
    turn_rate_limit: float
    prior_mean: np.ndarray
    prior_covariance: np.ndarray
    sensors: list
    x_extent: tuple
    y_extent: tuple
    nx: int
    ny: int
    npsi: int
    solver: SolverConfig
    extraction_dt: float
    extraction_mode: str
    extraction_legs: int
    initial_states: list
    seed: int = 0
    provenance: dict = field(default_factory=dict)

    def grid(self) -> GridSpec:
        return GridSpec.vehicle_plane(self.x_extent, self.y_extent, self.nx, self.ny, self.npsi)

    def prior(self) -> GaussianPrior:
        return GaussianPrior(self.prior_mean, self.prior_covariance)

    def build_sensors(self) -> list:
        built = []
        for spec in self.sensors:
            built.append(
                DopplerSensor(
                    altitude=spec["altitude_m"],
                    noise_std=spec["noise_std_hz"],
                    rate=spec["rate_hz"],
                    speed=self.speed,
                    frequency_scale=spec["frequency_scale_hz_per_mps"],
                )
            )
        return built

    def build_system(self) -> DubinsCar:
        rate_fn = suite_info_rate(self.build_sensors(), self.prior())
        return DubinsCar(
            self.speed, self.turn_rate_limit, info_rate_fn=rate_fn, info_dim=self.prior().dim
        )

    def initial_information(self) -> np.ndarray:
        return vec(prior_fim(self.prior()))

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "name": self.name,
            "vehicle": {
                "speed_mps": self.speed,
                "turn_rate_limit_radps": self.turn_rate_limit,
            },
            "prior": {
                "mean_m": [float(v) for v in self.prior_mean],
                "covariance_m2": [[float(v) for v in row] for row in self.prior_covariance],
            },
            "sensors": self.sensors,
            "grid": {
                "x_extent_m": list(self.x_extent),
                "y_extent_m": list(self.y_extent),
                "nx": self.nx,
                "ny": self.ny,
                "npsi": self.npsi,
            },
            "solver": {
                "horizon_s": self.solver.horizon,
                "cfl_number": self.solver.cfl_number,
                "integrator": self.solver.integrator,
                "dissipation": self.solver.dissipation,
                "gradient_transport": self.solver.gradient_transport,
                "snapshot_stride": self.solver.snapshot_stride,
            },
            "extraction": {
                "dt_s": self.extraction_dt,
                "mode": self.extraction_mode,
                "legs": self.extraction_legs,
            },
            "initial_states": [[s.x, s.y, s.psi] for s in self.initial_states],
            "seed": self.seed,
            "provenance": self.provenance,
        }


def scenario_from_dict(data: dict, where: str = "scenario") -> Scenario:
    top = _take(
        data,
        where,
        {
            "schema_version": None,
            "name": None,
            "vehicle": None,
            "prior": None,
            "sensors": None,
            "grid": None,
            "solver": None,
            "extraction": {},
            "initial_states": None,
            "seed": 0,
            "provenance": {},
        },
    )
    _require(top["schema_version"] == 1, f"{where}.schema_version", "expected 1")

    veh = _take(top["vehicle"], f"{where}.vehicle", {"speed_mps": None, "turn_rate_limit_radps": None})
    _require(veh["speed_mps"] > 0, f"{where}.vehicle.speed_mps", "must be positive")
    _require(
        veh["turn_rate_limit_radps"] > 0,
        f"{where}.vehicle.turn_rate_limit_radps",
        "must be positive",
    )

    pri = _take(top["prior"], f"{where}.prior", {"mean_m": None, "covariance_m2": None})
    mean = np.asarray(pri["mean_m"], dtype=float)
    cov = np.asarray(pri["covariance_m2"], dtype=float)
    _require(mean.ndim == 1, f"{where}.prior.mean_m", "must be a vector")
    try:
        GaussianPrior(mean, cov)
    except (ValueError, NotPositiveDefiniteError) as exc:
        raise ScenarioError(f"{where}.prior.covariance_m2: {exc}") from exc

    _require(isinstance(top["sensors"], list) and top["sensors"], f"{where}.sensors", "need at least one sensor")
    sensors = []
    for i, sen in enumerate(top["sensors"]):
        spec = _take(
            sen,
            f"{where}.sensors[{i}]",
            {
                "type": None,
                "altitude_m": None,
                "frequency_scale_hz_per_mps": None,
                "noise_std_hz": None,
                "rate_hz": None,
            },
        )
        _require(spec["type"] == "doppler", f"{where}.sensors[{i}].type", "only 'doppler' is available")
        for key in ("frequency_scale_hz_per_mps", "noise_std_hz", "rate_hz"):
            _require(spec[key] > 0, f"{where}.sensors[{i}].{key}", "must be positive")
        _require(spec["altitude_m"] >= 0, f"{where}.sensors[{i}].altitude_m", "must be nonnegative")
        sensors.append(spec)

    gr = _take(
        top["grid"],
        f"{where}.grid",
        {"x_extent_m": None, "y_extent_m": None, "nx": None, "ny": None, "npsi": None},
    )
    for key in ("nx", "ny", "npsi"):
        _require(int(gr[key]) >= 3, f"{where}.grid.{key}", "needs at least 3 points")

    sv = _take(
        top["solver"],
        f"{where}.solver",
        {
            "horizon_s": None,
            "cfl_number": 0.5,
            "integrator": "euler",
            "dissipation": "global",
            "gradient_transport": "matched",
            "snapshot_stride": 0,
        },
    )
    try:
        solver = SolverConfig(
            horizon=float(sv["horizon_s"]),
            cfl_number=float(sv["cfl_number"]),
            integrator=sv["integrator"],
            dissipation=sv["dissipation"],
            gradient_transport=sv["gradient_transport"],
            snapshot_stride=int(sv["snapshot_stride"]),
        )
    except ValueError as exc:
        raise ScenarioError(f"{where}.solver: {exc}") from exc

    ex = _take(
        top["extraction"],
        f"{where}.extraction",
        {"dt_s": 0.05, "mode": "characteristic", "legs": 1},
    )
    _require(ex["dt_s"] > 0, f"{where}.extraction.dt_s", "must be positive")
    _require(
        ex["mode"] in ("characteristic", "receding"),
        f"{where}.extraction.mode",
        "must be 'characteristic' or 'receding'",
    )
    _require(int(ex["legs"]) >= 1, f"{where}.extraction.legs", "must be >= 1")

    states = []
    for i, row in enumerate(top["initial_states"]):
        _require(len(row) == 3, f"{where}.initial_states[{i}]", "expected [X, Y, psi]")
        states.append(State(float(row[0]), float(row[1]), float(row[2])))

    return Scenario(
        name=str(top["name"]),
        speed=float(veh["speed_mps"]),
        turn_rate_limit=float(veh["turn_rate_limit_radps"]),
        prior_mean=mean,
        prior_covariance=cov,
        sensors=sensors,
        x_extent=tuple(float(v) for v in gr["x_extent_m"]),
        y_extent=tuple(float(v) for v in gr["y_extent_m"]),
        nx=int(gr["nx"]),
        ny=int(gr["ny"]),
        npsi=int(gr["npsi"]),
        solver=solver,
        extraction_dt=float(ex["dt_s"]),
        extraction_mode=ex["mode"],
        extraction_legs=int(ex["legs"]),
        initial_states=states,
        seed=int(top["seed"]),
        provenance=dict(top["provenance"]),
    )


def load_scenario(path) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    return scenario_from_dict(data, where=str(path))


def worker_count(requested: Optional[int]) -> int:
    cap = os.environ.get("INFOTRAJ_WORKERS")
    workers = requested if requested else 1
    if cap is not None:
        workers = min(workers, max(1, int(cap)))
    return workers


def cmd_solve(scenario: Scenario, out_dir, workers: int = 1) -> None:
    """Solve the scenario and persist the solution artifacts."""
    import hashlib

    system = scenario.build_system()
    metric = LogDetMetric(scenario.prior().dim)
    grid = scenario.grid()
    z0 = scenario.initial_information()
    ell = info_rate_on_grid(system, grid, workers=workers)
    solution = hybrid_solve(
        system, metric, grid, z0, scenario.solver, info_rate_field=ell, workers=workers
    )
    suite_hash = hashlib.sha256(
        json.dumps(scenario.to_dict()["sensors"], sort_keys=True).encode()
    ).hexdigest()
    os.makedirs(out_dir, exist_ok=True)
    save_solution(solution, out_dir, extras={"sensor_suite_hash": suite_hash})
    write_manifest(os.path.join(out_dir, "scenario.json"), scenario.to_dict())


def _shape_metrics(traj, prior_mean) -> dict:
    """Alignment of the final fifth of the path with the ray from the prior mean."""
    n = traj.s.size
    k0 = int(0.8 * n)
    seg = traj.states[k0:]
    disp = seg[-1][:2] - seg[0][:2]
    mid = 0.5 * (seg[-1][:2] + seg[0][:2]) - prior_mean
    ray = math.atan2(mid[1], mid[0])
    net = abs((math.atan2(disp[1], disp[0]) - ray + math.pi) % (2 * math.pi) - math.pi)
    rel = seg[:, :2] - prior_mean
    per = np.abs(
        (seg[:, 2] - np.arctan2(rel[:, 1], rel[:, 0]) + math.pi) % (2 * math.pi) - math.pi
    )
    deg = 180.0 / math.pi
    return {
        "net_displacement_misalignment_deg": float(net * deg),
        "mean_heading_misalignment_deg": float(np.mean(per) * deg),
        "max_heading_misalignment_deg": float(np.max(per) * deg),
    }


def cmd_extract(solution_dir, out_dir, x0_list=None, scenario: Optional[Scenario] = None,
                workers: int = 1) -> dict:
    """Extract trajectories from a stored solution; one CSV per initial state."""
    if scenario is None:
        scenario = scenario_from_dict(
            read_manifest(os.path.join(solution_dir, "scenario.json")),
            where=os.path.join(str(solution_dir), "scenario.json"),
        )
    starts = [State(*row) for row in x0_list] if x0_list else list(scenario.initial_states)
    if not starts:
        warnings.warn("no initial states given; nothing to extract", stacklevel=2)
        return {"trajectories": []}

    solution = load_solution(solution_dir)
    system = scenario.build_system()
    metric = LogDetMetric(scenario.prior().dim)
    os.makedirs(out_dir, exist_ok=True)

    ell = None
    if scenario.extraction_mode == "receding":
        ell = info_rate_on_grid(system, solution.grid, workers=workers)

    summary = {"trajectories": []}
    for idx, start in enumerate(starts):
        if scenario.extraction_mode == "receding":
            traj = extract_receding(
                system,
                metric,
                solution.grid,
                start,
                solution.z0,
                solution.horizon,
                legs=scenario.extraction_legs,
                config=scenario.solver,
                dt=scenario.extraction_dt,
                info_rate_field=ell,
                workers=workers,
            )
        else:
            traj = extract_characteristic(
                solution, system, metric, start, dt=scenario.extraction_dt
            )
        name = f"trajectory_{idx:03d}.csv"
        trajectory_to_csv(traj, os.path.join(out_dir, name), metric)
        entry = {
            "file": name,
            "initial_state": [start.x, start.y, start.psi],
            "cost": traj.terminal_cost,
            "normalized_gain": metric.normalized_gain(traj.final_info(), solution.z0),
            "residuals": traj.residuals,
        }
        entry.update(_shape_metrics(traj, scenario.prior_mean))
        summary["trajectories"].append(entry)
    write_manifest(os.path.join(out_dir, "extraction_summary.json"), summary)
    return summary


def _svg_path(points, scale, offset) -> str:
    coords = " ".join(
        f"{(x - offset[0]) * scale:.2f},{(offset[1] - y) * scale:.2f}" for x, y in points
    )
    return coords


def render_svg(trajectories, prior_mean, prior_covariance, width=640) -> str:
    """Figure-style SVG: trajectories in red, the 95% prior error ellipse dashed
    in blue, square axes in meters."""
    pts = np.concatenate([t.states[:, :2] for t in trajectories]) if trajectories else np.zeros((1, 2))
    eigvals, eigvecs = np.linalg.eigh(prior_covariance)
    radii = np.sqrt(CHI2_2DOF_95 * eigvals)
    lo = np.minimum(pts.min(axis=0), prior_mean - radii.max())
    hi = np.maximum(pts.max(axis=0), prior_mean + radii.max())
    span = float(max(hi[0] - lo[0], hi[1] - lo[1])) * 1.1 + 1e-9
    center = 0.5 * (lo + hi)
    lo = center - span / 2.0
    scale = width / span
    offset = (lo[0], lo[1] + span)  # svg y grows downward

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{width}" '
        f'viewBox="0 0 {width} {width}">',
        f'<rect x="0" y="0" width="{width}" height="{width}" fill="white" stroke="black"/>',
    ]
    angle = math.degrees(math.atan2(eigvecs[1, 1], eigvecs[0, 1]))
    cx = (prior_mean[0] - offset[0]) * scale
    cy = (offset[1] - prior_mean[1]) * scale
    lines.append(
        f'<ellipse cx="{cx:.2f}" cy="{cy:.2f}" rx="{radii[1] * scale:.2f}" '
        f'ry="{radii[0] * scale:.2f}" transform="rotate({-angle:.2f} {cx:.2f} {cy:.2f})" '
        f'fill="none" stroke="blue" stroke-dasharray="6,4" stroke-width="1.5"/>'
    )
    for traj in trajectories:
        coords = _svg_path(traj.states[:, :2], scale, offset)
        lines.append(
            f'<polyline points="{coords}" fill="none" stroke="red" stroke-width="1.5"/>'
        )
    n_ticks = 5
    for k in range(n_ticks):
        frac = k / (n_ticks - 1)
        value = lo[0] + frac * span
        pos = frac * width
        lines.append(
            f'<text x="{pos:.1f}" y="{width - 4}" font-size="11" fill="black">'
            f"{value:.0f}</text>"
        )
        value_y = lo[1] + frac * span
        pos_y = width - frac * width
        lines.append(
            f'<text x="4" y="{pos_y:.1f}" font-size="11" fill="black">{value_y:.0f}</text>'
        )
    lines.append('<text x="300" y="14" font-size="12" fill="black">meters</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def cmd_plot(in_dir, out_file, scenario: Optional[Scenario] = None) -> None:
    if scenario is None:
        candidate = os.path.join(in_dir, "scenario.json")
        if os.path.exists(candidate):
            scenario = scenario_from_dict(read_manifest(candidate), where=candidate)
    names = sorted(f for f in os.listdir(in_dir) if f.startswith("trajectory_") and f.endswith(".csv"))
    if not names:
        raise ScenarioError(f"{in_dir}: no trajectory CSV files found")
    trajectories = [trajectory_from_csv(os.path.join(in_dir, f)) for f in names]
    mean = scenario.prior_mean if scenario else np.zeros(2)
    cov = scenario.prior_covariance if scenario else 100.0 * np.eye(2)
    with open(out_file, "w", encoding="utf-8") as fh:
        fh.write(render_svg(trajectories, mean, cov))


def _toy_cross_check(dx: float) -> dict:
    toy = ToyCascade()
    metric = LogDetMetric(1)

    def gap(step):
        nx = int(round(4.0 / step)) + 1
        nz = int(round(5.2 / step)) + 1
        grid = GridSpec((Axis(-2.0, 2.0, nx),))
        joint = GridSpec((Axis(-2.0, 2.0, nx), Axis(0.4, 5.6, nz)))
        cfg = SolverConfig(horizon=1.0)
        hyb = hybrid_solve(toy, metric, grid, np.array([1.0]), cfg)
        cls = classic_solve(toy, metric, joint, cfg)
        zi = int(np.argmin(np.abs(joint.axes[1].nodes - 1.0)))
        x = grid.axes[0].nodes
        inner = np.abs(x) <= 1.0
        return float(np.max(np.abs(hyb.phi_final() - cls.phi_final()[:, zi])[inner]))

    coarse = gap(dx)
    fine = gap(dx / 2.0)
    return {"max_diff": coarse, "refined_max_diff": fine, "ratio": fine / coarse}


def run_validation_suite(suite: dict, workers: int = 1) -> ValidationReport:
    """Run the oracle suite: toy cross-check, gradient-consistency checks,
    characteristic residuals, and the brute-force optimality sandwich."""
    report = ValidationReport()
    thresholds = suite.get("thresholds", {})

    toy_dx = suite.get("toy_dx", 0.05)
    cross = _toy_cross_check(toy_dx)
    report.add(
        "toy_hybrid_vs_classic",
        cross["max_diff"] <= thresholds.get("toy_max_diff", 5e-2),
        **cross,
        limit=thresholds.get("toy_max_diff", 5e-2),
    )
    lo, hi = thresholds.get("toy_ratio_band", (0.4, 0.6))
    report.add("toy_refinement_halves", lo <= cross["ratio"] <= hi, ratio=cross["ratio"], band=[lo, hi])

    toy = ToyCascade()
    metric1 = LogDetMetric(1)
    toy_grid = GridSpec((Axis(-2.0, 2.0, int(round(4.0 / suite.get("toy_gradient_dx", 0.0125))) + 1),))
    out = gradient_consistency_check(
        toy, metric1, toy_grid, np.array([1.0]), SolverConfig(horizon=1.0),
        interior_margin=int(0.25 * toy_grid.axes[0].n),
    )
    report.add(
        "toy_gradient_consistency",
        out["fraction_within_1e2"] >= thresholds.get("gradient_fraction", 0.9),
        **out,
        limit=thresholds.get("gradient_fraction", 0.9),
    )

    scenario = suite.get("_scenario")
    if scenario is not None:
        system = scenario.build_system()
        metric = LogDetMetric(scenario.prior().dim)
        coarse_grid = GridSpec.vehicle_plane(
            scenario.x_extent, scenario.y_extent, 21, 21, 16
        )
        horizon = suite.get("survey_gradient_horizon_s", 5.0)
        out = gradient_consistency_check(
            system,
            metric,
            coarse_grid,
            scenario.initial_information(),
            SolverConfig(horizon=horizon, cfl_number=scenario.solver.cfl_number),
            workers=workers,
        )
        report.add(
            "survey_gradient_consistency",
            out["fraction_within_1e2"] >= thresholds.get("gradient_fraction", 0.9),
            **out,
            horizon_s=horizon,
            limit=thresholds.get("gradient_fraction", 0.9),
        )

        if suite.get("sandwich", True):
            grid = scenario.grid()
            z0 = scenario.initial_information()
            ell = info_rate_on_grid(system, grid, workers=workers)
            solution = hybrid_solve(
                system, metric, grid, z0, scenario.solver, info_rate_field=ell, workers=workers
            )
            x0 = scenario.initial_states[0]
            char = extract_characteristic(solution, system, metric, x0, scenario.extraction_dt)
            best = extract_receding(
                system, metric, grid, x0, z0, scenario.solver.horizon,
                legs=suite.get("sandwich_legs", 6), config=scenario.solver,
                dt=scenario.extraction_dt, info_rate_field=ell, workers=workers,
            )
            bf_cost, _ = brute_force_value(
                system, metric, x0, z0, scenario.solver.horizon,
                segments=suite.get("sandwich_segments", 6), dt=suite.get("sandwich_sim_dt", 0.2),
            )
            tol = thresholds.get("sandwich_rel", 0.02) * abs(bf_cost)
            report.add(
                "optimality_sandwich",
                best.terminal_cost <= bf_cost + tol,
                extracted_cost=best.terminal_cost,
                brute_force_cost=bf_cost,
                tolerance=tol,
            )
            phi_x0 = float(interpolate(solution.phi_final(), grid, x0.as_array()))
            band = thresholds.get("value_band", 0.6)
            report.add(
                "value_consistency_band",
                abs(best.terminal_cost - phi_x0) <= band and bf_cost >= phi_x0 - band,
                value_at_start=phi_x0,
                extracted_cost=best.terminal_cost,
                brute_force_cost=bf_cost,
                band=band,
            )
            ratio = char.residuals["costate_terminal_norm"] / max(
                char.residuals["costate_initial_norm"], 1e-300
            )
            report.add(
                "characteristic_residuals",
                ratio <= thresholds.get("costate_terminal_ratio", 1.0)
                and char.residuals["info_costate_gap_rel"]
                <= thresholds.get("info_costate_gap_rel", 1.0),
                costate_ratio=ratio,
                info_costate_gap_rel=char.residuals["info_costate_gap_rel"],
            )
    return report


def cmd_validate(suite_path, workers: int = 1) -> ValidationReport:
    with open(suite_path, "r", encoding="utf-8") as fh:
        suite = json.load(fh)
    if "scenario" in suite:
        scen_path = os.path.join(os.path.dirname(str(suite_path)), suite["scenario"])
        suite["_scenario"] = load_scenario(scen_path)
    report = run_validation_suite(suite, workers=workers)
    out_path = suite.get("report", None)
    if out_path:
        write_manifest(out_path, report.to_dict())
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="infotraj",
        description="Information-optimal vehicle trajectories from a hybrid "
        "method-of-lines Hamilton-Jacobi solver",
    )
    parser.add_argument("--workers", type=int, default=1, help="worker thread cap")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve a scenario and store the value fields")
    p_solve.add_argument("--config", required=True)
    p_solve.add_argument("--out", required=True)

    p_extract = sub.add_parser("extract", help="extract optimal trajectories")
    p_extract.add_argument("--solution", required=True)
    p_extract.add_argument("--out", required=True)
    p_extract.add_argument("--x0", action="append", default=None, metavar="X,Y,PSI")
    p_extract.add_argument("--scenario", default=None)

    p_plot = sub.add_parser("plot", help="render trajectory CSVs as an SVG figure")
    p_plot.add_argument("--in", dest="in_dir", required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.add_argument("--scenario", default=None)

    p_val = sub.add_parser("validate", help="run the oracle validation suite")
    p_val.add_argument("--suite", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    workers = worker_count(args.workers)
    try:
        if args.command == "solve":
            scenario = load_scenario(args.config)
            cmd_solve(scenario, args.out, workers=workers)
            print(f"solution written to {args.out}")
            return EXIT_OK
        if args.command == "extract":
            scenario = load_scenario(args.scenario) if args.scenario else None
            x0_list = None
            if args.x0 is not None:
                x0_list = []
                for chunk in args.x0:
                    parts = [float(v) for v in chunk.split(",")]
                    if len(parts) != 3:
                        raise ScenarioError(f"--x0 {chunk!r}: expected X,Y,PSI")
                    x0_list.append(parts)
            summary = cmd_extract(
                args.solution, args.out, x0_list=x0_list, scenario=scenario, workers=workers
            )
            for entry in summary["trajectories"]:
                print(
                    f"{entry['file']}: cost {entry['cost']:.6f}, gain "
                    f"{entry['normalized_gain']:.6f}, final-leg ray misalignment "
                    f"{entry['net_displacement_misalignment_deg']:.2f} deg"
                )
            return EXIT_OK
        if args.command == "plot":
            scenario = load_scenario(args.scenario) if args.scenario else None
            cmd_plot(args.in_dir, args.out, scenario=scenario)
            print(f"figure written to {args.out}")
            return EXIT_OK
        if args.command == "validate":
            report = cmd_validate(args.suite, workers=workers)
            for name, entry in report.checks.items():
                status = "pass" if entry["passed"] else "FAIL"
                detail = {k: v for k, v in entry.items() if k != "passed"}
                print(f"[{status}] {name}: {json.dumps(detail, sort_keys=True, default=float)}")
            if not report.passed:
                print(f"validation failed: {', '.join(report.violations)}")
                return EXIT_VALIDATION
            print("validation passed")
            return EXIT_OK
    except ScenarioError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BoundaryExitError as exc:
        print(f"extraction left the grid: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InstabilityError, NotPositiveDefiniteError) as exc:
        print(f"numerical instability: {exc}", file=sys.stderr)
        return EXIT_INSTABILITY
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
