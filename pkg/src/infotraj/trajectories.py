"""Optimal trajectory extraction from a solved value function.

The characteristic extractor integrates the adjoint (costate) system forward
from an initial state, seeding the costates from the gridded value gradient
and the grid-free information gradient. A receding-horizon variant re-solves
the value function as information accumulates. A brute-force piecewise-
constant control search provides the independent optimality oracle.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from infotraj.dynamics import (
    AugmentedState,
    CascadeSystem,
    ControlSignal,
    State,
    Trajectory,
    simulate_open_loop,
)
from infotraj.grid import GridSpec, interpolate
from infotraj.hjsolver import (
    Adjoint,
    HybridSolution,
    SolverConfig,
    hybrid_solve,
    info_rate_on_grid,
)
from infotraj import hjsolver as _hjsolver
from infotraj.matrixcore import TerminalMetric

HYSTERESIS_BAND = 1e-9


class BoundaryExitError(RuntimeError):
    """The extracted trajectory left the gridded domain; carries the partial record."""

    def __init__(self, message: str, trajectory: Trajectory):
        super().__init__(message)
        self.trajectory = trajectory


def _inside(grid: GridSpec, x: np.ndarray) -> bool:
    for i, ax in enumerate(grid.axes):
        if ax.periodic:
            continue
        if x[i] < ax.lo or x[i] > ax.hi:
            return False
    return True


def _info_rate_jacobian(system: CascadeSystem, x: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """d vec(Q)/dx by central differences, shape (m, d); one batched rate call."""
    d = system.state_dim
    probes = np.repeat(x[None, :], 2 * d, axis=0)
    for i in range(d):
        probes[2 * i, i] += steps[i]
        probes[2 * i + 1, i] -= steps[i]
    rates = system.info_rate(probes)
    return np.stack(
        [(rates[2 * i] - rates[2 * i + 1]) / (2.0 * steps[i]) for i in range(d)], axis=-1
    )


def _switching(system: CascadeSystem, p: np.ndarray) -> float:
    return float(system.control_column() @ p)


def extract_characteristic(
    solution: HybridSolution,
    system: CascadeSystem,
    metric: TerminalMetric,
    x0: State,
    dt: float,
    duration: Optional[float] = None,
) -> Trajectory:
    """Integrate the characteristic system forward from x0.

    Seeds: the x-costate from the interpolated central gradient of the final
    value snapshot, the information costate from the interpolated gradient
    field (constant afterwards: the Hamiltonian does not depend on the
    information state). Marches with fixed-step RK4, bang-bang control from
    the switching function with a hysteresis band against chattering, and the
    spatial information-rate Jacobian by central differences at half the grid
    spacing. Reports the terminal costate residual (the transversality
    condition sends it to zero), the gradient-consistency residual, and the
    value-vs-rollout gap.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    grid = solution.grid
    horizon = solution.horizon if duration is None else float(duration)
    if duration is not None and duration > solution.horizon + 1e-9:
        raise ValueError("requested duration exceeds the solved horizon")

    x = x0.as_array() if isinstance(x0, State) else np.asarray(x0, dtype=float)
    grad_field = solution.value_gradient_final()
    p = interpolate(grad_field, grid, x)
    lam = interpolate(solution.phi_z_final(), grid, x)
    phi_at_start = float(interpolate(solution.phi_final(), grid, x))
    z = solution.z0.copy()

    g = system.control_column()
    fd_steps = 0.5 * grid.spacings
    n_steps = max(1, int(math.ceil(horizon / dt - 1e-12)))
    h = horizon / n_steps

    ns = n_steps + 1
    states = np.empty((ns, system.state_dim))
    infos = np.empty((ns, system.info_len))
    controls = np.empty(ns)
    costates = np.empty((ns, system.state_dim))
    lam_row = np.asarray(lam, dtype=float)
    s_axis = h * np.arange(ns)

    u_prev = 0.0

    def control_from(x_now: np.ndarray, p_now: np.ndarray) -> float:
        # hysteresis against step-scale chatter; outside the band delegate to
        # the shared bang-bang rule
        sw = _switching(system, p_now)
        if abs(sw) < HYSTERESIS_BAND:
            return u_prev
        return _hjsolver.policy(system, x_now, Adjoint(p_now, lam_row))

    def derivs(x_now, p_now, u_now):
        dx = system.drift(x_now) + g * u_now
        dz = system.info_rate(x_now)
        ell_jac = _info_rate_jacobian(system, x_now, fd_steps)
        dp = -system.drift_jacobian(x_now).T @ p_now - ell_jac.T @ lam_row
        return dx, dz, dp

    states[0] = x
    infos[0] = z
    costates[0] = p
    controls[0] = control_from(x, p)
    partial = None
    for k in range(n_steps):
        u = control_from(x, p)
        u_prev = u
        controls[k] = u
        k1x, k1z, k1p = derivs(x, p, u)
        k2x, k2z, k2p = derivs(x + 0.5 * h * k1x, p + 0.5 * h * k1p, u)
        k3x, k3z, k3p = derivs(x + 0.5 * h * k2x, p + 0.5 * h * k2p, u)
        k4x, k4z, k4p = derivs(x + h * k3x, p + h * k3p, u)
        x = system.wrap(x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x))
        z = z + h / 6.0 * (k1z + 2 * k2z + 2 * k3z + k4z)
        p = p + h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        states[k + 1] = x
        infos[k + 1] = z
        costates[k + 1] = p
        controls[k + 1] = u
        if not _inside(grid, x):
            partial = k + 2
            break

    n_kept = partial or ns
    traj = Trajectory(
        s=s_axis[:n_kept],
        states=states[:n_kept],
        infos=infos[:n_kept],
        controls=controls[:n_kept],
        costates=costates[:n_kept],
        info_costates=np.repeat(lam_row[None, :], n_kept, axis=0),
    )
    if partial is not None:
        raise BoundaryExitError(
            f"trajectory left the grid at s = {s_axis[n_kept - 1]:.6g}", traj
        )

    z_final = traj.final_info()
    grad_final = metric.gradient(z_final)
    traj.terminal_cost = metric.value(z_final)
    traj.residuals = {
        "costate_terminal_norm": float(np.linalg.norm(p)),
        "costate_initial_norm": float(np.linalg.norm(costates[0])),
        "info_costate_gap": float(np.linalg.norm(lam_row - grad_final)),
        "info_costate_gap_rel": float(
            np.linalg.norm(lam_row - grad_final) / max(np.linalg.norm(grad_final), 1e-300)
        ),
        "value_consistency": float(abs(phi_at_start - traj.terminal_cost)),
    }
    return traj


def extract_receding(
    system: CascadeSystem,
    metric: TerminalMetric,
    grid: GridSpec,
    x0: State,
    z0: np.ndarray,
    horizon: float,
    legs: int,
    config: Optional[SolverConfig] = None,
    dt: float = 0.05,
    info_rate_field: Optional[np.ndarray] = None,
    workers: int = 1,
) -> Trajectory:
    """Closed-loop extraction: before each leg, re-solve the value function
    with the information collected so far as the new initial state.

    The gridded solution is valid for one initial information state only, so
    re-solving is what makes long extractions self-consistent. legs = 1
    reduces exactly to the characteristic extractor. The information-rate
    field does not depend on the information state and is computed once.
    """
    if legs < 1:
        raise ValueError("need at least one leg")
    if info_rate_field is None:
        info_rate_field = info_rate_on_grid(system, grid, workers=workers)

    leg_span = horizon / legs
    z = np.asarray(z0, dtype=float).copy()
    x = x0
    pieces = []
    for k in range(legs):
        remaining = horizon - k * leg_span
        cfg = SolverConfig(
            horizon=remaining,
            cfl_number=config.cfl_number if config else 0.5,
            integrator=config.integrator if config else "euler",
            dissipation=config.dissipation if config else "global",
            gradient_transport=config.gradient_transport if config else "matched",
            snapshot_stride=10**9,
        )
        sol = hybrid_solve(
            system, metric, grid, z, cfg, info_rate_field=info_rate_field, workers=workers
        )
        piece = extract_characteristic(sol, system, metric, x, dt, duration=leg_span)
        pieces.append(piece)
        x = State.from_array(piece.final_state()) if system.state_dim == 3 else piece.final_state()
        z = piece.final_info()

    s_off = 0.0
    s_all, st_all, u_all, z_all, p_all, lam_all = [], [], [], [], [], []
    for i, piece in enumerate(pieces):
        sl = slice(None) if i == 0 else slice(1, None)
        s_all.append(piece.s[sl] + s_off)
        st_all.append(piece.states[sl])
        u_all.append(piece.controls[sl])
        z_all.append(piece.infos[sl])
        p_all.append(piece.costates[sl])
        lam_all.append(piece.info_costates[sl])
        s_off += piece.duration
    traj = Trajectory(
        s=np.concatenate(s_all),
        states=np.concatenate(st_all),
        controls=np.concatenate(u_all),
        infos=np.concatenate(z_all),
        costates=np.concatenate(p_all),
        info_costates=np.concatenate(lam_all),
    )
    traj.terminal_cost = metric.value(traj.final_info())
    traj.residuals = dict(pieces[-1].residuals)
    return traj


def _simulate_control_batch(
    system: CascadeSystem,
    x0: np.ndarray,
    z0: np.ndarray,
    control_values: np.ndarray,
    horizon: float,
    dt: float,
) -> np.ndarray:
    """Final information states for a batch of equal-segment control sequences.

    control_values has shape (batch, segments); all rollouts share the time
    discretization, so the whole batch advances through vectorized RK4.
    """
    batch, segments = control_values.shape
    seg_span = horizon / segments
    g = system.control_column()
    x = np.repeat(x0[None, :], batch, axis=0)
    z = np.repeat(z0[None, :], batch, axis=0)
    for k in range(segments):
        u = control_values[:, k][:, None]
        n_sub = max(1, int(math.ceil(seg_span / dt - 1e-12)))
        h = seg_span / n_sub
        for _ in range(n_sub):
            k1x = system.drift(x) + g * u
            k1z = system.info_rate(x)
            x2 = x + 0.5 * h * k1x
            k2x = system.drift(x2) + g * u
            k2z = system.info_rate(x2)
            x3 = x + 0.5 * h * k2x
            k3x = system.drift(x3) + g * u
            k3z = system.info_rate(x3)
            x4 = x + h * k3x
            k4x = system.drift(x4) + g * u
            k4z = system.info_rate(x4)
            x = system.wrap(x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x))
            z = z + h / 6.0 * (k1z + 2 * k2z + 2 * k3z + k4z)
    return z


def brute_force_value(
    system: CascadeSystem,
    metric: TerminalMetric,
    x0: State,
    z0: np.ndarray,
    horizon: float,
    segments: int,
    dt: float = 0.1,
    refine: bool = False,
):
    """Exhaustive search over piecewise-constant controls with values in
    {-bound, 0, +bound} on equal segments; the independent optimality oracle.

    Returns (best cost, best ControlSignal). Optional deterministic
    coordinate-descent refinement of the interior switch times.
    """
    if segments < 1:
        raise ValueError("need at least one segment")
    if segments > 8:
        raise ValueError("refusing exhaustive search beyond 8 segments (3^8 rollouts)")
    x0_arr = x0.as_array() if isinstance(x0, State) else np.asarray(x0, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    if horizon == 0.0:
        return metric.value(z0), ControlSignal.constant(0.0, 1.0)
    b = system.control_bound
    # coasting listed first so exact cost ties resolve to the null control
    levels = (0.0, -b, b)
    combos = np.array(list(itertools.product(levels, repeat=segments)))
    finals = _simulate_control_batch(system, x0_arr, z0, combos, horizon, dt)
    costs = np.array([metric.value(zrow) for zrow in finals])
    best = int(np.argmin(costs))
    best_cost = float(costs[best])
    best_signal = ControlSignal.from_segments(combos[best], horizon)

    if refine and segments > 1:
        times = best_signal.times.copy()
        values = best_signal.values.copy()
        span = horizon / segments

        start_state = State.from_array(x0_arr) if system.state_dim == 3 else x0_arr

        def cost_of(ts):
            keep = np.concatenate(([0.0], ts, [horizon]))
            if np.any(np.diff(keep) <= 1e-9):
                return np.inf
            sig = ControlSignal(keep, values)
            traj = simulate_open_loop(system, AugmentedState(start_state, z0), sig, horizon, dt)
            return metric.value(traj.final_info())

        interior = times[1:-1].copy()
        current = cost_of(interior)
        step = span / 4.0
        for _ in range(4):
            for i in range(interior.size):
                for sign in (1.0, -1.0):
                    trial = interior.copy()
                    trial[i] += sign * step
                    c = cost_of(trial)
                    if c < current:
                        current, interior = c, trial
                        break
            step *= 0.5
        if current < best_cost:
            best_cost = float(current)
            best_signal = ControlSignal(
                np.concatenate(([0.0], interior, [horizon])), values
            )
    return best_cost, best_signal


@dataclass
class ValidationReport:
    """Structured pass/fail summary of the oracle suite."""

    checks: dict = field(default_factory=dict)

    def add(self, name: str, passed: bool, **details) -> None:
        self.checks[name] = {"passed": bool(passed), **details}

    @property
    def passed(self) -> bool:
        return all(entry["passed"] for entry in self.checks.values())

    @property
    def violations(self) -> list:
        return [name for name, entry in self.checks.items() if not entry["passed"]]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "violations": self.violations,
            "checks": self.checks,
        }


def validate(
    solution: Optional[HybridSolution],
    trajectory: Optional[Trajectory],
    oracle_results: Optional[dict] = None,
    thresholds: Optional[dict] = None,
) -> ValidationReport:
    """Assemble a validation report from a solution, an extracted trajectory,
    and externally computed oracle results (each entry: measured value,
    threshold, direction)."""
    thresholds = thresholds or {}
    report = ValidationReport()

    if solution is not None:
        finite = all(np.all(np.isfinite(p)) for p in solution.phis) and all(
            np.all(np.isfinite(p)) for p in solution.phi_zs
        )
        report.add("fields_finite", finite)
        # longer horizons cannot cost more (up to dissipation error)
        tol = thresholds.get("monotonicity_slack", 1e-9)
        worst = 0.0
        for k in range(1, len(solution.times)):
            worst = max(worst, float(np.max(solution.phis[k] - solution.phis[k - 1])))
        report.add("value_monotone_in_horizon", worst <= tol, worst_increase=worst, slack=tol)

    if trajectory is not None and trajectory.residuals:
        res = trajectory.residuals
        limit = thresholds.get("costate_terminal_ratio", 0.1)
        ratio = res["costate_terminal_norm"] / max(res["costate_initial_norm"], 1e-300)
        report.add(
            "costate_terminal_residual",
            ratio <= limit,
            ratio=ratio,
            limit=limit,
        )
        limit = thresholds.get("info_costate_gap_rel", 0.05)
        report.add(
            "info_costate_consistency",
            res["info_costate_gap_rel"] <= limit,
            gap_rel=res["info_costate_gap_rel"],
            limit=limit,
        )

    for name, entry in (oracle_results or {}).items():
        measured = entry["measured"]
        limit = entry["limit"]
        direction = entry.get("direction", "<=")
        ok = measured <= limit if direction == "<=" else measured >= limit
        report.add(name, ok, measured=measured, limit=limit, direction=direction)
    return report


def gradient_consistency_check(
    system: CascadeSystem,
    metric: TerminalMetric,
    grid: GridSpec,
    z0: np.ndarray,
    config: SolverConfig,
    delta: float = 1e-5,
    interior_margin: int = 2,
    info_rate_field: Optional[np.ndarray] = None,
    workers: int = 1,
) -> dict:
    """Compare the gradient field against central differences of re-solves.

    This is the executable form of the grid-free gradient construction: the
    field co-evolved by the solver must match the sensitivity of the value
    approximation to the initial information state.
    """
    if info_rate_field is None:
        info_rate_field = info_rate_on_grid(system, grid, workers=workers)
    sol = hybrid_solve(
        system, metric, grid, z0, config, info_rate_field=info_rate_field, workers=workers
    )
    m = system.info_len
    fd = np.empty(grid.shape + (m,))
    for j in range(m):
        zp = z0.copy()
        zm = z0.copy()
        zp[j] += delta
        zm[j] -= delta
        sp = hybrid_solve(
            system, metric, grid, zp, config, info_rate_field=info_rate_field, workers=workers
        )
        sm = hybrid_solve(
            system, metric, grid, zm, config, info_rate_field=info_rate_field, workers=workers
        )
        fd[..., j] = (sp.phi_final() - sm.phi_final()) / (2.0 * delta)
    rel = np.linalg.norm(sol.phi_z_final() - fd, axis=-1) / np.maximum(
        np.linalg.norm(fd, axis=-1), 1e-300
    )
    interior = np.ones(grid.shape, dtype=bool)
    for i, ax in enumerate(grid.axes):
        if ax.periodic or interior_margin == 0:
            continue
        sl = [slice(None)] * grid.ndim
        sl[i] = slice(0, interior_margin)
        interior[tuple(sl)] = False
        sl[i] = slice(-interior_margin, None)
        interior[tuple(sl)] = False
    rel_int = rel[interior]
    return {
        "fraction_within_1e2": float(np.mean(rel_int <= 1e-2)),
        "median_rel": float(np.median(rel_int)),
        "p90_rel": float(np.quantile(rel_int, 0.9)),
        "max_rel": float(np.max(rel_int)),
        "interior_points": int(rel_int.size),
    }
