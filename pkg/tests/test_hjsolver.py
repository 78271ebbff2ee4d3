import math

import numpy as np
import pytest

from infotraj.dynamics import DubinsCar, ToyCascade
from infotraj.grid import Axis, GridSpec
from infotraj.hjsolver import (
    Adjoint,
    InstabilityError,
    SolverConfig,
    cfl_dt,
    classic_solve,
    dissipation_coeffs,
    hamiltonian,
    hybrid_solve,
    info_rate_on_grid,
    lf_hamiltonian,
    load_solution,
    optimal_hamiltonian,
    policy,
    rx_term,
    save_solution,
)
from infotraj.matrixcore import LogDetMetric, unvec, vec


def toy_truth(t, x, z):
    ax = np.abs(x)
    return -np.log(z + ((ax + t) ** 3 - ax**3) / 3.0)


def dubins(speed=50.0, limit=0.05, rate_fn=None):
    return DubinsCar(speed, limit, info_rate_fn=rate_fn, info_dim=2)


def toy_grid(dx=0.05, extent=2.0):
    n = int(round(2.0 * extent / dx)) + 1
    return GridSpec((Axis(-extent, extent, n),))


class TestHamiltonian:
    def test_zero_adjoint(self):
        car = dubins()
        adj = Adjoint(np.zeros(3), np.zeros(4))
        assert hamiltonian(car, np.zeros(3), 0.03, adj, np.zeros((2, 2))) == 0.0

    def test_drift_channel(self):
        car = dubins(speed=50.0)
        adj = Adjoint(np.array([1.0, 0.0, 0.0]), np.zeros(4))
        x = np.zeros(3)
        for u in (-0.05, 0.0, 0.05):
            assert hamiltonian(car, x, u, adj, np.zeros((2, 2))) == pytest.approx(50.0)

    def test_control_channel(self):
        car = dubins()
        adj = Adjoint(np.array([0.0, 0.0, 1.0]), np.zeros(4))
        got = hamiltonian(car, np.zeros(3), 0.05, adj, np.zeros((2, 2)))
        assert got == pytest.approx(0.05)

    def test_information_channel(self):
        car = dubins()
        q = np.array([[2.0, 0.5], [0.5, 1.0]])
        adj = Adjoint(np.zeros(3), vec(np.eye(2)))
        assert hamiltonian(car, np.zeros(3), 0.0, adj, q) == pytest.approx(3.0)


class TestOptimalHamiltonian:
    def test_matches_control_grid_minimum(self):
        rng = np.random.default_rng(31)
        car = dubins()
        us = np.linspace(-car.control_bound, car.control_bound, 101)
        for _ in range(200):
            x = np.array([rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(-3, 3)])
            adj = Adjoint(rng.normal(size=3), rng.normal(size=4))
            q = np.abs(rng.normal()) * np.eye(2)
            grid_min = min(hamiltonian(car, x, u, adj, q) for u in us)
            assert optimal_hamiltonian(car, x, adj, q) == pytest.approx(grid_min, abs=1e-12)

    def test_independent_of_bound_when_switching_vanishes(self):
        adj = Adjoint(np.array([0.3, -0.2, 0.0]), np.zeros(4))
        x = np.array([1.0, 2.0, 0.4])
        a = optimal_hamiltonian(dubins(limit=0.05), x, adj, np.zeros((2, 2)))
        b = optimal_hamiltonian(dubins(limit=5.0), x, adj, np.zeros((2, 2)))
        assert a == pytest.approx(b)

    def test_aligned_drift(self):
        car = dubins(speed=50.0)
        psi = 0.7
        adj = Adjoint(np.array([math.cos(psi), math.sin(psi), 0.0]), np.zeros(4))
        got = optimal_hamiltonian(car, np.array([0.0, 0.0, psi]), adj, np.zeros((2, 2)))
        assert got == pytest.approx(50.0)


class TestPolicy:
    def test_positive_switching_turns_negative(self):
        car = dubins()
        assert policy(car, np.zeros(3), Adjoint(np.array([0.0, 0.0, 2.0]), np.zeros(4))) == -0.05

    def test_tie_break_zero(self):
        car = dubins()
        assert policy(car, np.zeros(3), Adjoint(np.zeros(3), np.zeros(4))) == 0.0

    def test_attains_optimal_hamiltonian(self):
        rng = np.random.default_rng(32)
        car = dubins()
        for _ in range(100):
            x = np.array([rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-3, 3)])
            adj = Adjoint(rng.normal(size=3), rng.normal(size=4))
            q = np.abs(rng.normal()) * np.eye(2)
            u = policy(car, x, adj)
            assert hamiltonian(car, x, u, adj, q) == pytest.approx(
                optimal_hamiltonian(car, x, adj, q), abs=1e-12
            )


class TestDissipation:
    def test_global(self):
        got = dissipation_coeffs(dubins(50.0, 0.05), "global")
        assert np.allclose(got, [50.0, 50.0, 0.05])

    def test_local_at_zero_heading(self):
        got = dissipation_coeffs(dubins(50.0, 0.05), "local", np.array([0.0, 0.0, 0.0]))
        assert np.allclose(got, [50.0, 0.0, 0.05])

    def test_local_below_global(self):
        rng = np.random.default_rng(33)
        car = dubins(50.0, 0.05)
        glob = dissipation_coeffs(car, "global")
        for _ in range(1000):
            x = np.array([0.0, 0.0, rng.uniform(-math.pi, math.pi)])
            assert np.all(dissipation_coeffs(car, "local", x) <= glob + 1e-12)


class TestLfHamiltonian:
    def test_equal_biases_reduce_to_optimal(self):
        rng = np.random.default_rng(34)
        car = dubins()
        for _ in range(20):
            x = np.array([rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-3, 3)])
            adj = Adjoint(rng.normal(size=3), rng.normal(size=4))
            q = np.abs(rng.normal()) * np.eye(2)
            got = lf_hamiltonian(car, x, adj, adj, q, np.array([50.0, 50.0, 0.05]))
            assert got == pytest.approx(optimal_hamiltonian(car, x, adj, q), rel=1e-12)

    def test_zero_alpha_is_central(self):
        car = dubins()
        plus = Adjoint(np.array([1.0, 0.0, 0.5]), np.zeros(4))
        minus = Adjoint(np.array([0.0, 1.0, -0.5]), np.zeros(4))
        mean = Adjoint(0.5 * (plus.p + minus.p), np.zeros(4))
        x = np.array([0.0, 0.0, 0.3])
        got = lf_hamiltonian(car, x, plus, minus, np.zeros((2, 2)), np.zeros(3))
        assert got == pytest.approx(optimal_hamiltonian(car, x, mean, np.zeros((2, 2))))

    def test_dissipation_vanishes_with_bias_gap(self):
        # on a smooth field the one-sided gap is O(dx), so the dissipation term is too
        car = dubins()
        x = np.array([0.0, 0.0, 0.3])
        q = np.zeros((2, 2))
        alpha = np.array([50.0, 50.0, 0.05])
        gaps = []
        for dx in (0.1, 0.05, 0.025):
            plus = Adjoint(np.array([1.0 + dx, 2.0 - dx, 0.5 + dx]), np.zeros(4))
            minus = Adjoint(np.array([1.0 - dx, 2.0 + dx, 0.5 - dx]), np.zeros(4))
            mean = Adjoint(0.5 * (plus.p + minus.p), np.zeros(4))
            diss = lf_hamiltonian(car, x, plus, minus, q, alpha) - optimal_hamiltonian(
                car, x, mean, q
            )
            gaps.append(abs(diss))
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[1] / gaps[0] == pytest.approx(0.5, rel=1e-9)


class TestCflDt:
    def test_single_axis(self):
        grid = GridSpec((Axis(0.0, 1.0, 11),))
        assert cfl_dt(grid, np.array([1.0]), 0.5) == pytest.approx(0.05)

    def test_homogeneous_in_spacing(self):
        g1 = GridSpec((Axis(0.0, 1.0, 11), Axis(0.0, 2.0, 11)))
        g2 = GridSpec((Axis(0.0, 2.0, 11), Axis(0.0, 4.0, 11)))
        alpha = np.array([1.0, 3.0])
        assert cfl_dt(g2, alpha, 0.5) == pytest.approx(2.0 * cfl_dt(g1, alpha, 0.5))

    def test_survey_scale_grid(self):
        # dX = dY = 10 m, 32 heading cells, speed 50, turn limit 0.05
        grid = GridSpec.vehicle_plane((0.0, 800.0), (0.0, 800.0), 81, 81, 32)
        alpha = np.array([50.0, 50.0, 0.05])
        expected = 0.5 / (50.0 / 10.0 + 50.0 / 10.0 + 0.05 / (2.0 * math.pi / 32.0))
        got = cfl_dt(grid, alpha, 0.5)
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(0.0488, abs=5e-4)

    def test_all_zero_alpha_rejected(self):
        grid = GridSpec((Axis(0.0, 1.0, 11),))
        with pytest.raises(ValueError):
            cfl_dt(grid, np.array([0.0]), 0.5)


class TestRxTerm:
    def test_constant_field_gives_zero(self):
        grid = GridSpec.vehicle_plane((-1.0, 1.0), (-1.0, 1.0), 5, 5, 8)
        values = np.ones(grid.shape + (4,))
        vel = [np.full(grid.shape, 2.0), np.zeros(grid.shape), np.zeros(grid.shape)]
        assert np.allclose(rx_term(values, grid, vel), 0.0)

    def test_linear_advection(self):
        grid = GridSpec.vehicle_plane((-1.0, 1.0), (-1.0, 1.0), 9, 9, 8)
        mesh = grid.mesh()
        a = 3.0
        values = np.repeat((a * mesh[..., 0])[..., None], 4, axis=-1)
        vel = [np.full(grid.shape, 50.0), np.zeros(grid.shape), np.zeros(grid.shape)]
        got = rx_term(values, grid, vel)
        assert np.allclose(got[1:-1], a * 50.0)

    def test_smooth_field_first_order(self):
        def error_at(n):
            grid = GridSpec((Axis(0.0, 1.0, n),))
            xs = grid.axes[0].nodes
            values = np.sin(3.0 * xs)[:, None]
            vel = [np.full(grid.shape, -2.0)]
            got = rx_term(values, grid, vel)[:, 0]
            truth = -2.0 * 3.0 * np.cos(3.0 * xs)
            return np.max(np.abs(got - truth)[2:-2])

        assert error_at(81) / error_at(161) == pytest.approx(2.0, rel=0.2)

    def test_matched_mode_adds_lf_dissipation(self):
        grid = GridSpec((Axis(0.0, 1.0, 11),))
        xs = grid.axes[0].nodes
        values = (xs**2)[:, None]
        vel = [np.zeros(grid.shape)]
        got = rx_term(values, grid, vel, alpha=[1.0])
        # pure dissipation of a convex field: (D+ - D-)/2 = dx * phi'' / 2 > 0
        assert np.all(got[1:-1, 0] > 0.0)


class TestHybridSolve:
    def test_zero_information_keeps_initial_fields(self):
        car = dubins(rate_fn=None)
        metric = LogDetMetric(2)
        grid = GridSpec.vehicle_plane((-100.0, 100.0), (-100.0, 100.0), 5, 5, 8)
        z0 = vec(np.eye(2))
        sol = hybrid_solve(car, metric, grid, z0, SolverConfig(horizon=2.0))
        assert np.allclose(sol.phi_final(), metric.value(z0), atol=1e-12)
        assert np.allclose(sol.phi_z_final(), metric.gradient(z0), atol=1e-12)

    def test_toy_matches_closed_form(self):
        toy = ToyCascade()
        metric = LogDetMetric(1)
        grid = toy_grid(0.05)
        sol = hybrid_solve(toy, metric, grid, np.array([1.0]), SolverConfig(horizon=1.0))
        x = grid.axes[0].nodes
        inner = np.abs(x) <= 1.0
        err = np.abs(sol.phi_final() - toy_truth(1.0, x, 1.0))
        assert np.max(err[inner]) < 0.05

    def test_toy_matches_classic_and_halves_under_refinement(self):
        toy = ToyCascade()
        metric = LogDetMetric(1)

        def gap(dx):
            nx = int(round(4.0 / dx)) + 1
            nz = int(round(5.2 / dx)) + 1
            grid = toy_grid(dx)
            joint = GridSpec((Axis(-2.0, 2.0, nx), Axis(0.4, 5.6, nz)))
            cfg = SolverConfig(horizon=1.0)
            hyb = hybrid_solve(toy, metric, grid, np.array([1.0]), cfg)
            cls = classic_solve(toy, metric, joint, cfg)
            zi = int(np.argmin(np.abs(joint.axes[1].nodes - 1.0)))
            x = grid.axes[0].nodes
            inner = np.abs(x) <= 1.0
            return float(np.max(np.abs(hyb.phi_final() - cls.phi_final()[:, zi])[inner]))

        coarse = gap(0.05)
        fine = gap(0.025)
        assert coarse <= 5e-2
        assert 0.4 <= fine / coarse <= 0.6

    def test_gradient_field_tracks_resolve_sensitivity(self):
        toy = ToyCascade()
        metric = LogDetMetric(1)
        grid = toy_grid(0.0125)
        cfg = SolverConfig(horizon=1.0)
        sol = hybrid_solve(toy, metric, grid, np.array([1.0]), cfg)
        d = 1e-5
        plus = hybrid_solve(toy, metric, grid, np.array([1.0 + d]), cfg)
        minus = hybrid_solve(toy, metric, grid, np.array([1.0 - d]), cfg)
        fd = (plus.phi_final() - minus.phi_final()) / (2.0 * d)
        x = grid.axes[0].nodes
        inner = np.abs(x) <= 1.0
        rel = np.abs(sol.phi_z_final()[:, 0] - fd) / np.maximum(np.abs(fd), 1e-300)
        assert np.mean(rel[inner] <= 1e-2) >= 0.9

    @pytest.mark.parametrize(
        "dissipation,transport", [("local", "matched"), ("global", "upwind")]
    )
    def test_config_variants_stay_accurate(self, dissipation, transport):
        toy = ToyCascade()
        metric = LogDetMetric(1)
        grid = toy_grid(0.05)
        cfg = SolverConfig(
            horizon=1.0, dissipation=dissipation, gradient_transport=transport
        )
        sol = hybrid_solve(toy, metric, grid, np.array([1.0]), cfg)
        x = grid.axes[0].nodes
        inner = np.abs(x) <= 1.0
        err = np.abs(sol.phi_final() - toy_truth(1.0, x, 1.0))
        assert np.max(err[inner]) < 0.05

    def test_rk2_integrator_agrees_with_euler(self):
        toy = ToyCascade()
        metric = LogDetMetric(1)
        grid = toy_grid(0.05)
        x = grid.axes[0].nodes
        inner = np.abs(x) <= 1.0
        truth = toy_truth(1.0, x, 1.0)
        errs = {}
        for integ in ("euler", "rk2"):
            sol = hybrid_solve(
                toy, metric, grid, np.array([1.0]), SolverConfig(horizon=1.0, integrator=integ)
            )
            errs[integ] = float(np.max(np.abs(sol.phi_final() - truth)[inner]))
        assert errs["rk2"] < 0.05
        assert abs(errs["rk2"] - errs["euler"]) < 0.03  # same spatial order

    def test_value_monotone_in_horizon(self):
        toy = ToyCascade()
        metric = LogDetMetric(1)
        grid = toy_grid(0.05)
        sol = hybrid_solve(
            toy, metric, grid, np.array([1.0]), SolverConfig(horizon=1.0, snapshot_stride=2)
        )
        x = grid.axes[0].nodes
        inner = np.abs(x) <= 1.0
        for k in range(1, len(sol.times)):
            assert np.all(sol.phis[k][inner] <= sol.phis[k - 1][inner] + 1e-9)

    def test_gradient_matrices_stay_symmetric_and_definite(self):
        rng = np.random.default_rng(35)

        def rate(x):
            j = np.stack([0.01 + 0.0 * x[..., 0], 0.02 * np.sin(x[..., 2])], axis=-1)
            outer = j[..., :, None] * j[..., None, :]
            return np.swapaxes(outer, -1, -2).reshape(x.shape[:-1] + (4,))

        car = dubins(rate_fn=rate)
        metric = LogDetMetric(2)
        grid = GridSpec.vehicle_plane((-100.0, 100.0), (-100.0, 100.0), 7, 7, 8)
        sol = hybrid_solve(
            car, metric, grid, vec(np.eye(2)), SolverConfig(horizon=3.0, snapshot_stride=3)
        )
        for snap in sol.phi_zs:
            mats = unvec(snap)
            assert np.allclose(mats, np.swapaxes(mats, -1, -2), atol=1e-10)
        final = -unvec(sol.phi_z_final())
        assert np.min(np.linalg.eigvalsh(final)) > 0.0

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_instability_detected(self):
        def bad_rate(x):
            out = np.zeros(x.shape[:-1] + (4,))
            out[..., 0] = np.inf
            return out

        car = dubins(rate_fn=bad_rate)
        metric = LogDetMetric(2)
        grid = GridSpec.vehicle_plane((-10.0, 10.0), (-10.0, 10.0), 5, 5, 8)
        with pytest.raises((InstabilityError, ValueError)):
            hybrid_solve(car, metric, grid, vec(np.eye(2)), SolverConfig(horizon=1.0))

    def test_deterministic_across_worker_counts(self):
        def rate(x):
            j = np.stack([x[..., 0] / 100.0, x[..., 1] / 100.0], axis=-1)
            outer = j[..., :, None] * j[..., None, :]
            return np.swapaxes(outer, -1, -2).reshape(x.shape[:-1] + (4,))

        car = dubins(rate_fn=rate)
        grid = GridSpec.vehicle_plane((-100.0, 100.0), (-100.0, 100.0), 9, 9, 8)
        a = info_rate_on_grid(car, grid, workers=1)
        b = info_rate_on_grid(car, grid, workers=3)
        c = info_rate_on_grid(car, grid, workers=8)
        assert np.array_equal(a, b) and np.array_equal(a, c)


class TestClassicSolve:
    def test_refuses_high_dimension(self):
        car = dubins()
        metric = LogDetMetric(2)
        grid = GridSpec.vehicle_plane((-1.0, 1.0), (-1.0, 1.0), 5, 5, 8)
        joint = GridSpec(grid.axes + (Axis(0.0, 1.0, 5),) * 4)
        with pytest.raises(ValueError, match="refuses"):
            classic_solve(car, metric, joint, SolverConfig(horizon=1.0))

    def test_zero_dynamics_keeps_terminal_cost(self):
        class Null(ToyCascade):
            def info_rate(self, x):
                return np.zeros(np.asarray(x).shape[:-1] + (1,))

        metric = LogDetMetric(1)
        joint = GridSpec((Axis(-1.0, 1.0, 11), Axis(0.5, 2.5, 21)))
        sys = Null(control_bound=1e-12)
        sol = classic_solve(sys, metric, joint, SolverConfig(horizon=1.0))
        z = joint.axes[1].nodes
        expected = -np.log(z)[None, :]
        assert np.allclose(sol.phi_final(), np.broadcast_to(expected, joint.shape), atol=1e-6)

    def test_constant_rate_transport(self):
        # with zero vehicle dynamics and a constant information rate the value
        # is the terminal cost advanced along z: phi(s, z) = G(z + s * rate)
        class Drifting(ToyCascade):
            def info_rate(self, x):
                return np.full(np.asarray(x).shape[:-1] + (1,), 0.5)

        metric = LogDetMetric(1)
        joint = GridSpec((Axis(-1.0, 1.0, 11), Axis(0.5, 4.0, 71)))
        sys = Drifting(control_bound=1e-12)
        sol = classic_solve(sys, metric, joint, SolverConfig(horizon=1.0))
        z = joint.axes[1].nodes
        expected = -np.log(z + 0.5)
        mid = sol.phi_final()[5]
        interior = (z > 0.8) & (z < 3.0)
        assert np.max(np.abs(mid - expected)[interior]) < 2e-2


class TestSolutionIO:
    def test_round_trip(self, tmp_path):
        toy = ToyCascade()
        metric = LogDetMetric(1)
        grid = toy_grid(0.1)
        sol = hybrid_solve(toy, metric, grid, np.array([1.0]), SolverConfig(horizon=0.5))
        out = tmp_path / "sol"
        save_solution(sol, out)
        back = load_solution(out)
        assert np.array_equal(back.times, sol.times)
        assert all(np.array_equal(a, b) for a, b in zip(back.phis, sol.phis))
        assert all(np.array_equal(a, b) for a, b in zip(back.phi_zs, sol.phi_zs))
        assert back.grid == sol.grid

    def test_reruns_byte_identical(self, tmp_path):
        toy = ToyCascade()
        metric = LogDetMetric(1)
        grid = toy_grid(0.1)
        outs = []
        for name in ("a", "b"):
            sol = hybrid_solve(toy, metric, grid, np.array([1.0]), SolverConfig(horizon=0.5))
            out = tmp_path / name
            save_solution(sol, out)
            outs.append(out)
        for fname in ("manifest.json", "phi_0000.bin"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()
