"""Grid PDE solvers, Gaussian W2, transport cost, and the flow-vs-grid bridge."""

import math

import numpy as np
import pytest

from flowfact import oracle, potentials
from flowfact.flows import FlowState, FlowTrajectory, evolve_posterior
from flowfact.oracle import (
    CflError,
    DensityGrid,
    compare_flow_to_grid,
    gaussian_grid_1d,
    gaussian_w2,
    grid_advect_density,
    grid_diffuse_density,
    transport_cost,
)


class ConstantVelocityBank:
    def __init__(self, v):
        self.v = v

    def grad_z(self, k, z, t):
        return np.full_like(np.asarray(z), self.v)

    def hessian_z(self, k, z, t):
        z = np.asarray(z)
        d = z.shape[-1]
        return np.zeros((d, d)) if z.ndim == 1 else np.zeros((z.shape[0], d, d))


class TestDensityGrid:
    def test_mass_and_moments(self):
        g = gaussian_grid_1d(-6, 6, 512)
        assert abs(g.total_mass() - 1.0) < 1e-12
        assert abs(g.mean()) < 1e-12
        assert abs(g.variance() - 1.0) < 1e-3

    def test_negative_mass_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            DensityGrid((0.0,), (1.0,), np.array([0.5, -0.1]))

    def test_csv_dump(self, tmp_path):
        g = gaussian_grid_1d(-2, 2, 8)
        path = tmp_path / "grid.csv"
        g.save_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "x,density"
        assert len(lines) == 9


class TestAdvection:
    def test_zero_velocity_is_identity(self):
        g = gaussian_grid_1d(-6, 6, 256)
        out = grid_advect_density(g, lambda x, t: np.zeros_like(x), 0.01, 50)
        assert np.array_equal(out.mass, g.mass)

    def test_constant_velocity_translates(self):
        g = gaussian_grid_1d(-8, 8, 1024)
        v = 0.8
        out = grid_advect_density(g, lambda x, t: np.full_like(x, v), 0.005, 200)  # t = 1
        assert abs(out.mean() - v) < g.widths[0]
        assert abs(out.total_mass() - 1.0) < 1e-12

    def test_linear_velocity_grows_variance_exponentially(self):
        a = 0.2
        g = gaussian_grid_1d(-10, 10, 2048)
        steps = 500
        dt = 1.0 / steps
        out = grid_advect_density(g, lambda x, t: a * x, dt, steps)
        assert abs(out.variance() - math.exp(2 * a)) / math.exp(2 * a) < 0.02

    def test_cfl_violation_reports_ratio(self):
        g = gaussian_grid_1d(-1, 1, 16)  # h = 0.125
        with pytest.raises(CflError, match="ratio") as exc:
            grid_advect_density(g, lambda x, t: np.full_like(x, 10.0), 0.1, 1)
        assert exc.value.ratio > 0.5

    def test_2d_translation(self):
        x = np.linspace(-4, 4, 128)
        xx, yy = np.meshgrid(x, x, indexing="ij")
        mass = np.exp(-0.5 * (xx**2 + yy**2))
        g = DensityGrid((-4, -4), (4, 4), mass / mass.sum())
        out = grid_advect_density(g, lambda ax, ay, t: (np.full_like(ax, 0.5), np.full_like(ay, -0.25)), 0.01, 100)
        assert abs(out.mean(0) - 0.5) < 2 * g.widths[0]
        assert abs(out.mean(1) + 0.25) < 2 * g.widths[1]
        assert abs(out.total_mass() - 1.0) < 1e-12


class TestDiffusion:
    def test_zero_coefficient_is_identity(self):
        g = gaussian_grid_1d(-6, 6, 256)
        out = grid_diffuse_density(g, 0.0, 0.01, 100)
        assert np.array_equal(out.mass, g.mass)

    def test_variance_grows_linearly(self):
        g = gaussian_grid_1d(-8, 8, 512)
        d, t_total = 0.3, 1.0
        h = g.widths[0]
        dt = 0.2 * h * h / d
        steps = int(round(t_total / dt))
        out = grid_diffuse_density(g, d, t_total / steps, steps)
        target = 1.0 + 2 * d * t_total
        assert abs(out.variance() - target) / target < 1e-3

    def test_mass_conserved_over_long_runs(self):
        g = gaussian_grid_1d(-6, 6, 256)
        out = grid_diffuse_density(g, 0.1, 1e-4, 1000)
        assert abs(out.total_mass() - 1.0) < 1e-6

    def test_stability_violation_rejected(self):
        g = gaussian_grid_1d(-1, 1, 64)
        with pytest.raises(CflError, match="stability"):
            grid_diffuse_density(g, 1.0, 0.1, 1)

    def test_2d_diffusion_variance_growth(self):
        n = 192
        h = 12.0 / n
        c = -6 + (np.arange(n) + 0.5) * h  # the grid's own cell centers
        xx, yy = np.meshgrid(c, c, indexing="ij")
        mass = np.exp(-0.5 * (xx**2 + yy**2))
        g = DensityGrid((-6, -6), (6, 6), mass / mass.sum())
        d = 0.2
        dt = 0.2 * h * h / d
        steps = int(round(0.5 / dt))
        out = grid_diffuse_density(g, d, 0.5 / steps, steps)
        for axis in (0, 1):
            growth = out.variance(axis) - g.variance(axis)
            assert abs(growth - 0.2) / 0.2 < 1e-3


class TestGaussianW2:
    def test_identical_is_zero(self):
        assert gaussian_w2(0.3, 1.7, 0.3, 1.7) == 0.0

    def test_pure_mean_shift(self):
        assert gaussian_w2(0, 1, 3, 1) == 3.0

    def test_pure_scale(self):
        assert gaussian_w2(0, 1, 0, 4) == 1.0

    def test_nonpositive_variance_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            gaussian_w2(0, 0.0, 1, 1)


class TestTransportCost:
    @staticmethod
    def _trajectory(bank, z0, horizon, dt=1.0):
        return evolve_posterior(bank, 0, z0, 0.0, horizon, dt=dt)

    def test_zero_potential_costs_nothing(self):
        bank = ConstantVelocityBank(0.0)
        trajs = [self._trajectory(bank, np.zeros(1), 4)]
        assert transport_cost(bank, 0, trajs) == 0.0

    def test_constant_speed_action_unit_time(self):
        # grad = m everywhere, T steps of dt=1/T: cost = m^2 / 2
        m, horizon = 2.0, 8
        bank = ConstantVelocityBank(m)
        trajs = [self._trajectory(bank, np.zeros(1), horizon, dt=1.0 / horizon)]
        assert abs(transport_cost(bank, 0, trajs, unit_time=True) - 2.0) < 1e-12

    def test_unit_steps_accumulate(self):
        m, horizon = 2.0, 5
        bank = ConstantVelocityBank(m)
        trajs = [self._trajectory(bank, np.zeros(1), horizon)]
        assert abs(transport_cost(bank, 0, trajs) - horizon * 0.5 * m * m) < 1e-12


class TestFlowVsGrid:
    @pytest.mark.parametrize("seed", [0, 3])
    def test_tracked_densities_match_grid_solver(self, seed):
        bank = potentials.init_potential_bank(
            np.random.default_rng(seed), 1, 1, emb_dim=4, hidden=(16, 16), scale=1.0
        )
        for net in bank.potentials:
            net.layers[-1].weight *= 0.12
            net.layers[-1].bias[:] = 0.0
        report = compare_flow_to_grid(bank, 0, horizon=8, cells=512)
        assert report.max_abs_err < 1e-2
        assert abs(report.flow_integral - 1.0) < 1e-2
        assert abs(report.grid_mass - 1.0) < 1e-2
