"""Independent verification machinery for the latent flows.

Deliberately built on different numerics than the flow code it checks: a
finite-volume upwind solver for the continuity equation, an explicit stencil
for the heat equation, the closed-form 1D Gaussian Wasserstein-2 distance, and
a Monte-Carlo estimate of the kinetic transport cost along trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import flows

MASS_TOLERANCE = 1e-6


class CflError(ValueError):
    """Grid step violates the stability bound."""

    def __init__(self, kind: str, ratio: float, bound: float):
        super().__init__(f"{kind} stability violated: ratio {ratio:.4f} > {bound}")
        self.ratio = ratio


@dataclass
class DensityGrid:
    """Cell masses over a regular 1D or 2D lattice; masses sum to ~1."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    mass: np.ndarray  # (n,) or (nx, ny)

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=np.float64)
        if self.mass.ndim != len(self.lo) or self.mass.ndim not in (1, 2):
            raise ValueError("grid must be 1D or 2D with matching bounds")
        if np.any(self.mass < -1e-15):
            raise ValueError("cell masses must be nonnegative")

    @property
    def ndim(self) -> int:
        return self.mass.ndim

    @property
    def widths(self) -> tuple[float, ...]:
        return tuple(
            (h - l) / n for l, h, n in zip(self.lo, self.hi, self.mass.shape)
        )

    def centers(self, axis: int = 0) -> np.ndarray:
        n = self.mass.shape[axis]
        h = self.widths[axis]
        return self.lo[axis] + (np.arange(n) + 0.5) * h

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    def density(self) -> np.ndarray:
        return self.mass / self.cell_volume

    def total_mass(self) -> float:
        return float(self.mass.sum())

    def mean(self, axis: int = 0) -> float:
        marg = self.mass if self.ndim == 1 else self.mass.sum(axis=1 - axis)
        return float(np.sum(self.centers(axis) * marg) / marg.sum())

    def variance(self, axis: int = 0) -> float:
        marg = self.mass if self.ndim == 1 else self.mass.sum(axis=1 - axis)
        c = self.centers(axis)
        m = np.sum(c * marg) / marg.sum()
        return float(np.sum((c - m) ** 2 * marg) / marg.sum())

    def interp_density(self, x: np.ndarray) -> np.ndarray:
        """Linear interpolation of the cell-center density (1D)."""
        if self.ndim != 1:
            raise ValueError("interp_density supports 1D grids")
        return np.interp(np.asarray(x), self.centers(0), self.density())

    def save_csv(self, path) -> None:
        with open(path, "w") as fh:
            if self.ndim == 1:
                fh.write("x,density\n")
                for x, rho in zip(self.centers(0), self.density()):
                    fh.write(f"{x:.9g},{rho:.9g}\n")
            else:
                fh.write("x,y,density\n")
                dens = self.density()
                for i, x in enumerate(self.centers(0)):
                    for j, y in enumerate(self.centers(1)):
                        fh.write(f"{x:.9g},{y:.9g},{dens[i, j]:.9g}\n")


def gaussian_grid_1d(lo: float, hi: float, n: int, mu: float = 0.0, var: float = 1.0) -> DensityGrid:
    """Discretized Gaussian, renormalized so cell masses sum to exactly 1."""
    h = (hi - lo) / n
    x = lo + (np.arange(n) + 0.5) * h
    mass = np.exp(-0.5 * (x - mu) ** 2 / var)
    return DensityGrid((lo,), (hi,), mass / mass.sum())


def _upwind_flux_1d(mass: np.ndarray, v_face: np.ndarray, h: float) -> np.ndarray:
    """Donor-cell fluxes on n+1 faces; boundary faces sealed (mass conserving)."""
    rho = mass / h
    flux = np.zeros(mass.shape[0] + 1)
    vi = v_face[1:-1]
    left = rho[:-1]
    right = rho[1:]
    flux[1:-1] = np.where(vi > 0, vi * left, vi * right)
    return flux


def grid_advect_density(grid: DensityGrid, velocity_fn, dt: float, steps: int, t0: float = 0.0) -> DensityGrid:
    """Continuity-equation evolution d(rho)/dt = -d(v rho)/dx, first-order upwind.

    ``velocity_fn(x, t)`` maps cell-center coordinates to velocities (1D) or
    ``velocity_fn(xx, yy, t) -> (vx, vy)`` (2D, dimension split). Raises
    CflError when max|v| dt / h > 0.5.
    """
    if grid.ndim == 1:
        mass = grid.mass.copy()
        h = grid.widths[0]
        x = grid.centers(0)
        for s in range(steps):
            t = t0 + s * dt
            v = np.asarray(velocity_fn(x, t), dtype=np.float64)
            ratio = np.max(np.abs(v)) * dt / h
            if ratio > 0.5:
                raise CflError("advection CFL", ratio, 0.5)
            v_face = np.empty(mass.shape[0] + 1)
            v_face[1:-1] = 0.5 * (v[:-1] + v[1:])
            v_face[0] = v[0]
            v_face[-1] = v[-1]
            flux = _upwind_flux_1d(mass, v_face, h)
            mass = mass - dt * (flux[1:] - flux[:-1])
        return DensityGrid(grid.lo, grid.hi, mass)

    mass = grid.mass.copy()
    hx, hy = grid.widths
    xx, yy = np.meshgrid(grid.centers(0), grid.centers(1), indexing="ij")
    for s in range(steps):
        t = t0 + s * dt
        vx, vy = velocity_fn(xx, yy, t)
        ratio = max(np.max(np.abs(vx)) * dt / hx, np.max(np.abs(vy)) * dt / hy)
        if ratio > 0.5:
            raise CflError("advection CFL", ratio, 0.5)
        # x sweep: every column is a 1D advection problem
        rho = mass / hx
        flux = np.zeros((mass.shape[0] + 1, mass.shape[1]))
        vf = 0.5 * (vx[:-1, :] + vx[1:, :])
        flux[1:-1] = np.where(vf > 0, vf * rho[:-1, :], vf * rho[1:, :])
        mass = mass - dt * (flux[1:, :] - flux[:-1, :])
        # y sweep
        rho = mass / hy
        flux = np.zeros((mass.shape[0], mass.shape[1] + 1))
        vf = 0.5 * (vy[:, :-1] + vy[:, 1:])
        flux[:, 1:-1] = np.where(vf > 0, vf * rho[:, :-1], vf * rho[:, 1:])
        mass = mass - dt * (flux[:, 1:] - flux[:, :-1])
    return DensityGrid(grid.lo, grid.hi, mass)


def grid_diffuse_density(grid: DensityGrid, diff: float, dt: float, steps: int) -> DensityGrid:
    """Heat-equation evolution d(rho)/dt = D d2(rho)/dx2, explicit stencil.

    Zero-flux boundaries keep total mass exact. Raises CflError when
    D dt / h^2 > 0.25 on any axis.
    """
    if diff < 0:
        raise ValueError(f"diffusion coefficient must be >= 0, got {diff}")
    mass = grid.mass.copy()
    for axis, h in enumerate(grid.widths):
        ratio = diff * dt / (h * h)
        if ratio > 0.25:
            raise CflError("diffusion stability", ratio, 0.25)
    if diff == 0 or steps == 0:
        return DensityGrid(grid.lo, grid.hi, mass)
    for _ in range(steps):
        for axis, h in enumerate(grid.widths):
            m = np.moveaxis(mass, axis, 0)
            flux = np.zeros((m.shape[0] + 1, *m.shape[1:]))
            flux[1:-1] = -diff * (m[1:] - m[:-1]) / (h * h)
            m = m - dt * (flux[1:] - flux[:-1])
            mass = np.moveaxis(m, 0, axis)
    return DensityGrid(grid.lo, grid.hi, mass)


def gaussian_w2(mu0: float, var0: float, mu1: float, var1: float) -> float:
    """1D Gaussian Wasserstein-2: sqrt((mu0-mu1)^2 + (sqrt(var0)-sqrt(var1))^2)."""
    if var0 <= 0 or var1 <= 0:
        raise ValueError(f"variances must be positive, got {var0}, {var1}")
    return math.sqrt((mu0 - mu1) ** 2 + (math.sqrt(var0) - math.sqrt(var1)) ** 2)


def transport_cost(bank, k: int, trajectories, unit_time: bool = False) -> float:
    """Monte-Carlo kinetic action: mean over trajectories of sum_t 0.5 |grad u|^2 dt.

    With ``unit_time`` the T steps span total time 1 (dt = 1/T and the
    potential is evaluated at scaled times t/T); otherwise dt = 1.
    """
    total = 0.0
    for traj in trajectories:
        horizon = traj.horizon
        dt = 1.0 / horizon if unit_time else 1.0
        acc = 0.0
        for state in traj.states[:-1]:
            g = bank.grad_z(k, state.z, state.t * dt)
            acc += 0.5 * float(np.sum(g * g)) * dt
        total += acc
    return total / len(trajectories)


@dataclass
class FlowGridReport:
    """Outcome of comparing particle-tracked densities to the grid solver."""

    max_abs_err: float
    flow_integral: float
    grid_mass: float
    particles: np.ndarray
    flow_density: np.ndarray
    grid_density: np.ndarray


def compare_flow_to_grid(
    bank,
    k: int,
    horizon: int,
    cells: int = 512,
    lo: float = -6.0,
    hi: float = 6.0,
    n_particles: int = 2048,
    span: float = 5.0,
) -> FlowGridReport:
    """Runs the 1D flow and the grid continuity solver side by side.

    Particles start on a deterministic lattice under N(0,1) with exact initial
    log-densities; the grid starts from the discretized N(0,1) and is advected
    with the same velocity field, frozen over each unit interval (matching the
    flow's one-step-per-unit-time discretization), using CFL-limited substeps.
    """
    z = np.linspace(-span, span, n_particles)[:, None]
    log_q = -0.5 * (z[:, 0] ** 2 + math.log(2.0 * math.pi))
    grid = gaussian_grid_1d(lo, hi, cells)
    h = grid.widths[0]
    for step in range(horizon):
        z, log_q = flows.advect_batch(bank, k, z, log_q, step)
        v_grid = bank.grad_z(k, grid.centers(0)[:, None], float(step))[:, 0]
        vmax = float(np.max(np.abs(v_grid)))
        n_sub = max(1, int(math.ceil(vmax / (0.45 * h))))
        frozen = lambda x, t, s=step: bank.grad_z(k, np.asarray(x)[:, None], float(s))[:, 0]
        grid = grid_advect_density(grid, frozen, 1.0 / n_sub, n_sub)
    flow_density = np.exp(log_q)
    grid_at_particles = grid.interp_density(z[:, 0])
    order = np.argsort(z[:, 0])
    zs = z[order, 0]
    flow_integral = float(np.trapezoid(flow_density[order], zs))
    return FlowGridReport(
        max_abs_err=float(np.max(np.abs(flow_density - grid_at_particles))),
        flow_integral=flow_integral,
        grid_mass=grid.total_mass(),
        particles=z[:, 0],
        flow_density=flow_density,
        grid_density=grid_at_particles,
    )
