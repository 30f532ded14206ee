"""Generalized Hamilton-Jacobi residual and its collocation (PINN) loss.

The residual r = du/dt + 0.5 |grad_z u|^2 - f measures how far a potential is
from the optimal-transport optimality condition; the loss averages squared
residuals along a posterior trajectory and anchors the t=0 velocity at zero.
"""

from __future__ import annotations

import numpy as np

from . import tape
from .flows import FlowTrajectory
from .potentials import BankVars, PotentialBundle, t_force, t_potential_bundle
from .tape import Var


def hj_residual(bank, k: int, z: np.ndarray, t: float) -> np.ndarray:
    """r(z, t); scalar for a single z, (B,) for a batch."""
    grad = bank.grad_z(k, z, t)
    kinetic = 0.5 * np.sum(grad * grad, axis=-1)
    return bank.time_derivative(k, z, t) + kinetic - bank.force(k, z, t)


def hj_loss(bank, k: int, trajectory: FlowTrajectory, dt: float = 1.0) -> float:
    """(1/T) sum_{t=1..T} r(z_t, t)^2 + |grad_z u(z_0, 0)|^2.

    Residuals are evaluated at the trajectory's own states; ``dt`` rescales
    state indices to physical times for unit-time-normalized flows.
    """
    horizon = trajectory.horizon
    if horizon < 1:
        raise ValueError("hj_loss needs a trajectory with at least one step")
    acc = 0.0
    for state in trajectory.states[1:]:
        r = hj_residual(bank, k, state.z, state.t * dt)
        acc += float(r) ** 2
    g0 = bank.grad_z(k, trajectory.states[0].z, 0.0)
    return acc / horizon + float(np.sum(g0 * g0))


def t_residual(bundle: PotentialBundle, force: Var) -> Var:
    """Taped residual from an already-built potential bundle; (B,)."""
    kinetic = 0.5 * tape.vsum(tape.square(bundle.grad_z), axis=1)
    return bundle.dt + kinetic - force


def t_hj_loss(bv: BankVars, k: int, z0: np.ndarray, horizon: int) -> Var:
    """Taped hj_loss along the flow's own rollout from the (B, d) starts z0.

    Mirrors hj_loss over evolve_posterior exactly, but differentiable in the
    bank parameters (including the trajectory's dependence on them).
    """
    if horizon < 1:
        raise ValueError("t_hj_loss needs horizon >= 1")
    z = Var(np.asarray(z0))
    residual_sq = None
    ic = None
    for t in range(horizon + 1):
        need_step = t < horizon
        bundle = t_potential_bundle(bv, k, z, float(t), need_hessian=False)
        if t == 0:
            ic = tape.vsum(tape.square(bundle.grad_z), axis=1)
        else:
            rsq = tape.square(t_residual(bundle, t_force(bv, k, z, float(t))))
            residual_sq = rsq if residual_sq is None else residual_sq + rsq
        if need_step:
            z = z + bundle.grad_z
    return tape.vmean(residual_sq * (1.0 / horizon) + ic)
