"""Latent sample advection with tracked log-density, and the diffused prior.

A flow step moves a sample along the gradient field of a potential and updates
its tracked posterior log-density by the log-determinant of the step Jacobian,
log|det(I + dt * H)|. The prior follows the closed-form heat kernel
N(0, (1 + 2 D_k t) I) grown from a standard-normal start.

``bank`` everywhere is anything exposing grad_z / hessian_z / diffusion
(duck-typed; tests use quadratic doubles with known pushforwards).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SINGULAR_DET_THRESHOLD = 1e-12


class SingularStepError(RuntimeError):
    """A flow step whose Jacobian determinant is not safely positive."""

    def __init__(self, step: int, det: float):
        super().__init__(
            f"non-invertible step at t={step}: det(I + H) = {det:.3e} "
            f"<= {SINGULAR_DET_THRESHOLD}"
        )
        self.step = step
        self.det = det


@dataclass
class FlowState:
    z: np.ndarray  # (d,)
    log_q: float
    t: int

    def __post_init__(self):
        self.z = np.asarray(self.z)
        if not (np.all(np.isfinite(self.z)) and math.isfinite(self.log_q)):
            raise ValueError("flow state contains non-finite values")
        if self.t < 0:
            raise ValueError(f"flow state timestep must be >= 0, got {self.t}")


@dataclass
class FlowTrajectory:
    states: list[FlowState]
    k: int

    def __len__(self) -> int:
        return len(self.states)

    @property
    def horizon(self) -> int:
        return len(self.states) - 1


def advect(bank, k: int, state: FlowState, dt: float = 1.0) -> FlowState:
    """One flow step: z' = z + dt * grad_u, log_q' = log_q - log det(I + dt * H).

    The potential is evaluated at the state's own time (state.t * dt).
    """
    time = state.t * dt
    grad = bank.grad_z(k, state.z, time)
    hess = bank.hessian_z(k, state.z, time)
    jac = np.eye(state.z.shape[0], dtype=state.z.dtype) + dt * hess
    sign, logabs = np.linalg.slogdet(jac)
    det = sign * np.exp(logabs)
    if det <= SINGULAR_DET_THRESHOLD:
        raise SingularStepError(state.t, det)
    return FlowState(state.z + dt * grad, state.log_q - logabs, state.t + 1)


def evolve_posterior(
    bank, k: int, z0: np.ndarray, log_q0: float, horizon: int, dt: float = 1.0
) -> FlowTrajectory:
    """Iterate advect for `horizon` steps; returns the length-(horizon+1) trajectory."""
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    states = [FlowState(np.asarray(z0), float(log_q0), 0)]
    for _ in range(horizon):
        states.append(advect(bank, k, states[-1], dt=dt))
    return FlowTrajectory(states, k)


def advect_batch(
    bank, k: int, z: np.ndarray, log_q: np.ndarray, t: int, dt: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized advect over a batch (B, d); used by oracles and evaluation."""
    time = t * dt
    grad = bank.grad_z(k, z, time)
    hess = bank.hessian_z(k, z, time)
    jac = np.eye(z.shape[1], dtype=z.dtype) + dt * hess
    sign, logabs = np.linalg.slogdet(jac)
    det = sign * np.exp(logabs)
    bad = det <= SINGULAR_DET_THRESHOLD
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise SingularStepError(t, float(det[idx]))
    return z + dt * grad, log_q - logabs


def prior_logpdf(bank, k: int, z: np.ndarray, t: float) -> np.ndarray:
    """Heat-kernel prior: log N(z; 0, (1 + 2 D_k t) I)."""
    if t < 0:
        raise ValueError(f"prior time must be >= 0, got {t}")
    z = np.asarray(z)
    var = 1.0 + 2.0 * bank.diffusion(k) * t
    d = z.shape[-1]
    sq = np.sum(z * z, axis=-1)
    return -0.5 * (d * math.log(2.0 * math.pi * var) + sq / var)


def step_kl_term(bank, k: int, state_after: FlowState) -> float:
    """Single-sample KL estimate at one step: log q(z_t) - log p(z_t, t)."""
    return float(state_after.log_q - prior_logpdf(bank, k, state_after.z, state_after.t))
