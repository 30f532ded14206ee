"""Flow-factorized representation learning at desk scale.

Latent samples move along the gradient fields of K learned time-dependent
potentials; their densities are tracked through the change-of-variables
correction; a sequence VAE trains everything with supervised or
weakly-supervised ELBOs plus a Hamilton-Jacobi PINN penalty; grid PDE solvers
and the closed-form Gaussian Wasserstein-2 distance verify the flows
independently.
"""

from .flows import FlowState, FlowTrajectory, SingularStepError, advect, evolve_posterior, prior_logpdf, step_kl_term
from .hj import hj_loss, hj_residual
from .nn import MlpParams, ShapeError, init_mlp, mlp_forward, mlp_grad_input, mlp_hessian_input, mlp_param_gradients, sinusoidal_embed
from .oracle import CflError, DensityGrid, gaussian_w2, grid_advect_density, grid_diffuse_density, transport_cost
from .potentials import PotentialBank, init_potential_bank
from .training import AdamState, ModelCheckpoint, TrainConfig, adam_step, load_checkpoint, save_checkpoint, train
from .vae import FlowVae, GumbelState, anneal_tau, elbo_supervised, elbo_weak, gumbel_softmax, init_flow_vae

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "CflError",
    "DensityGrid",
    "FlowState",
    "FlowTrajectory",
    "FlowVae",
    "GumbelState",
    "MlpParams",
    "ModelCheckpoint",
    "PotentialBank",
    "ShapeError",
    "SingularStepError",
    "TrainConfig",
    "adam_step",
    "advect",
    "anneal_tau",
    "elbo_supervised",
    "elbo_weak",
    "evolve_posterior",
    "gaussian_w2",
    "grid_advect_density",
    "grid_diffuse_density",
    "gumbel_softmax",
    "hj_loss",
    "hj_residual",
    "init_flow_vae",
    "init_mlp",
    "init_potential_bank",
    "load_checkpoint",
    "mlp_forward",
    "mlp_grad_input",
    "mlp_hessian_input",
    "mlp_param_gradients",
    "prior_logpdf",
    "save_checkpoint",
    "sinusoidal_embed",
    "step_kl_term",
    "train",
    "transport_cost",
]
