"""Time-dependent potential and force fields over latent space.

A bank holds K scalar potential networks u_k([z; embed(t)]), K force networks
of the same architecture (squared and negated so forces are always <= 0), and
K diffusion pre-parameters rho_k with D_k = rho_k^2.

Two parallel routes are provided for every quantity: plain-numpy closed forms
(via ``nn``) used by evaluation and the verification oracles, and tape-graph
builders (prefixed ``t_``) used when parameter gradients of composite losses
are needed. Tests pin both routes against each other and against finite
differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn, tape
from .nn import MlpParams
from .tape import Var


@dataclass
class PotentialBank:
    potentials: list[MlpParams]
    forces: list[MlpParams]
    rho: np.ndarray  # (K,), diffusion pre-parameters; D_k = rho_k^2
    latent_dim: int
    emb_dim: int
    emb_base: float = 10000.0
    force_disabled: bool = False  # ordinary-HJ ablation: f == 0

    @property
    def k_count(self) -> int:
        return len(self.potentials)

    def _check_index(self, k: int) -> None:
        if not 0 <= k < self.k_count:
            raise IndexError(f"transformation index {k} out of range [0, {self.k_count})")

    def _net_input(self, z: np.ndarray, t: float) -> np.ndarray:
        z = np.asarray(z)
        emb = nn.sinusoidal_embed(t, self.emb_dim, self.emb_base).astype(z.dtype)
        if z.ndim == 1:
            return np.concatenate([z, emb])
        return np.concatenate([z, np.broadcast_to(emb, (z.shape[0], self.emb_dim))], axis=1)

    # -- closed-form route ----------------------------------------------------

    def value(self, k: int, z: np.ndarray, t: float) -> np.ndarray:
        self._check_index(k)
        out = nn.mlp_forward(self.potentials[k], self._net_input(z, t))
        return out[..., 0]

    def grad_z(self, k: int, z: np.ndarray, t: float) -> np.ndarray:
        self._check_index(k)
        g = nn.mlp_grad_input(self.potentials[k], self._net_input(z, t))
        return g[..., : self.latent_dim]

    def hessian_z(self, k: int, z: np.ndarray, t: float) -> np.ndarray:
        self._check_index(k)
        return nn.mlp_hessian_input(
            self.potentials[k], self._net_input(z, t), wrt_dims=self.latent_dim
        )

    def time_derivative(self, k: int, z: np.ndarray, t: float) -> np.ndarray:
        """Exact du/dt through the sinusoidal embedding."""
        self._check_index(k)
        g = nn.mlp_grad_input(self.potentials[k], self._net_input(z, t))
        demb = nn.sinusoidal_embed_dt(t, self.emb_dim, self.emb_base)
        return g[..., self.latent_dim :] @ demb

    def force_raw(self, k: int, z: np.ndarray, t: float) -> np.ndarray:
        self._check_index(k)
        out = nn.mlp_forward(self.forces[k], self._net_input(z, t))
        return out[..., 0]

    def force(self, k: int, z: np.ndarray, t: float) -> np.ndarray:
        """External driving force -(raw MLP)^2; identically 0 when disabled."""
        self._check_index(k)
        if self.force_disabled:
            z = np.asarray(z)
            return np.zeros(z.shape[:-1], dtype=z.dtype)
        raw = self.force_raw(k, z, t)
        return -(raw * raw)

    def diffusion(self, k: int) -> float:
        self._check_index(k)
        return float(self.rho[k] ** 2)


def init_potential_bank(
    rng: np.random.Generator,
    k_count: int,
    latent_dim: int,
    emb_dim: int = 8,
    hidden: tuple[int, ...] = (128, 128),
    scale: float = 1.0,
    final_scale: float | None = None,
    rho_init: float = 0.0,
    dtype=np.float64,
    force_disabled: bool = False,
) -> PotentialBank:
    """Fresh bank; potential and force nets share the architecture, D_k starts at rho_init^2.

    ``final_scale=0.0`` makes every potential start as the zero field
    (identity flow), which keeps early training steps trivially invertible.
    """
    sizes = [latent_dim + emb_dim, *hidden, 1]
    potentials = [
        nn.init_mlp(rng, sizes, scale=scale, final_scale=final_scale, dtype=dtype)
        for _ in range(k_count)
    ]
    forces = [
        nn.init_mlp(rng, sizes, scale=scale, final_scale=final_scale, dtype=dtype)
        for _ in range(k_count)
    ]
    rho = np.full(k_count, rho_init, dtype=dtype)
    return PotentialBank(potentials, forces, rho, latent_dim, emb_dim, force_disabled=force_disabled)


# -- taped route ---------------------------------------------------------------


@dataclass
class MlpVars:
    """Tape-graph mirror of MlpParams: weights and biases as Var leaves."""

    weights: list[Var]
    biases: list[Var]
    activations: list[str]

    @classmethod
    def from_params(cls, params: MlpParams) -> "MlpVars":
        return cls(
            [Var(l.weight) for l in params.layers],
            [Var(l.bias) for l in params.layers],
            [l.activation for l in params.layers],
        )


@dataclass
class BankVars:
    potentials: list[MlpVars]
    forces: list[MlpVars]
    rho: Var
    bank: PotentialBank = field(repr=False)

    @classmethod
    def from_bank(cls, bank: PotentialBank) -> "BankVars":
        return cls(
            [MlpVars.from_params(p) for p in bank.potentials],
            [MlpVars.from_params(f) for f in bank.forces],
            Var(bank.rho),
            bank,
        )


def t_mlp_trace(net: MlpVars, x: Var) -> tuple[list[Var], list[Var]]:
    """Taped forward pass; returns (pre-activations, post-activations incl. input)."""
    pre, post = [], [x]
    h = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        a = tape.matmul(h, tape.transpose_last2(w)) + b
        h = tape.tanh(a) if act == nn.TANH else a
        pre.append(a)
        post.append(h)
    return pre, post


def t_mlp_forward(net: MlpVars, x: Var) -> Var:
    return t_mlp_trace(net, x)[1][-1]


def t_mlp_input_grad(net: MlpVars, x: Var, pre: list[Var] | None = None) -> Var:
    """Taped d(out)/d(in) for scalar-output nets, shaped (B, n)."""
    if pre is None:
        pre, _ = t_mlp_trace(net, x)
    batch = x.value.shape[0]
    last = len(net.weights) - 1
    if net.activations[last] == nn.TANH:
        delta = tape.tanh_d1(pre[last])
    else:
        delta = Var(np.ones((batch, 1), dtype=x.value.dtype))
    for idx in range(last - 1, -1, -1):
        delta = tape.matmul(delta, net.weights[idx + 1])
        if net.activations[idx] == nn.TANH:
            delta = delta * tape.tanh_d1(pre[idx])
    return tape.matmul(delta, net.weights[0])


def t_mlp_hessian_block(
    net: MlpVars, x: Var, wrt: int, pre: list[Var] | None = None
) -> Var:
    """Taped input Hessian over the first ``wrt`` inputs, shaped (B, wrt, wrt)."""
    if pre is None:
        pre, _ = t_mlp_trace(net, x)
    batch = x.value.shape[0]
    dtype = x.value.dtype
    n_layers = len(net.weights)

    # pre-activation Jacobians A_l restricted to the z block
    jac = [tape.narrow(net.weights[0], 1, 0, wrt)]  # (n_1, wrt), batch-shared
    for idx in range(1, n_layers):
        j_post = jac[-1]
        if net.activations[idx - 1] == nn.TANH:
            d1 = tape._expand(tape.tanh_d1(pre[idx - 1]), -1)
            j_post = d1 * j_post
        jac.append(tape.matmul(net.weights[idx], j_post))

    # gradients w.r.t. post-activations, walking backwards
    g_post: list[Var | None] = [None] * n_layers
    g: Var = Var(np.ones((batch, 1), dtype=dtype))
    for idx in range(n_layers - 1, -1, -1):
        g_post[idx] = g
        delta = g * tape.tanh_d1(pre[idx]) if net.activations[idx] == nn.TANH else g
        g = tape.matmul(delta, net.weights[idx])

    hess: Var | None = None
    for idx in range(n_layers):
        if net.activations[idx] != nn.TANH:
            continue
        w = g_post[idx] * tape.tanh_d2(pre[idx])  # (B, n_l)
        weighted = tape._expand(w, -1) * jac[idx]
        term = tape.matmul(tape.transpose_last2(jac[idx]), weighted)
        hess = term if hess is None else hess + term
    if hess is None:
        hess = Var(np.zeros((batch, wrt, wrt), dtype=dtype))
    return hess


@dataclass
class PotentialBundle:
    """Every taped quantity the flow and HJ losses need at one (z, t)."""

    value: Var  # (B,)
    grad_z: Var  # (B, d)
    hessian_z: Var | None  # (B, d, d)
    dt: Var  # (B,)


def t_net_input(bank: PotentialBank, z: Var, t: float) -> Var:
    emb = nn.sinusoidal_embed(t, bank.emb_dim, bank.emb_base).astype(z.value.dtype)
    emb_b = np.broadcast_to(emb, (z.value.shape[0], bank.emb_dim))
    return tape.concat([z, Var(emb_b)], axis=1)


def t_potential_bundle(
    bv: BankVars, k: int, z: Var, t: float, need_hessian: bool = True
) -> PotentialBundle:
    bank = bv.bank
    bank._check_index(k)
    net = bv.potentials[k]
    x = t_net_input(bank, z, t)
    pre, post = t_mlp_trace(net, x)
    full_grad = t_mlp_input_grad(net, x, pre)
    grad_z = tape.narrow(full_grad, 1, 0, bank.latent_dim)
    demb = nn.sinusoidal_embed_dt(t, bank.emb_dim, bank.emb_base).astype(z.value.dtype)
    grad_t = tape.narrow(full_grad, 1, bank.latent_dim, bank.emb_dim)
    dt = tape.vsum(grad_t * demb, axis=1)
    hess = (
        t_mlp_hessian_block(net, x, bank.latent_dim, pre) if need_hessian else None
    )
    value = tape.narrow(post[-1], 1, 0, 1)
    return PotentialBundle(tape.vsum(value, axis=1), grad_z, hess, dt)


def t_force(bv: BankVars, k: int, z: Var, t: float) -> Var:
    """Taped force value (B,); respects the ordinary-HJ toggle."""
    bank = bv.bank
    bank._check_index(k)
    if bank.force_disabled:
        return Var(np.zeros(z.value.shape[0], dtype=z.value.dtype))
    raw = t_mlp_forward(bv.forces[k], t_net_input(bank, z, t))
    return -tape.vsum(tape.square(raw), axis=1)


def t_diffusion(bv: BankVars, k: int) -> Var:
    bv.bank._check_index(k)
    return tape.vsum(tape.square(tape.narrow(bv.rho, 0, k, 1)))
