"""Sequence VAE: convolutional encoder/decoder, sequence classifier,
Gumbel-Softmax reparameterization, and both sequence ELBOs.

The encoder sees only the first frame; later latents come from advecting its
sample through a potential bank while tracking the posterior log-density. The
supervised ELBO is

    sum_t recon(x_t, decode(z_t)) - KL[q(z_0|x_0) || N(0,I)]
        - sum_{t>=1} (log q(z_t) - log p(z_t, t)),

and the weakly-supervised ELBO evaluates it under a straight-through
Gumbel-Softmax sample of the transformation index, minus
KL[q(k|x_bar) || uniform].

Forward passes are built on the tape so evaluation and training share one
code path; ``elbo_*`` return plain floats, ``t_sequence_graph`` returns the
differentiable graph used by the trainer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tape
from .flows import SINGULAR_DET_THRESHOLD, SingularStepError
from .nn import ShapeError, check_finite
from .potentials import BankVars, PotentialBank, t_potential_bundle, t_force
from .tape import Var

CLAMP_EPS = 1e-6
TAU_FLOOR = 0.05
TAU_ANNEAL_RATE = 3e-5


# -- parameter containers -------------------------------------------------------


@dataclass
class ConvLayer:
    weight: np.ndarray  # conv: (O, C, k, k); transposed: (C_in, C_out, k, k)
    bias: np.ndarray


@dataclass
class EncoderParams:
    convs: list[ConvLayer]
    head_w: np.ndarray  # (2d, flat)
    head_b: np.ndarray
    image_shape: tuple[int, int, int]
    latent_dim: int


@dataclass
class DecoderParams:
    head_w: np.ndarray  # (flat, d)
    head_b: np.ndarray
    convs: list[ConvLayer]
    out_pads: list[int]
    image_shape: tuple[int, int, int]
    latent_dim: int


@dataclass
class ClassifierParams:
    convs: list[ConvLayer]
    head_w: np.ndarray  # (K, flat)
    head_b: np.ndarray
    image_shape: tuple[int, int, int]
    k_count: int


@dataclass
class FlowVae:
    encoder: EncoderParams
    decoder: DecoderParams
    classifier: ClassifierParams | None = None

    @property
    def latent_dim(self) -> int:
        return self.encoder.latent_dim

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.encoder.image_shape


def conv_spatial_plan(size: int, n_layers: int = 4) -> list[int]:
    """Spatial extents through the stride-2 kernel-4 pad-1 conv stack."""
    plan = [size]
    for _ in range(n_layers):
        nxt = (plan[-1] + 2 - 4) // 2 + 1
        if nxt < 1:
            raise ShapeError(f"image size {size} too small for {n_layers} conv layers")
        plan.append(nxt)
    return plan


def _deconv_out_pads(plan: list[int]) -> list[int]:
    pads = []
    rev = plan[::-1]
    for cur, target in zip(rev, rev[1:]):
        pads.append(target - ((cur - 1) * 2 - 2 + 4))
    return pads


def _conv_bias(rng, n, dtype):
    # tiny random bias keeps ReLU preactivations off the exact-zero knife edge
    return (rng.standard_normal(n) * 0.01).astype(dtype)


def init_encoder(
    rng, image_shape, latent_dim, channels=(8, 16, 32, 64), dtype=np.float64
) -> EncoderParams:
    c0, size, _ = image_shape
    plan = conv_spatial_plan(size)
    chans = [c0, *channels]
    convs = []
    for cin, cout in zip(chans, chans[1:]):
        std = math.sqrt(2.0 / (cin * 16))
        convs.append(
            ConvLayer(
                (rng.standard_normal((cout, cin, 4, 4)) * std).astype(dtype),
                _conv_bias(rng, cout, dtype),
            )
        )
    flat = channels[-1] * plan[-1] * plan[-1]
    head_w = (rng.standard_normal((2 * latent_dim, flat)) / math.sqrt(flat)).astype(dtype)
    return EncoderParams(convs, head_w, np.zeros(2 * latent_dim, dtype=dtype), image_shape, latent_dim)


def init_decoder(
    rng, image_shape, latent_dim, channels=(8, 16, 32, 64), dtype=np.float64
) -> DecoderParams:
    c0, size, _ = image_shape
    plan = conv_spatial_plan(size)
    chans = [*reversed(channels), c0]
    flat = chans[0] * plan[-1] * plan[-1]
    head_w = (rng.standard_normal((flat, latent_dim)) / math.sqrt(latent_dim)).astype(dtype)
    convs = []
    for cin, cout in zip(chans, chans[1:]):
        std = math.sqrt(2.0 / (cin * 16))
        convs.append(
            ConvLayer(
                (rng.standard_normal((cin, cout, 4, 4)) * std).astype(dtype),
                _conv_bias(rng, cout, dtype),
            )
        )
    return DecoderParams(
        head_w, np.zeros(flat, dtype=dtype), convs, _deconv_out_pads(plan), image_shape, latent_dim
    )


def init_classifier(
    rng, image_shape, k_count, channels=(8, 16, 32, 64), dtype=np.float64
) -> ClassifierParams:
    c0, size, _ = image_shape
    plan = conv_spatial_plan(size)
    chans = [c0, *channels]
    convs = []
    for cin, cout in zip(chans, chans[1:]):
        std = math.sqrt(2.0 / (cin * 16))
        convs.append(
            ConvLayer(
                (rng.standard_normal((cout, cin, 4, 4)) * std).astype(dtype),
                _conv_bias(rng, cout, dtype),
            )
        )
    flat = channels[-1] * plan[-1] * plan[-1]
    head_w = (rng.standard_normal((k_count, flat)) / math.sqrt(flat)).astype(dtype)
    return ClassifierParams(convs, head_w, np.zeros(k_count, dtype=dtype), image_shape, k_count)


def init_flow_vae(
    rng, image_shape, latent_dim, k_count=None, channels=(8, 16, 32, 64), dtype=np.float64
) -> FlowVae:
    cls = (
        init_classifier(rng, image_shape, k_count, channels, dtype)
        if k_count is not None
        else None
    )
    return FlowVae(
        init_encoder(rng, image_shape, latent_dim, channels, dtype),
        init_decoder(rng, image_shape, latent_dim, channels, dtype),
        cls,
    )


# -- taped mirrors ----------------------------------------------------------------


@dataclass
class ConvVars:
    weights: list[Var]
    biases: list[Var]


@dataclass
class EncVars:
    convs: ConvVars
    head_w: Var
    head_b: Var
    params: EncoderParams

    @classmethod
    def from_params(cls, p: EncoderParams) -> "EncVars":
        return cls(
            ConvVars([Var(c.weight) for c in p.convs], [Var(c.bias) for c in p.convs]),
            Var(p.head_w),
            Var(p.head_b),
            p,
        )


@dataclass
class DecVars:
    head_w: Var
    head_b: Var
    convs: ConvVars
    params: DecoderParams

    @classmethod
    def from_params(cls, p: DecoderParams) -> "DecVars":
        return cls(
            Var(p.head_w),
            Var(p.head_b),
            ConvVars([Var(c.weight) for c in p.convs], [Var(c.bias) for c in p.convs]),
            p,
        )


@dataclass
class ClsVars:
    convs: ConvVars
    head_w: Var
    head_b: Var
    params: ClassifierParams

    @classmethod
    def from_params(cls, p: ClassifierParams) -> "ClsVars":
        return cls(
            ConvVars([Var(c.weight) for c in p.convs], [Var(c.bias) for c in p.convs]),
            Var(p.head_w),
            Var(p.head_b),
            p,
        )


@dataclass
class VaeVars:
    encoder: EncVars
    decoder: DecVars
    classifier: ClsVars | None
    model: FlowVae

    @classmethod
    def from_model(cls, m: FlowVae) -> "VaeVars":
        return cls(
            EncVars.from_params(m.encoder),
            DecVars.from_params(m.decoder),
            ClsVars.from_params(m.classifier) if m.classifier is not None else None,
            m,
        )


def _t_conv_stack(convs: ConvVars, x: Var) -> Var:
    """Conv -> ReLU blocks; ReLU also after the last conv (head follows)."""
    h = x
    for w, b in zip(convs.weights, convs.biases):
        h = tape.relu(tape.conv2d(h, w, b, stride=2, pad=1))
    return h


def t_encode(enc: EncVars, x: Var) -> tuple[Var, Var]:
    h = _t_conv_stack(enc.convs, x)
    b = x.value.shape[0]
    flat = tape.reshape(h, (b, -1))
    out = tape.matmul(flat, tape.transpose_last2(enc.head_w)) + enc.head_b
    d = enc.params.latent_dim
    return tape.narrow(out, 1, 0, d), tape.narrow(out, 1, d, d)


def t_decode(dec: DecVars, z: Var) -> Var:
    """Returns pixel means in (0, 1): sigmoid of the transposed-conv logits."""
    b = z.value.shape[0]
    h = tape.matmul(z, tape.transpose_last2(dec.head_w)) + dec.head_b
    plan = conv_spatial_plan(dec.params.image_shape[1])
    c0 = dec.params.convs[0].weight.shape[0]
    h = tape.reshape(h, (b, c0, plan[-1], plan[-1]))
    n = len(dec.convs.weights)
    for i, (w, bia, op) in enumerate(zip(dec.convs.weights, dec.convs.biases, dec.params.out_pads)):
        h = tape.conv2d_transpose(h, w, bia, stride=2, pad=1, out_pad=op)
        if i < n - 1:
            h = tape.relu(h)
    return tape.sigmoid(h)


def t_classify(cls: ClsVars, x_first: Var, x_last: Var) -> Var:
    diff = x_last - x_first
    h = _t_conv_stack(cls.convs, diff)
    b = diff.value.shape[0]
    flat = tape.reshape(h, (b, -1))
    return tape.matmul(flat, tape.transpose_last2(cls.head_w)) + cls.head_b


def t_recon_loglik(x: np.ndarray, x_hat: Var) -> Var:
    """Bernoulli log-likelihood per batch row; x_hat clamped to [eps, 1-eps]."""
    xh = tape.clip(x_hat, CLAMP_EPS, 1.0 - CLAMP_EPS)
    ll = x * tape.log(xh) + (1.0 - x) * tape.log(1.0 - xh)
    return tape.vsum(tape.reshape(ll, (x.shape[0], -1)), axis=1)


# -- numpy-facing wrappers ---------------------------------------------------------


def _as_image_batch(x: np.ndarray, image_shape) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected (C,H,W) or (B,C,H,W), got {x.shape}")


def encode(enc: EncoderParams, x0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xb, single = _as_image_batch(x0, enc.image_shape)
    check_finite("encoder input", xb)
    if xb.min() < 0.0 or xb.max() > 1.0:
        raise ValueError("encoder input pixels must lie in [0, 1]")
    xb = xb.astype(enc.head_w.dtype)
    mu, logvar = t_encode(EncVars.from_params(enc), Var(xb))
    return (mu.value[0], logvar.value[0]) if single else (mu.value, logvar.value)


def decode(dec: DecoderParams, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    single = z.ndim == 1
    zb = (z[None] if single else z).astype(dec.head_w.dtype)
    out = t_decode(DecVars.from_params(dec), Var(zb)).value
    return out[0] if single else out


def classify_sequence(cls: ClassifierParams, x_bar: np.ndarray) -> np.ndarray:
    x_bar = np.asarray(x_bar)
    single = x_bar.ndim == 4
    xb = x_bar[None] if single else x_bar
    if xb.shape[1] < 2:
        raise ShapeError(f"classifier needs sequences of length >= 2, got {xb.shape[1]}")
    xb = xb.astype(cls.head_w.dtype)
    logits = t_classify(ClsVars.from_params(cls), Var(xb[:, 0]), Var(xb[:, -1])).value
    return logits[0] if single else logits


def reparameterize(
    mu: np.ndarray, logvar: np.ndarray, noise: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """z0 = mu + exp(logvar/2) * noise and its Gaussian log-density at z0."""
    mu, logvar, noise = np.asarray(mu), np.asarray(logvar), np.asarray(noise)
    z0 = mu + np.exp(0.5 * logvar) * noise
    sq = (z0 - mu) ** 2 * np.exp(-logvar)
    log_q0 = -0.5 * np.sum(logvar + math.log(2.0 * math.pi) + sq, axis=-1)
    return z0, log_q0


def recon_loglik(x: np.ndarray, x_hat: np.ndarray) -> float | np.ndarray:
    x, x_hat = np.asarray(x), np.asarray(x_hat)
    if x.shape != x_hat.shape:
        raise ShapeError(f"reconstruction shape {x_hat.shape} does not match input {x.shape}")
    if x.min() < 0.0 or x.max() > 1.0 or x_hat.min() < 0.0 or x_hat.max() > 1.0:
        raise ValueError("reconstruction likelihood inputs must lie in [0, 1]")
    xh = np.clip(x_hat, CLAMP_EPS, 1.0 - CLAMP_EPS)
    ll = x * np.log(xh) + (1.0 - x) * np.log(1.0 - xh)
    if x.ndim == 4:
        return ll.reshape(x.shape[0], -1).sum(axis=1)
    return float(ll.sum())


def kl_standard_normal(mu: np.ndarray, logvar: np.ndarray) -> float | np.ndarray:
    kl = 0.5 * np.sum(mu**2 + np.exp(logvar) - 1.0 - logvar, axis=-1)
    return float(kl) if kl.ndim == 0 else kl


def categorical_kl_uniform(probs: np.ndarray) -> float | np.ndarray:
    probs = np.asarray(probs)
    k = probs.shape[-1]
    terms = np.where(probs > 0, probs * (np.log(np.where(probs > 0, probs, 1.0)) + math.log(k)), 0.0)
    out = terms.sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def sample_gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    return -np.log(-np.log(u + 1e-12) + 1e-12)


def gumbel_softmax(
    logits: np.ndarray, gumbels: np.ndarray, tau: float, hard: bool = False
) -> np.ndarray:
    """Relaxed categorical sample on the simplex; one-hot argmax when hard."""
    if tau <= 0:
        raise ValueError(f"gumbel temperature must be > 0, got {tau}")
    logits, gumbels = np.asarray(logits), np.asarray(gumbels)
    y = (logits + gumbels) / tau
    y = y - y.max(axis=-1, keepdims=True)
    e = np.exp(y)
    soft = e / e.sum(axis=-1, keepdims=True)
    if not hard:
        return soft
    hard_out = np.zeros_like(soft)
    idx = np.argmax(soft, axis=-1)
    np.put_along_axis(hard_out, np.expand_dims(idx, -1), 1.0, axis=-1)
    return hard_out


@dataclass
class GumbelState:
    iteration: int = 0
    rate: float = TAU_ANNEAL_RATE
    floor: float = TAU_FLOOR


def anneal_tau(state: GumbelState) -> float:
    """max(floor, exp(-rate * iteration)): starts at 1, settles at the floor."""
    if state.iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {state.iteration}")
    return max(state.floor, math.exp(-state.rate * state.iteration))


def t_gumbel_softmax(logits: Var, gumbels: np.ndarray, tau: float, hard: bool) -> Var:
    if tau <= 0:
        raise ValueError(f"gumbel temperature must be > 0, got {tau}")
    soft = tape.softmax((logits + gumbels) * (1.0 / tau), axis=-1)
    return tape.onehot_argmax_st(soft) if hard else soft


# -- the sequence graph -------------------------------------------------------------


@dataclass
class SequenceGraph:
    """Taped ELBO + HJ pieces for one batch of sequences (means over the batch)."""

    elbo: Var
    recon: Var
    kl0: Var
    kl_steps: Var
    hj: Var
    cat_kl: Var | None
    logits: Var | None
    weights: Var | None
    z_values: list[np.ndarray]


class _SingleField:
    """Rollout field for one fixed transformation index."""

    def __init__(self, bv: BankVars, k: int):
        self.bv, self.k = bv, k

    def pieces(self, z: Var, t: float, need_hessian: bool):
        bun = t_potential_bundle(self.bv, self.k, z, t, need_hessian=need_hessian)
        force = t_force(self.bv, self.k, z, t)
        return bun.grad_z, bun.hessian_z, bun.dt, force

    def diffusion(self, batch: int) -> Var:
        rho_k = tape.narrow(self.bv.rho, 0, self.k, 1)
        return tape.square(rho_k)  # (1,), broadcasts over the batch


class _MixtureField:
    """Rollout field mixing all K transformations with per-sequence weights."""

    def __init__(self, bv: BankVars, weights: Var):
        self.bv = bv
        self.weights = weights  # (B, K)
        self.k_count = weights.value.shape[1]

    def pieces(self, z: Var, t: float, need_hessian: bool):
        grad = hess = dt = force = None
        for j in range(self.k_count):
            yj = tape.narrow(self.weights, 1, j, 1)  # (B, 1)
            yflat = tape.vsum(yj, axis=1)  # (B,)
            bun = t_potential_bundle(self.bv, j, z, t, need_hessian=need_hessian)
            fj = t_force(self.bv, j, z, t)
            g = yj * bun.grad_z
            d = yflat * bun.dt
            f = yflat * fj
            grad = g if grad is None else grad + g
            dt = d if dt is None else dt + d
            force = f if force is None else force + f
            if need_hessian:
                h = tape._expand(yj, -1) * bun.hessian_z
                hess = h if hess is None else hess + h
        return grad, hess, dt, force

    def diffusion(self, batch: int) -> Var:
        d = None
        for j in range(self.k_count):
            yflat = tape.vsum(tape.narrow(self.weights, 1, j, 1), axis=1)
            dj = yflat * tape.square(tape.narrow(self.bv.rho, 0, j, 1))
            d = dj if d is None else d + dj
        return d  # (B,)


def _t_prior_logpdf(diff: Var, z: Var, t: float) -> Var:
    d = z.value.shape[1]
    var = 2.0 * t * diff + 1.0
    sq = tape.vsum(tape.square(z), axis=1)
    return -0.5 * (d * (tape.log(var) + math.log(2.0 * math.pi)) + sq / var)


def t_sequence_graph(
    mv: VaeVars,
    bv: BankVars,
    x_bar: np.ndarray,
    k_or_weights,
    noise: np.ndarray,
    lambda_hj: float = 1.0,
    gumbels: np.ndarray | None = None,
    tau: float = 1.0,
    hard: bool = True,
) -> SequenceGraph:
    """Builds the full taped objective for one batch.

    ``k_or_weights`` is an int for the supervised path or None for the weak
    path (classifier + Gumbel straight-through sample).
    """
    x_bar = np.asarray(x_bar)
    batch, horizon_plus = x_bar.shape[0], x_bar.shape[1]
    horizon = horizon_plus - 1
    dtype = mv.model.encoder.head_w.dtype
    x_bar = x_bar.astype(dtype)

    logits = weights = cat_kl = None
    if k_or_weights is None:
        if mv.classifier is None:
            raise ValueError("weak supervision requires a classifier")
        if gumbels is None:
            raise ValueError("weak supervision requires injected gumbel noise")
        logits = t_classify(mv.classifier, Var(x_bar[:, 0]), Var(x_bar[:, -1]))
        weights = t_gumbel_softmax(logits, gumbels.astype(dtype), tau, hard)
        log_soft = logits - tape._expand(tape.logsumexp(logits, axis=1), 1)
        probs = tape.exp(log_soft)
        cat_kl = tape.vmean(
            tape.vsum(probs * (log_soft + math.log(probs.value.shape[1])), axis=1)
        )
        field = _MixtureField(bv, weights)
    elif isinstance(k_or_weights, (int, np.integer)):
        field = _SingleField(bv, int(k_or_weights))
    else:
        weights = k_or_weights  # pre-built Var of mixture weights (tests)
        field = _MixtureField(bv, weights)

    mu, logvar = t_encode(mv.encoder, Var(x_bar[:, 0]))
    noise = noise.astype(dtype)
    z0 = mu + tape.exp(0.5 * logvar) * noise
    sq = tape.square(z0 - mu) * tape.exp(-logvar)
    log_q0 = -0.5 * tape.vsum(logvar + math.log(2.0 * math.pi) + sq, axis=1)
    kl0 = 0.5 * tape.vsum(tape.square(mu) + tape.exp(logvar) - 1.0 - logvar, axis=1)

    diff = field.diffusion(batch)
    z_list: list[Var] = [z0]
    log_q = log_q0
    kl_steps = None
    residual_sq = None
    ic_term = None
    z = z0
    for t in range(horizon + 1):
        need_h = t < horizon
        grad, hess, dt_u, force = field.pieces(z, float(t), need_h)
        if t == 0:
            ic_term = tape.vsum(tape.square(grad), axis=1)
        else:
            r = dt_u + 0.5 * tape.vsum(tape.square(grad), axis=1) - force
            rsq = tape.square(r)
            residual_sq = rsq if residual_sq is None else residual_sq + rsq
        if not need_h:
            break
        jac = hess + np.eye(z.value.shape[1], dtype=dtype)
        sign, logabs = np.linalg.slogdet(jac.value)
        det = sign * np.exp(logabs)
        if np.any(det <= SINGULAR_DET_THRESHOLD):
            raise SingularStepError(t, float(det.min()))
        log_q = log_q - tape.logdet(jac)
        z = z + grad
        z_list.append(z)
        step_kl = log_q - _t_prior_logpdf(diff, z, float(t + 1))
        kl_steps = step_kl if kl_steps is None else kl_steps + step_kl

    z_all = tape.concat(z_list, axis=0)  # ((T+1)*B, d)
    x_hat = t_decode(mv.decoder, z_all)
    x_stack = np.concatenate([x_bar[:, t] for t in range(horizon + 1)], axis=0)
    ll_flat = t_recon_loglik(x_stack, x_hat)  # ((T+1)*B,)
    recon = tape.vsum(tape.reshape(ll_flat, (horizon + 1, batch)), axis=0)

    if kl_steps is None:
        kl_steps = Var(np.zeros(batch, dtype=dtype))
    if residual_sq is None:
        hj_per_seq = ic_term
    else:
        hj_per_seq = residual_sq * (1.0 / horizon) + ic_term

    elbo_per_seq = recon - kl0 - kl_steps
    elbo = tape.vmean(elbo_per_seq)
    if cat_kl is not None:
        elbo = elbo - cat_kl

    return SequenceGraph(
        elbo=elbo,
        recon=tape.vmean(recon),
        kl0=tape.vmean(kl0),
        kl_steps=tape.vmean(kl_steps),
        hj=tape.vmean(hj_per_seq),
        cat_kl=cat_kl,
        logits=logits,
        weights=weights,
        z_values=[zv.value for zv in z_list],
    )


def _promote_sequence(x_bar, noise):
    x_bar = np.asarray(x_bar)
    noise = np.asarray(noise)
    if x_bar.ndim == 4:
        return x_bar[None], noise[None], True
    return x_bar, noise, False


def elbo_supervised(
    model: FlowVae, bank: PotentialBank, x_bar: np.ndarray, k: int, noise: np.ndarray
) -> tuple[float, dict]:
    """Sequence ELBO for a labeled sequence; returns (value, term breakdown)."""
    xb, nb, _ = _promote_sequence(x_bar, noise)
    graph = t_sequence_graph(
        VaeVars.from_model(model), BankVars.from_bank(bank), xb, int(k), nb
    )
    parts = {
        "recon": float(graph.recon.value),
        "kl0": float(graph.kl0.value),
        "kl_steps": float(graph.kl_steps.value),
    }
    return float(graph.elbo.value), parts


def elbo_weak(
    model: FlowVae,
    bank: PotentialBank,
    x_bar: np.ndarray,
    noise: np.ndarray,
    gumbels: np.ndarray,
    tau: float,
    hard: bool = True,
) -> tuple[float, dict]:
    """Weakly-supervised ELBO with a straight-through Gumbel sample of k."""
    xb, nb, _ = _promote_sequence(x_bar, noise)
    gb = np.asarray(gumbels)
    if gb.ndim == 1:
        gb = gb[None]
    graph = t_sequence_graph(
        VaeVars.from_model(model),
        BankVars.from_bank(bank),
        xb,
        None,
        nb,
        gumbels=gb,
        tau=tau,
        hard=hard,
    )
    parts = {
        "recon": float(graph.recon.value),
        "kl0": float(graph.kl0.value),
        "kl_steps": float(graph.kl_steps.value),
        "cat_kl": float(graph.cat_kl.value),
        "k_hat": np.argmax(graph.weights.value, axis=-1),
    }
    return float(graph.elbo.value), parts
