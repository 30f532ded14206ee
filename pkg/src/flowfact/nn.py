"""Small dense MLPs with exact analytic derivatives.

Everything here is closed-form: forward passes, input gradients, full input
Hessians, time-embedding derivatives and parameter gradients are computed from
the layered chain rule directly, so they can serve as ground truth for the
rest of the package. Arrays are plain numpy; inputs may be a single vector
``(n,)`` or a batch ``(B, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TANH = "tanh"
IDENTITY = "identity"

# Full input Hessians cost O(d^2) memory and an O(d^3) determinant downstream.
HESSIAN_DIM_GUARD = 64


class ShapeError(ValueError):
    """Raised when array extents are incompatible with an operation."""


def check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _act(a: np.ndarray, kind: str) -> np.ndarray:
    if kind == TANH:
        return np.tanh(a)
    if kind == IDENTITY:
        return a
    raise ValueError(f"unknown activation {kind!r}")


def _act_d1(a: np.ndarray, kind: str) -> np.ndarray:
    if kind == TANH:
        t = np.tanh(a)
        return 1.0 - t * t
    return np.ones_like(a)


def _act_d2(a: np.ndarray, kind: str) -> np.ndarray:
    if kind == TANH:
        t = np.tanh(a)
        return -2.0 * t * (1.0 - t * t)
    return np.zeros_like(a)


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = TANH

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class MlpParams:
    """Stack of dense layers; the parameterization used by every potential,
    force and head network in the package."""

    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(
                    f"layer {i} outputs {a.out_dim} but layer {i + 1} expects {b.in_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def copy(self) -> "MlpParams":
        return MlpParams(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )


def init_mlp(
    rng: np.random.Generator,
    sizes: list[int],
    final_activation: str = IDENTITY,
    scale: float = 1.0,
    final_scale: float | None = None,
    dtype=np.float64,
) -> MlpParams:
    """Tanh net with identity (by default) final layer; weights ~ N(0, scale^2/fan_in).

    ``final_scale=0.0`` zeroes the last layer so the net starts as the constant
    zero function (gradients through earlier layers still flow).
    """
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        last = i == len(sizes) - 2
        s = final_scale if (last and final_scale is not None) else scale
        w = rng.standard_normal((n_out, n_in)) * (s / np.sqrt(n_in))
        act = final_activation if last else TANH
        layers.append(Layer(w.astype(dtype), np.zeros(n_out, dtype=dtype), act))
    return MlpParams(layers)


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ShapeError(f"expected vector or batch of vectors, got shape {x.shape}")


def _checked_batch(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, bool]:
    xb, single = _as_batch(x)
    if xb.shape[1] != params.in_dim:
        raise ShapeError(
            f"input has dimension {xb.shape[1]} but layer 0 expects {params.in_dim}"
        )
    return check_finite("mlp input", xb), single


def _forward_trace(params: MlpParams, xb: np.ndarray):
    """Returns (pre-activations per layer, post-activations per layer incl. input)."""
    pre = []
    post = [xb]
    h = xb
    for layer in params.layers:
        a = h @ layer.weight.T + layer.bias
        h = _act(a, layer.activation)
        pre.append(a)
        post.append(h)
    return pre, post


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Deterministic forward pass; returns (out,) or (B, out)."""
    xb, single = _checked_batch(params, x)
    _, post = _forward_trace(params, xb)
    out = post[-1]
    return out[0] if single else out


def _require_scalar(params: MlpParams, op: str):
    if params.out_dim != 1:
        raise ShapeError(f"{op} requires a scalar-output net, got {params.out_dim} outputs")


def mlp_grad_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Exact d(output)/d(input) of a scalar-output net; (n,) or (B, n)."""
    _require_scalar(params, "mlp_grad_input")
    xb, single = _checked_batch(params, x)
    pre, _ = _forward_trace(params, xb)
    delta = _act_d1(pre[-1], params.layers[-1].activation)  # d out / d pre_L
    for idx in range(len(params.layers) - 2, -1, -1):
        delta = (delta @ params.layers[idx + 1].weight) * _act_d1(
            pre[idx], params.layers[idx].activation
        )
    grad = delta @ params.layers[0].weight
    return grad[0] if single else grad


def mlp_hessian_input(
    params: MlpParams, x: np.ndarray, wrt_dims: int | None = None
) -> np.ndarray:
    """Exact symmetric input Hessian of a scalar-output net; (n, n) or (B, n, n).

    Only the elementwise activations contribute curvature, so
    H = sum_l A_l^T diag(g_l * act_l''(a_l)) A_l with A_l = d(pre_l)/dx and
    g_l = d(out)/d(post_l). With ``wrt_dims`` the Hessian is taken over the
    first ``wrt_dims`` input coordinates only (the rest held fixed).
    """
    _require_scalar(params, "mlp_hessian_input")
    xb, single = _checked_batch(params, x)
    n = params.in_dim if wrt_dims is None else wrt_dims
    if n > HESSIAN_DIM_GUARD:
        raise ShapeError(
            f"input dimension {n} exceeds Hessian guard {HESSIAN_DIM_GUARD}"
        )
    pre, _ = _forward_trace(params, xb)
    batch = xb.shape[0]

    # forward pass over Jacobians of pre-activations, restricted to wrt block
    w0 = params.layers[0].weight[:, :n]
    jac_pre = [np.broadcast_to(w0, (batch, *w0.shape))]  # A_l: (B, n_l, n)
    for idx in range(1, len(params.layers)):
        d1 = _act_d1(pre[idx - 1], params.layers[idx - 1].activation)
        j_post = d1[:, :, None] * jac_pre[-1]
        jac_pre.append(np.matmul(params.layers[idx].weight, j_post))

    # backward pass over gradients w.r.t. post-activations
    g_post = [None] * len(params.layers)  # g_l: (B, n_l)
    g = np.ones((batch, 1), dtype=xb.dtype)
    for idx in range(len(params.layers) - 1, -1, -1):
        g_post[idx] = g
        delta = g * _act_d1(pre[idx], params.layers[idx].activation)
        g = delta @ params.layers[idx].weight

    hess = np.zeros((batch, n, n), dtype=xb.dtype)
    for idx, layer in enumerate(params.layers):
        if layer.activation == IDENTITY:
            continue
        w = g_post[idx] * _act_d2(pre[idx], layer.activation)
        hess += np.einsum("bki,bk,bkj->bij", jac_pre[idx], w, jac_pre[idx])
    return hess[0] if single else hess


def mlp_param_gradients(
    params: MlpParams, x: np.ndarray, upstream: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Reverse-mode parameter gradients; returns [(dW, db)] per layer.

    ``upstream`` is d(loss)/d(output), shaped like the output (batch summed).
    """
    xb, single = _checked_batch(params, x)
    up = np.asarray(upstream)
    if single:
        up = up[None, :]
    if up.shape != (xb.shape[0], params.out_dim):
        raise ShapeError(
            f"upstream shape {np.asarray(upstream).shape} does not match output dim {params.out_dim}"
        )
    pre, post = _forward_trace(params, xb)
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.layers)
    delta = up * _act_d1(pre[-1], params.layers[-1].activation)
    for idx in range(len(params.layers) - 1, -1, -1):
        grads[idx] = (delta.T @ post[idx], delta.sum(axis=0))
        if idx > 0:
            delta = (delta @ params.layers[idx].weight) * _act_d1(
                pre[idx - 1], params.layers[idx - 1].activation
            )
    return grads


def sinusoidal_embed(t: float, dim: int, base: float = 10000.0) -> np.ndarray:
    """Positional embedding: interleaved (sin(t/w_i), cos(t/w_i)), w_i = base^(2i/dim)."""
    if dim % 2 != 0 or dim < 2:
        raise ShapeError(f"embedding dimension must be even and >= 2, got {dim}")
    i = np.arange(dim // 2, dtype=np.float64)
    omega = base ** (2.0 * i / dim)
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.sin(t / omega)
    out[1::2] = np.cos(t / omega)
    return out


def sinusoidal_embed_dt(t: float, dim: int, base: float = 10000.0) -> np.ndarray:
    """Closed-form d(embed)/dt for the embedding above."""
    if dim % 2 != 0 or dim < 2:
        raise ShapeError(f"embedding dimension must be even and >= 2, got {dim}")
    i = np.arange(dim // 2, dtype=np.float64)
    omega = base ** (2.0 * i / dim)
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.cos(t / omega) / omega
    out[1::2] = -np.sin(t / omega) / omega
    return out
