"""Training loop, Adam optimizer, configuration, and checkpointing.

Each iteration follows the same recipe: sample one transformation, build a
sequence batch, encode the first frame, roll the latent flow forward while
accumulating ELBO and Hamilton-Jacobi terms, take one Adam step. Everything is
a pure function of (config, seed): two runs with the same pair produce
bit-identical checkpoints.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import data, tape, vae
from .nn import ShapeError
from .potentials import BankVars, PotentialBank, init_potential_bank
from .vae import FlowVae, GumbelState, VaeVars, anneal_tau, init_flow_vae

CKPT_MAGIC = b"FFCKPT01"


class ConfigError(ValueError):
    """Malformed or unknown configuration input."""


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, loss: float):
        super().__init__(f"non-finite loss {loss} at iteration {iteration}")
        self.iteration = iteration


@dataclass
class TrainConfig:
    preset: str = "toy"
    k_count: int = 3
    horizon: int = 8  # T: sequences have T+1 frames
    latent_dim: int = 8
    learning_rate: float = 1e-4
    batch_size: int = 32
    iterations: int = 5000
    mode: str = "supervised"  # or "weak"
    lambda_hj: float = 1.0
    ohj: bool = False  # force f == 0 (ordinary HJ ablation)
    seed: int = 0
    precision: str = "float32"  # or "float64"
    image_size: int = 16
    channels: tuple[int, ...] = (8, 16, 32, 64)
    pot_hidden: tuple[int, ...] = (64, 64)
    emb_dim: int = 8
    n_train: int = 256
    n_test: int = 64
    scale_extent: float = 1.8
    rotate_extent: float = 80.0
    hue_extent: float = 340.0
    log_every: int = 10
    checkpoint_every: int = 0  # 0: only the final checkpoint
    mnist_images: str = ""  # IDX path, mnist preset only

    def __post_init__(self):
        if self.mode not in ("supervised", "weak"):
            raise ConfigError(f"mode must be 'supervised' or 'weak', got {self.mode!r}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        for name in (
            "k_count", "horizon", "latent_dim", "batch_size", "iterations",
            "image_size", "emb_dim", "n_train", "n_test",
        ):
            if getattr(self, name) < 0 or (name not in ("iterations",) and getattr(self, name) == 0):
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate <= 0 or self.lambda_hj < 0:
            raise ConfigError("learning_rate must be > 0 and lambda_hj >= 0")
        if self.k_count > 3:
            raise ConfigError("presets define at most 3 transformations (scale, rotate, hue)")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64


PRESETS: dict[str, dict] = {
    "toy": {"learning_rate": 3e-4},
    # full-scale recipe from the MNIST experiments; needs the IDX file and hours of CPU
    "mnist": {
        "latent_dim": 16,
        "batch_size": 128,
        "iterations": 90000,
        "image_size": 28,
        "channels": (32, 64, 128, 256),
        "pot_hidden": (128, 128),
        "n_train": 60000,
        "n_test": 512,
        "learning_rate": 1e-4,
    },
}

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _parse_value(name: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() not in _BOOL:
                raise ValueError(raw)
            return _BOOL[raw.lower()]
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        # tuple of ints
        return tuple(int(p) for p in raw.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"cannot parse config value for {name!r}: {raw!r}") from exc


def parse_config(text: str) -> TrainConfig:
    """Line-based `key = value` config; preset defaults applied first, unknown keys fail."""
    kinds = {f.name: type(getattr(TrainConfig(), f.name)) for f in fields(TrainConfig)}
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in kinds:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        pairs.append((key, raw))
    preset = "toy"
    for key, raw in pairs:
        if key == "preset":
            preset = raw.strip()
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
    merged = {"preset": preset, **PRESETS[preset]}
    for key, raw in pairs:
        if key != "preset":
            merged[key] = _parse_value(key, raw, kinds[key])
    return TrainConfig(**merged)


def load_config(path) -> TrainConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def config_to_text(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(TrainConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def config_digest(cfg: TrainConfig) -> str:
    return hashlib.sha256(config_to_text(cfg).encode()).hexdigest()


# -- Adam ------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        {k: np.zeros_like(p) for k, p in params.items()},
        {k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(
    state: AdamState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    lr: float,
) -> tuple[AdamState, dict[str, np.ndarray]]:
    """Bias-corrected Adam update, in place on the parameter arrays."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name in sorted(params):
        p, g = params[name], grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state, params


# -- parameter naming ---------------------------------------------------------------


def _conv_entries(prefix, convs, out):
    for i, c in enumerate(convs):
        out.append((f"{prefix}.c{i}.w", c.weight))
        out.append((f"{prefix}.c{i}.b", c.bias))


def array_entries(model: FlowVae, bank: PotentialBank) -> list[tuple[str, np.ndarray]]:
    """Canonical (name, array) list covering every learnable parameter."""
    out: list[tuple[str, np.ndarray]] = []
    _conv_entries("enc", model.encoder.convs, out)
    out += [("enc.head.w", model.encoder.head_w), ("enc.head.b", model.encoder.head_b)]
    out += [("dec.head.w", model.decoder.head_w), ("dec.head.b", model.decoder.head_b)]
    _conv_entries("dec", model.decoder.convs, out)
    if model.classifier is not None:
        _conv_entries("cls", model.classifier.convs, out)
        out += [("cls.head.w", model.classifier.head_w), ("cls.head.b", model.classifier.head_b)]
    for kk, net in enumerate(bank.potentials):
        for li, l in enumerate(net.layers):
            out += [(f"pot{kk}.l{li}.w", l.weight), (f"pot{kk}.l{li}.b", l.bias)]
    for kk, net in enumerate(bank.forces):
        for li, l in enumerate(net.layers):
            out += [(f"force{kk}.l{li}.w", l.weight), (f"force{kk}.l{li}.b", l.bias)]
    out.append(("rho", bank.rho))
    return out


def var_entries(mv: VaeVars, bv: BankVars) -> list[tuple[str, tape.Var]]:
    """Var mirror of array_entries; names and order match exactly."""
    out: list[tuple[str, tape.Var]] = []

    def conv_vars(prefix, cv):
        for i, (w, b) in enumerate(zip(cv.weights, cv.biases)):
            out.append((f"{prefix}.c{i}.w", w))
            out.append((f"{prefix}.c{i}.b", b))

    conv_vars("enc", mv.encoder.convs)
    out += [("enc.head.w", mv.encoder.head_w), ("enc.head.b", mv.encoder.head_b)]
    out += [("dec.head.w", mv.decoder.head_w), ("dec.head.b", mv.decoder.head_b)]
    conv_vars("dec", mv.decoder.convs)
    if mv.classifier is not None:
        conv_vars("cls", mv.classifier.convs)
        out += [("cls.head.w", mv.classifier.head_w), ("cls.head.b", mv.classifier.head_b)]
    for kk, net in enumerate(bv.potentials):
        for li, (w, b) in enumerate(zip(net.weights, net.biases)):
            out += [(f"pot{kk}.l{li}.w", w), (f"pot{kk}.l{li}.b", b)]
    for kk, net in enumerate(bv.forces):
        for li, (w, b) in enumerate(zip(net.weights, net.biases)):
            out += [(f"force{kk}.l{li}.w", w), (f"force{kk}.l{li}.b", b)]
    out.append(("rho", bv.rho))
    return out


# -- checkpoints ---------------------------------------------------------------------


@dataclass
class ModelCheckpoint:
    arrays: dict[str, np.ndarray]  # parameters plus adam.m.* / adam.v.* moments
    iteration: int
    config_text: str

    @property
    def config_digest(self) -> str:
        return hashlib.sha256(self.config_text.encode()).hexdigest()


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    names = sorted(ckpt.arrays)
    payload = bytearray()
    entries = []
    for name in names:
        arr = ckpt.arrays[name]
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        entries.append(
            {"name": name, "dtype": arr.dtype.str.replace(">", "<"), "shape": list(arr.shape), "offset": len(payload)}
        )
        payload += raw
    manifest = json.dumps(
        {
            "version": 1,
            "iteration": ckpt.iteration,
            "config_digest": ckpt.config_digest,
            "config": ckpt.config_text,
            "entries": entries,
        },
        sort_keys=True,
    ).encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        fh.write(bytes(payload))
    os.replace(tmp, path)


def load_checkpoint(path) -> ModelCheckpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"bad checkpoint magic {raw[:8]!r}, expected {CKPT_MAGIC!r}")
    (mlen,) = struct.unpack("<I", raw[8:12])
    manifest = json.loads(raw[12 : 12 + mlen])
    base = 12 + mlen
    arrays = {}
    for e in manifest["entries"]:
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(raw, dtype=dt, count=count, offset=base + e["offset"])
        arrays[e["name"]] = arr.reshape(e["shape"]).copy()
    return ModelCheckpoint(arrays, manifest["iteration"], manifest["config"])


def build_model(cfg: TrainConfig) -> tuple[FlowVae, PotentialBank]:
    """Fresh model + bank from the config seed (potentials start as zero fields)."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    image_shape = (3, cfg.image_size, cfg.image_size)
    model = init_flow_vae(
        rng,
        image_shape,
        cfg.latent_dim,
        k_count=cfg.k_count if cfg.mode == "weak" else None,
        channels=cfg.channels,
        dtype=cfg.dtype,
    )
    bank = init_potential_bank(
        rng,
        cfg.k_count,
        cfg.latent_dim,
        emb_dim=cfg.emb_dim,
        hidden=cfg.pot_hidden,
        scale=1.0,
        final_scale=0.0,
        dtype=cfg.dtype,
        force_disabled=cfg.ohj,
    )
    return model, bank


def restore_from_checkpoint(ckpt: ModelCheckpoint) -> tuple[TrainConfig, FlowVae, PotentialBank]:
    cfg = parse_config(ckpt.config_text)
    model, bank = build_model(cfg)
    for name, arr in array_entries(model, bank):
        stored = ckpt.arrays[name]
        if stored.shape != arr.shape:
            raise ShapeError(f"checkpoint array {name} has shape {stored.shape}, expected {arr.shape}")
        arr[...] = stored
    return cfg, model, bank


def transform_specs(cfg: TrainConfig) -> list[data.TransformSpec]:
    extents = [
        (data.SCALE, cfg.scale_extent),
        (data.ROTATE, cfg.rotate_extent),
        (data.HUE, cfg.hue_extent),
    ]
    return [data.TransformSpec(kind, cfg.horizon, ext) for kind, ext in extents[: cfg.k_count]]


def _sequences_for(bases: np.ndarray, specs, dtype) -> np.ndarray:
    """(N, K, T+1, C, H, W) pregenerated transformation sequences."""
    n = bases.shape[0]
    out = None
    for i in range(n):
        for k, spec in enumerate(specs):
            seq = data.generate_sequence(bases[i].astype(np.float64), spec)
            if out is None:
                out = np.empty((n, len(specs), *seq.shape), dtype=dtype)
            out[i, k] = seq
    return out


@dataclass
class Dataset:
    train: np.ndarray  # (N, K, T+1, C, H, W)
    test: np.ndarray


def build_dataset(cfg: TrainConfig) -> Dataset:
    specs = transform_specs(cfg)
    if cfg.preset == "mnist":
        if not cfg.mnist_images:
            raise ConfigError("mnist preset requires mnist_images = <path to IDX file>")
        imgs = data.load_idx(cfg.mnist_images)
        if imgs.ndim != 3:
            raise ConfigError("mnist_images must point at an IDX image file")
        # tint grayscale into the red channel so hue rotation cycles colors
        rgb = np.zeros((imgs.shape[0], 3, imgs.shape[1], imgs.shape[2]))
        rgb[:, 0] = imgs
        train = rgb[: cfg.n_train]
        test = rgb[cfg.n_train : cfg.n_train + cfg.n_test]
    else:
        train = data.make_toy_dataset(cfg.seed, cfg.n_train, cfg.image_size)
        test = data.make_toy_dataset(cfg.seed + 1, cfg.n_test, cfg.image_size)
    return Dataset(
        _sequences_for(train, specs, cfg.dtype),
        _sequences_for(test, specs, cfg.dtype),
    )


METRIC_COLUMNS = ("iteration", "loss", "recon", "kl0", "kl_steps", "hj", "cat_kl", "tau")


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    model: FlowVae
    bank: PotentialBank
    config: TrainConfig
    metrics: list[dict]
    dataset: Dataset = field(repr=False, default=None)


def train(cfg: TrainConfig, out_dir=None, dataset: Dataset | None = None) -> TrainResult:
    """Runs the full training loop; deterministic given (config, seed)."""
    model, bank = build_model(cfg)
    if dataset is None:
        dataset = build_dataset(cfg)
    params = dict(array_entries(model, bank))
    adam = adam_init(params)
    rng = np.random.Generator(np.random.PCG64(cfg.seed + 1_000_003))
    metrics: list[dict] = []
    metrics_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_fh = open(os.path.join(out_dir, "metrics.csv"), "w")
        metrics_fh.write(",".join(METRIC_COLUMNS) + "\n")

    try:
        for it in range(cfg.iterations):
            k = int(rng.integers(cfg.k_count))
            idx = rng.integers(0, dataset.train.shape[0], size=cfg.batch_size)
            batch = dataset.train[idx, k]
            noise = rng.standard_normal((cfg.batch_size, cfg.latent_dim))
            tau = anneal_tau(GumbelState(it))
            mv = VaeVars.from_model(model)
            bv = BankVars.from_bank(bank)
            if cfg.mode == "weak":
                gumbels = vae.sample_gumbel(rng, (cfg.batch_size, cfg.k_count))
                graph = vae.t_sequence_graph(
                    mv, bv, batch, None, noise, gumbels=gumbels, tau=tau, hard=True
                )
            else:
                graph = vae.t_sequence_graph(mv, bv, batch, k, noise)
            loss = -graph.elbo + cfg.lambda_hj * graph.hj
            loss_val = float(loss.value)
            if not math.isfinite(loss_val):
                raise TrainingDiverged(it, loss_val)
            tape.backward(loss)
            grads = {
                name: (v.grad if v.grad is not None else np.zeros_like(v.value))
                for name, v in var_entries(mv, bv)
            }
            adam_step(adam, params, grads, cfg.learning_rate)

            if it % cfg.log_every == 0 or it == cfg.iterations - 1:
                row = {
                    "iteration": it,
                    "loss": loss_val,
                    "recon": float(graph.recon.value),
                    "kl0": float(graph.kl0.value),
                    "kl_steps": float(graph.kl_steps.value),
                    "hj": float(graph.hj.value),
                    "cat_kl": float(graph.cat_kl.value) if graph.cat_kl is not None else 0.0,
                    "tau": tau,
                }
                metrics.append(row)
                if metrics_fh is not None:
                    # %.17g round-trips float64, keeping the loss-composition
                    # identity checkable from the file alone
                    metrics_fh.write(",".join(f"{row[c]:.17g}" if c != "iteration" else str(row[c]) for c in METRIC_COLUMNS) + "\n")
                    metrics_fh.flush()
            if (
                out_dir is not None
                and cfg.checkpoint_every > 0
                and (it + 1) % cfg.checkpoint_every == 0
            ):
                save_checkpoint(_snapshot(cfg, params, adam, it + 1), os.path.join(out_dir, f"ckpt_{it + 1}.ffckpt"))
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    ckpt = _snapshot(cfg, params, adam, cfg.iterations)
    if out_dir is not None:
        save_checkpoint(ckpt, os.path.join(out_dir, "checkpoint.ffckpt"))
    return TrainResult(ckpt, model, bank, cfg, metrics, dataset)


def _snapshot(cfg: TrainConfig, params, adam: AdamState, iteration: int) -> ModelCheckpoint:
    arrays = {name: arr.copy() for name, arr in params.items()}
    for name, m in adam.m.items():
        arrays[f"adam.m.{name}"] = m.copy()
    for name, v in adam.v.items():
        arrays[f"adam.v.{name}"] = v.copy()
    arrays["adam.step"] = np.array([adam.step], dtype=np.int64)
    return ModelCheckpoint(arrays, iteration, config_to_text(cfg))
