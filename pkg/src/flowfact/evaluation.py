"""Equivariance metrics, latent traversals, and image-grid export.

Metrics follow the deterministic convention: z_0 is the encoder mean (no
sampling) and latents move along plain gradient steps z_t = z_{t-1} + grad_u
(no density tracking needed). The zero-flow baseline simply freezes z at z_0.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .vae import FlowVae, decode, encode


class ZeroFlowBank:
    """grad_u == 0 everywhere: the traversal-free lower-bound baseline."""

    def __init__(self, latent_dim: int, k_count: int = 1):
        self.latent_dim = latent_dim
        self.k_count = k_count

    def _check_index(self, k: int) -> None:
        if not 0 <= k < self.k_count:
            raise IndexError(f"transformation index {k} out of range [0, {self.k_count})")

    def grad_z(self, k, z, t):
        self._check_index(k)
        return np.zeros_like(np.asarray(z))

    def hessian_z(self, k, z, t):
        self._check_index(k)
        z = np.asarray(z)
        d = z.shape[-1]
        shape = (d, d) if z.ndim == 1 else (z.shape[0], d, d)
        return np.zeros(shape, dtype=z.dtype)

    def diffusion(self, k):
        self._check_index(k)
        return 0.0


def _flow_positions(bank, k: int, z0: np.ndarray, horizon: int) -> list[np.ndarray]:
    """z_t = z_0 + sum of gradient steps; returns [z_1 .. z_horizon]."""
    z = np.asarray(z0)
    out = []
    for t in range(horizon):
        z = z + bank.grad_z(k, z, float(t))
        out.append(z)
    return out


def equivariance_error_output(model: FlowVae, bank, x_bar: np.ndarray, k: int) -> float:
    """sum_t |x_t - decode(z_t)| with z_0 the encoder mean."""
    x_bar = np.asarray(x_bar)
    mu, _ = encode(model.encoder, x_bar[0])
    total = 0.0
    for t, z in enumerate(_flow_positions(bank, k, mu, x_bar.shape[0] - 1), start=1):
        total += float(np.abs(x_bar[t] - decode(model.decoder, z)).sum())
    return total


def equivariance_error_latent(model: FlowVae, bank, x_bar: np.ndarray, k: int) -> float:
    """sum_t |encode(x_t) - z_t| with encoder means on both sides."""
    x_bar = np.asarray(x_bar)
    mu, _ = encode(model.encoder, x_bar[0])
    total = 0.0
    for t, z in enumerate(_flow_positions(bank, k, mu, x_bar.shape[0] - 1), start=1):
        target, _ = encode(model.encoder, x_bar[t])
        total += float(np.abs(target - z).sum())
    return total


@dataclass
class MetricRow:
    metric: str
    k: int
    value: float
    n_sequences: int


def equivariance_report(
    model: FlowVae, bank, sequences: np.ndarray, labels: np.ndarray, metric: str = "equiv-out"
) -> list[MetricRow]:
    """Dataset-mean equivariance per transformation index (Table-style rows)."""
    fn = equivariance_error_output if metric == "equiv-out" else equivariance_error_latent
    labels = np.asarray(labels)
    rows = []
    for k in sorted(set(int(k) for k in labels)):
        idx = np.flatnonzero(labels == k)
        vals = [fn(model, bank, sequences[i], k) for i in idx]
        rows.append(MetricRow(metric, k, float(np.mean(vals)), len(idx)))
    return rows


def write_metrics_csv(path, rows: list[MetricRow]) -> None:
    with open(path, "w") as fh:
        fh.write("metric,k,value,n_sequences\n")
        for r in rows:
            fh.write(f"{r.metric},{r.k},{r.value:.9g},{r.n_sequences}\n")


def traverse(model: FlowVae, bank, x0: np.ndarray, schedule) -> list[np.ndarray]:
    """Decoded frames after each flow step from the encoder mean of x0.

    ``schedule`` is a list of (k, steps) for switching, where k may also be a
    list/tuple of indices applied simultaneously (superposition; the empty
    set advances time without moving). The step counter runs globally across
    schedule entries.
    """
    if not schedule:
        raise ValueError("traversal schedule must be nonempty")
    mu, _ = encode(model.encoder, x0)
    z = mu
    frames = []
    t = 0
    for ks, steps in schedule:
        ks = [ks] if isinstance(ks, (int, np.integer)) else list(ks)
        for kk in ks:
            bank._check_index(int(kk))
        for _ in range(steps):
            step = np.zeros_like(z)
            for kk in ks:
                step = step + bank.grad_z(int(kk), z, float(t))
            z = z + step
            t += 1
            frames.append(decode(model.decoder, z))
    return frames


# -- PPM image grids -------------------------------------------------------------


def _to_rgb8(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 3:
        raise ValueError(f"expected a (C, H, W) frame, got {frame.shape}")
    if frame.min() < 0.0 or frame.max() > 1.0:
        raise ValueError("frames must lie in [0, 1]")
    if frame.shape[0] == 1:
        frame = np.repeat(frame, 3, axis=0)
    if frame.shape[0] != 3:
        raise ValueError(f"frames must have 1 or 3 channels, got {frame.shape[0]}")
    return np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def export_grid(frames, path) -> None:
    """Binary PPM (P6): rows of sequences, columns of timesteps, 1px white rules.

    ``frames`` is a list of rows, each a list of (C, H, W) arrays in [0, 1];
    a flat list is treated as a single row.
    """
    if isinstance(frames, np.ndarray) and frames.ndim == 4:
        frames = [list(frames)]
    elif frames and isinstance(frames[0], np.ndarray) and frames[0].ndim == 3:
        frames = [list(frames)]
    if not frames or not frames[0]:
        raise ValueError("cannot export an empty frame grid")
    rows = [[_to_rgb8(f) for f in row] for row in frames]
    h, w, _ = rows[0][0].shape
    ncols = len(rows[0])
    for row in rows:
        if len(row) != ncols or any(f.shape != (h, w, 3) for f in row):
            raise ValueError("all frames must share one shape and row length")
    grid_h = len(rows) * h + (len(rows) - 1)
    grid_w = ncols * w + (ncols - 1)
    canvas = np.full((grid_h, grid_w, 3), 255, dtype=np.uint8)
    for i, row in enumerate(rows):
        for j, f in enumerate(row):
            y, x = i * (h + 1), j * (w + 1)
            canvas[y : y + h, x : x + w] = f
    header = f"P6\n{grid_w} {grid_h}\n255\n".encode("ascii")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header + canvas.tobytes())
    os.replace(tmp, path)


def read_ppm(path) -> np.ndarray:
    """Reads back a binary P6 file as (H, W, 3) uint8 (round-trip oracle)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError(f"not a binary PPM file: magic {parts[0]!r}")
    w, h = map(int, parts[1].split())
    if parts[2] != b"255":
        raise ValueError(f"unsupported maxval {parts[2]!r}")
    return np.frombuffer(parts[3], dtype=np.uint8, count=h * w * 3).reshape(h, w, 3)
