"""Synthetic transformation sequences and dataset ingestion.

Sequences are built by applying one transformation (scale / rotate / hue) to a
base image with linearly increasing magnitude: frame t carries (t/T) of the
full extent, frame 0 is the untouched source. Geometric transforms resample
bilinearly about the image center with zero padding; hue rotation happens in
HSV space.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

SCALE = "scale"
ROTATE = "rotate"
HUE = "hue"
KINDS = (SCALE, ROTATE, HUE)

CACHE_MAGIC = b"FFDS"
CACHE_VERSION = 1


class IdxFormatError(ValueError):
    """Malformed IDX file; carries the byte offset of the problem."""

    def __init__(self, offset: int, message: str):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class TransformSpec:
    kind: str
    steps: int  # T; the sequence has T+1 frames
    extent: float  # max scale factor / degrees rotated / hue degrees

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown transformation kind {self.kind!r}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.kind == SCALE and not 1.0 <= self.extent <= 3.0:
            raise ValueError(f"scale extent must be in [1, 3], got {self.extent}")
        if self.kind == ROTATE and not 0.0 <= self.extent <= 180.0:
            raise ValueError(f"rotation extent must be in [0, 180] degrees, got {self.extent}")
        if self.kind == HUE and not 0.0 <= self.extent < 360.0:
            raise ValueError(f"hue extent must be in [0, 360) degrees, got {self.extent}")


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3:
        raise ValueError(f"expected a (C, H, W) image, got shape {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image pixels must lie in [0, 1]")
    return img


def affine_resample(img: np.ndarray, scale: float = 1.0, angle_deg: float = 0.0) -> np.ndarray:
    """Rotate by angle_deg and scale about the center; bilinear, zero padding."""
    img = np.asarray(img)
    _, h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    th = math.radians(angle_deg)
    ct, st = math.cos(th), math.sin(th)
    # inverse map: rotate by -angle, shrink by 1/scale
    dy, dx = yy - cy, xx - cx
    sy = (ct * dy - st * dx) / scale + cy
    sx = (st * dy + ct * dx) / scale + cx
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy, fx = sy - y0, sx - x0
    out = np.zeros_like(img, dtype=np.float64)
    for oy, ox, wgt in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yi, xi = y0 + oy, x0 + ox
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        ys, xs = np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)
        out += wgt * valid * img[:, ys, xs]
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    """(3, H, W) RGB in [0,1] -> HSV with h in [0,1)."""
    r, g, b = img[0], img[1], img[2]
    maxc = np.max(img, axis=0)
    minc = np.min(img, axis=0)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(delta > 0, delta, 1.0)
    h = np.zeros_like(maxc)
    h = np.where((maxc == r) & (delta > 0), ((g - b) / safe) % 6.0, h)
    h = np.where((maxc == g) & (delta > 0), (b - r) / safe + 2.0, h)
    h = np.where((maxc == b) & (delta > 0), (r - g) / safe + 4.0, h)
    return np.stack([h / 6.0, s, v])


def hsv_to_rgb(img: np.ndarray) -> np.ndarray:
    h, s, v = img[0] * 6.0, img[1], img[2]
    i = np.floor(h).astype(np.int64) % 6
    f = h - np.floor(h)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def hue_rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    if img.shape[0] != 3:
        raise ValueError("hue rotation requires a 3-channel image")
    hsv = rgb_to_hsv(np.asarray(img, dtype=np.float64))
    hsv[0] = (hsv[0] + degrees / 360.0) % 1.0
    return np.clip(hsv_to_rgb(hsv), 0.0, 1.0).astype(img.dtype)


def generate_sequence(base: np.ndarray, spec: TransformSpec) -> np.ndarray:
    """(T+1, C, H, W) frames; frame t applies (t/T) of the extent."""
    base = _check_image(base)
    frames = [base.copy()]
    for t in range(1, spec.steps + 1):
        frac = t / spec.steps
        if spec.kind == SCALE:
            factor = 1.0 + frac * (spec.extent - 1.0)
            frames.append(affine_resample(base, scale=factor))
        elif spec.kind == ROTATE:
            frames.append(affine_resample(base, angle_deg=frac * spec.extent))
        else:
            frames.append(hue_rotate(base, frac * spec.extent))
    return np.stack(frames)


# -- IDX ingestion --------------------------------------------------------------


def load_idx(path) -> np.ndarray:
    """Parses the big-endian IDX format; images scaled to [0,1], labels as ints."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError(0, f"file too short for magic ({len(raw)} bytes)")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic not in (2051, 2049):
        raise IdxFormatError(0, f"bad magic {magic}, expected 2051 (images) or 2049 (labels)")
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise IdxFormatError(len(raw), f"truncated header, need {header_end} bytes")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    count = int(np.prod(dims))
    if len(raw) < header_end + count:
        raise IdxFormatError(len(raw), f"truncated data, need {header_end + count} bytes")
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header_end).reshape(dims)
    if magic == 2051:
        return data.astype(np.float64) / 255.0
    return data.astype(np.int64)


# -- dataset cache ----------------------------------------------------------------


def save_cache(path, array: np.ndarray) -> None:
    """FFDS format: 16-byte header (magic, version, ndim, reserved), u32 extents,
    then raw little-endian float32."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<III", CACHE_VERSION, arr.ndim, 0))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def load_cache(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CACHE_MAGIC:
        raise ValueError(f"bad dataset-cache magic {raw[:4]!r}, expected {CACHE_MAGIC!r}")
    version, ndim, _ = struct.unpack("<III", raw[4:16])
    if version != CACHE_VERSION:
        raise ValueError(f"unsupported cache version {version}")
    shape = struct.unpack(f"<{ndim}I", raw[16 : 16 + 4 * ndim])
    return np.frombuffer(raw, dtype="<f4", offset=16 + 4 * ndim).reshape(shape).copy()


# -- procedural toy sprites -------------------------------------------------------


def _hsv_color(rng: np.random.Generator) -> np.ndarray:
    hue = rng.uniform(0.0, 1.0)
    return hsv_to_rgb(np.array([[[hue]], [[1.0]], [[1.0]]]))[:, 0, 0]


def make_toy_dataset(seed: int, n: int, size: int) -> np.ndarray:
    """Deterministic (n, 3, size, size) float32 sprites: one bar or disc each.

    Shapes are anti-aliased, saturated-color, near-center, and sized so that a
    1.8x scale-up still fits the frame.
    """
    if size < 8:
        raise ValueError(f"sprite size must be >= 8, got {size}")
    rng = np.random.Generator(np.random.PCG64(seed))
    yy, xx = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="ij")
    images = np.zeros((n, 3, size, size), dtype=np.float32)
    c = (size - 1) / 2.0
    for i in range(n):
        kind = rng.integers(0, 2)
        color = _hsv_color(rng)
        cy = c + rng.uniform(-0.12, 0.12) * size
        cx = c + rng.uniform(-0.12, 0.12) * size
        if kind == 0:  # bar; widths stay >= ~1.5 px so a small decoder can resolve them
            phi = rng.uniform(0.0, math.pi)
            half_len = rng.uniform(0.18, 0.26) * size
            half_wid = rng.uniform(0.09, 0.13) * size
            u = math.cos(phi) * (xx - cx) + math.sin(phi) * (yy - cy)
            v = -math.sin(phi) * (xx - cx) + math.cos(phi) * (yy - cy)
            alpha = np.clip(half_len + 0.5 - np.abs(u), 0.0, 1.0) * np.clip(
                half_wid + 0.5 - np.abs(v), 0.0, 1.0
            )
        else:  # disc
            radius = rng.uniform(0.15, 0.22) * size
            dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
            alpha = np.clip(radius + 0.5 - dist, 0.0, 1.0)
        images[i] = (alpha[None, :, :] * color[:, None, None]).astype(np.float32)
    return np.clip(images, 0.0, 1.0)
