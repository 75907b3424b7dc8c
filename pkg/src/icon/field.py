"""Radiance + confidence field.

A small MLP maps an encoded 3D position (and, after the trunk, an encoded
view direction) to color and opacity. A single extra fully-connected layer
on stop-gradient trunk features predicts a per-point confidence in (0, 1).
Positional encoding bands are gated in by a cosine-ramp window controlled
by the annealing coefficient `alpha`, so that alpha = 0 passes only the raw
coordinates and alpha = num_bands reproduces the classic full encoding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from . import gradcore as gc
from .geom3d import Pose
from .rng import stream

CHECKPOINT_MAGIC = b"ICON1"


@dataclass(frozen=True)
class EncodingConfig:
    num_bands_position: int = 8
    num_bands_direction: int = 2
    alpha: float = 0.0

    def at_alpha(self, alpha: float) -> "EncodingConfig":
        return replace(self, alpha=float(alpha))


@dataclass(frozen=True)
class FieldConfig:
    encoding: EncodingConfig = EncodingConfig()
    trunk_width: int = 128
    trunk_depth: int = 4
    skip_layer: int = 2
    color_hidden: int = 64

    def position_dim(self) -> int:
        return 3 + 6 * self.encoding.num_bands_position

    def direction_dim(self) -> int:
        return 3 + 6 * self.encoding.num_bands_direction


@dataclass(frozen=True)
class PointSample:
    color: np.ndarray
    opacity: float
    confidence: float


def band_window(alpha: float, num_bands: int) -> np.ndarray:
    """Per-band gate: 0 for bands above alpha, 1 below alpha-1, cosine between."""
    b = np.arange(num_bands, dtype=float)
    t = np.clip(alpha - b, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * t))


def encode(x: np.ndarray, num_bands: int, alpha: float) -> np.ndarray:
    """Concatenate raw coordinates with windowed sin/cos frequency features.

    Accepts a single 3-vector or an (..., 3) batch.
    """
    x = np.asarray(x, dtype=float)
    w = band_window(alpha, num_bands)
    feats = [x]
    for b in range(num_bands):
        arg = (2.0 ** b) * np.pi * x
        feats.append(w[b] * np.sin(arg))
        feats.append(w[b] * np.cos(arg))
    return np.concatenate(feats, axis=-1)


def encode_nodes(x: gc.TapeNode, num_bands: int, alpha: float) -> gc.TapeNode:
    """Tape version of `encode` for an (N, 3) batch of positions."""
    w = band_window(alpha, num_bands)
    n = x.value.shape[0]
    feats = [x]
    for b in range(num_bands):
        if w[b] == 0.0:
            feats.append(gc.constant(np.zeros((n, 6))))
            continue
        arg = x * ((2.0 ** b) * np.pi)
        feats.append(gc.concat([gc.sin(arg) * w[b], gc.cos(arg) * w[b]], axis=1))
    return gc.concat(feats, axis=1)


# Declared parameter order; the checkpoint format and the optimizer walk
# parameters in exactly this sequence.
def param_layout(cfg: FieldConfig) -> list[tuple[str, tuple[int, ...]]]:
    w = cfg.trunk_width
    pos = cfg.position_dim()
    dird = cfg.direction_dim()
    layout: list[tuple[str, tuple[int, ...]]] = []
    in_dim = pos
    for layer in range(cfg.trunk_depth):
        if layer == cfg.skip_layer:
            in_dim += pos
        layout.append((f"trunk.w{layer}", (in_dim, w)))
        layout.append((f"trunk.b{layer}", (w,)))
        in_dim = w
    layout.append(("sigma.w", (w, 1)))
    layout.append(("sigma.b", (1,)))
    layout.append(("color.w0", (w + dird, cfg.color_hidden)))
    layout.append(("color.b0", (cfg.color_hidden,)))
    layout.append(("color.w1", (cfg.color_hidden, 3)))
    layout.append(("color.b1", (3,)))
    layout.append(("conf.w", (w + dird, 1)))
    layout.append(("conf.b", (1,)))
    return layout


def init_params(cfg: FieldConfig, seed: int) -> dict[str, np.ndarray]:
    """He-style uniform fan-in init; biases (including the confidence bias) zero."""
    rs = stream(seed, "field-init")
    params = {}
    for i, (name, shape) in enumerate(param_layout(cfg)):
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            limit = np.sqrt(6.0 / shape[0])
            params[name] = rs.at(i).uniform(-limit, limit, size=shape)
    return params


def param_nodes(params: dict[str, np.ndarray]) -> dict[str, gc.TapeNode]:
    return {name: gc.variable(arr, name) for name, arr in params.items()}


def apply_field(pvars: dict[str, gc.TapeNode], x: gc.TapeNode, d: gc.TapeNode,
                cfg: FieldConfig, alpha: float):
    """Field forward pass on the tape.

    Args:
        pvars: parameter nodes from `param_nodes`.
        x: (N, 3) positions; d: (N, 3) unit view directions.
        alpha: encoding annealing progress in band units.

    Returns:
        (color (N,3) in [0,1], opacity (N,) >= 0, confidence (N,) in (0,1)).

    The confidence branch reads trunk features through a stop-gradient, so
    its loss can never reach the radiance parameters or, through the sample
    positions, the poses.
    """
    enc = cfg.encoding
    xf = encode_nodes(x, enc.num_bands_position, alpha)
    df = encode_nodes(d, enc.num_bands_direction, alpha)

    h = xf
    for layer in range(cfg.trunk_depth):
        if layer == cfg.skip_layer:
            h = gc.concat([h, xf], axis=1)
        h = gc.relu(gc.matmul(h, pvars[f"trunk.w{layer}"]) + pvars[f"trunk.b{layer}"])

    n = x.value.shape[0]
    sigma = gc.reshape(gc.softplus(gc.matmul(h, pvars["sigma.w"]) + pvars["sigma.b"]), (n,))

    hc_in = gc.concat([h, df], axis=1)
    hc = gc.relu(gc.matmul(hc_in, pvars["color.w0"]) + pvars["color.b0"])
    color = gc.sigmoid(gc.matmul(hc, pvars["color.w1"]) + pvars["color.b1"])

    conf_in = gc.concat([gc.stop_gradient(h), df], axis=1)
    conf = gc.reshape(gc.sigmoid(gc.matmul(conf_in, pvars["conf.w"]) + pvars["conf.b"]), (n,))
    return color, sigma, conf


def query(params: dict[str, np.ndarray], x: np.ndarray, d: np.ndarray,
          cfg: FieldConfig, alpha: float | None = None) -> PointSample:
    """Evaluate the field at one point; pure and deterministic."""
    if alpha is None:
        alpha = cfg.encoding.alpha
    color, sigma, conf = apply_field(
        param_nodes(params),
        gc.constant(np.asarray(x, dtype=float).reshape(1, 3)),
        gc.constant(np.asarray(d, dtype=float).reshape(1, 3)),
        cfg, alpha)
    return PointSample(color=color.value[0].copy(),
                       opacity=float(sigma.value[0]),
                       confidence=float(conf.value[0]))


def query_batch(params: dict[str, np.ndarray], x: np.ndarray, d: np.ndarray,
                cfg: FieldConfig, alpha: float):
    """Vectorized field evaluation without gradient bookkeeping."""
    color, sigma, conf = apply_field(
        param_nodes(params), gc.constant(x), gc.constant(d), cfg, alpha)
    return color.value, sigma.value, conf.value


def save_checkpoint(path, cfg: FieldConfig, params: dict[str, np.ndarray],
                    poses: list[tuple[int, Pose]], confidences: np.ndarray,
                    alpha: float) -> None:
    """Versioned binary checkpoint: magic, dimensions, weights, poses, confidences."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        enc = cfg.encoding
        f.write(struct.pack("<6i", enc.num_bands_position, enc.num_bands_direction,
                            cfg.trunk_width, cfg.trunk_depth, cfg.skip_layer,
                            cfg.color_hidden))
        f.write(struct.pack("<d", alpha))
        for name, shape in param_layout(cfg):
            arr = np.ascontiguousarray(params[name], dtype="<f8")
            if arr.shape != shape:
                raise ValueError(f"parameter {name} has shape {arr.shape}, expected {shape}")
            f.write(arr.tobytes())
        f.write(struct.pack("<i", len(poses)))
        for idx, pose in poses:
            f.write(struct.pack("<i", idx))
            f.write(np.ascontiguousarray(pose.rotation, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(pose.translation, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(confidences, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of `save_checkpoint`; returns (cfg, params, poses, confidences, alpha)."""
    with open(path, "rb") as f:
        magic = f.read(5)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a field checkpoint (magic {magic!r})")
        lx, ld, width, depth, skip, chidden = struct.unpack("<6i", f.read(24))
        (alpha,) = struct.unpack("<d", f.read(8))
        cfg = FieldConfig(EncodingConfig(lx, ld, alpha), width, depth, skip, chidden)
        params = {}
        for name, shape in param_layout(cfg):
            n = int(np.prod(shape))
            params[name] = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape).copy()
        (n_poses,) = struct.unpack("<i", f.read(4))
        poses = []
        for _ in range(n_poses):
            (idx,) = struct.unpack("<i", f.read(4))
            rot = np.frombuffer(f.read(72), dtype="<f8").reshape(3, 3).copy()
            t = np.frombuffer(f.read(24), dtype="<f8").copy()
            poses.append((idx, Pose(rot, t)))
        confidences = np.frombuffer(f.read(8 * n_poses), dtype="<f8").copy()
    return cfg, params, poses, confidences, alpha
