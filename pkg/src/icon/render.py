"""Volume rendering quadrature, ray-confidence aggregation, per-ray losses.

A ray is integrated over n uniform depth bins between its near and far
bounds. With per-sample optical depth tau_k = sigma_k * delta_k the
quadrature uses

    a_k = 1 - exp(-tau_k),   T_k = exp(-sum_{l<k} tau_l),   w_k = T_k a_k,

so sum_k w_k + T(z_far) = 1 holds exactly (telescoping), not just to
quadrature tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .field import FieldConfig, apply_field, param_nodes
from .geom3d import Ray
from .rng import hash_uniform

EPS_OPACITY = 1e-8


@dataclass(frozen=True)
class QuadratureSpec:
    n_samples: int = 64
    mode: str = "stratified"  # or "midpoint"
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("need at least 2 samples per ray")
        if self.mode not in ("midpoint", "stratified"):
            raise ValueError(f"unknown quadrature mode {self.mode!r}")


@dataclass(frozen=True)
class RaySample:
    color: np.ndarray
    accumulated_alpha: float
    ray_confidence: float
    transmittances: np.ndarray
    poisoned: bool = False


def sample_depths(quad: QuadratureSpec, z_near: float, z_far: float,
                  ray_ids: np.ndarray, iteration: int = 0):
    """Depths (R, n) and bin widths (R, n) for a batch of rays.

    Stratified jitter is a pure function of (seed, ray id, iteration), so a
    ray re-rendered at the same iteration lands on identical samples no
    matter which batch it belongs to.
    """
    ray_ids = np.asarray(ray_ids)
    n = quad.n_samples
    h = (z_far - z_near) / n
    edges = z_near + h * np.arange(n)
    if quad.mode == "midpoint":
        z = np.broadcast_to(edges + 0.5 * h, (ray_ids.size, n)).copy()
    else:
        u = hash_uniform(quad.seed, ray_ids[:, None], iteration, np.arange(n)[None, :])
        z = edges + u * h
    deltas = np.full_like(z, h)
    return z, deltas


def quadrature_nodes(sigma: gc.TapeNode, deltas: np.ndarray):
    """Per-sample alpha, transmittance, and weights from (R, n) opacities."""
    tau = sigma * gc.constant(deltas)
    cum = gc.cumsum(tau, axis=1)
    t_excl = gc.exp(gc.neg(cum - tau))  # T_k, exclusive cumulative
    alpha = 1.0 - gc.exp(gc.neg(tau))
    weights = t_excl * alpha
    t_final = gc.exp(gc.neg(gc.total(tau, axis=1)))
    return alpha, t_excl, weights, t_final


def aggregate_confidence_nodes(weights: gc.TapeNode, zeta: gc.TapeNode,
                               deltas: np.ndarray) -> gc.TapeNode:
    """Ray confidence from per-sample confidences.

    Both inner aggregates are normalized to means so the result is a convex
    combination that stays in [0, 1]: the opacity-weighted mean dominates
    for opaque rays, the plain path mean for transparent rays. Quadrature
    weights enter through a stop-gradient: confidence training adjusts only
    the confidence head, never the geometry that produced the weights.
    """
    w = gc.stop_gradient(weights)
    acc = gc.total(w, axis=1)
    opaque_mean = gc.total(w * zeta, axis=1) / gc.maximum(acc, EPS_OPACITY)
    d = gc.constant(deltas)
    path_mean = gc.total(zeta * d, axis=1) / float(deltas[0].sum())
    return acc * opaque_mean + (1.0 - acc) * path_mean


def aggregate_confidence(sigma: np.ndarray, zeta: np.ndarray, deltas: np.ndarray,
                         t_excl: np.ndarray) -> np.ndarray:
    """Numpy twin of `aggregate_confidence_nodes` for rendering and tests."""
    alpha = 1.0 - np.exp(-sigma * deltas)
    w = t_excl * alpha
    acc = w.sum(axis=-1)
    opaque_mean = (w * zeta).sum(axis=-1) / np.maximum(acc, EPS_OPACITY)
    path_mean = (zeta * deltas).sum(axis=-1) / deltas.sum(axis=-1)
    return acc * opaque_mean + (1.0 - acc) * path_mean


def render_batch_nodes(pvars: dict[str, gc.TapeNode], origins, dirs,
                       z: np.ndarray, deltas: np.ndarray, cfg: FieldConfig,
                       alpha_enc: float, background: np.ndarray | None = None):
    """Differentiable rendering of a ray batch.

    Args:
        origins, dirs: (R, 3) tape nodes (constants or pose-derived).
        z, deltas: (R, n) depth samples and bin widths.
        background: composite color for escaped transmittance, or None for black.

    Returns a dict of tape nodes: color (R,3), acc_alpha (R), t_final (R),
    zeta_ray (R), plus per-sample weights and confidences.
    """
    n_rays, n_samp = z.shape
    o3 = gc.reshape(origins, (n_rays, 1, 3))
    d3 = gc.reshape(dirs, (n_rays, 1, 3))
    zc = gc.constant(z[:, :, None])
    pts = gc.reshape(o3 + zc * d3, (n_rays * n_samp, 3))
    view = gc.take_rows(dirs, np.repeat(np.arange(n_rays), n_samp))

    color_pt, sigma_pt, zeta_pt = apply_field(pvars, pts, view, cfg, alpha_enc)
    sigma = gc.reshape(sigma_pt, (n_rays, n_samp))
    zeta = gc.reshape(zeta_pt, (n_rays, n_samp))
    color_s = gc.reshape(color_pt, (n_rays, n_samp, 3))

    _, _, weights, t_final = quadrature_nodes(sigma, deltas)
    color = gc.total(gc.reshape(weights, (n_rays, n_samp, 1)) * color_s, axis=1)
    if background is not None:
        color = color + gc.reshape(t_final, (n_rays, 1)) * gc.constant(background)
    acc_alpha = gc.total(weights, axis=1)
    zeta_ray = aggregate_confidence_nodes(weights, zeta, deltas)
    return {
        "color": color,
        "acc_alpha": acc_alpha,
        "t_final": t_final,
        "zeta_ray": zeta_ray,
        "weights": weights,
        "zeta_samples": zeta,
    }


def render_ray(params: dict[str, np.ndarray], ray: Ray, cfg: FieldConfig,
               quad: QuadratureSpec, alpha_enc: float | None = None,
               ray_id: int = 0, iteration: int = 0,
               background: np.ndarray | None = None) -> RaySample:
    """Render a single ray without gradient bookkeeping."""
    if alpha_enc is None:
        alpha_enc = cfg.encoding.alpha
    z, deltas = sample_depths(quad, ray.z_near, ray.z_far, np.array([ray_id]), iteration)
    out = render_batch_nodes(param_nodes(params),
                             gc.constant(ray.origin[None, :]),
                             gc.constant(ray.direction[None, :]),
                             z, deltas, cfg, alpha_enc, background)
    tau = np.cumsum(0.0 + -np.log(np.maximum(1e-300, 1.0)) + 0.0)  # placeholder removed below
    color = out["color"].value[0].copy()
    acc = float(out["acc_alpha"].value[0])
    zr = float(out["zeta_ray"].value[0])
    t_excl = out["weights"].value[0] / np.maximum(
        1.0 - np.exp(-np.maximum(out["weights"].value[0], 0)), 1e-300)
    poisoned = not (np.all(np.isfinite(color)) and np.isfinite(acc) and np.isfinite(zr))
    return RaySample(color=color, accumulated_alpha=acc, ray_confidence=zr,
                     transmittances=t_excl, poisoned=poisoned)


def photometric_loss(rendered: np.ndarray, observed: np.ndarray) -> float:
    """Squared L2 over channels; mean over rays when given a batch."""
    rendered = np.asarray(rendered, dtype=float)
    observed = np.asarray(observed, dtype=float)
    per_ray = ((rendered - observed) ** 2).sum(axis=-1)
    return float(np.mean(per_ray))


def per_ray_photometric_nodes(color: gc.TapeNode, observed: np.ndarray) -> gc.TapeNode:
    """(R,) squared-L2 color error on the tape."""
    diff = color - gc.constant(observed)
    return gc.total(diff * diff, axis=1)


def confidence_target_loss(zeta_ray, photometric_error, tau: float):
    """Squared gap between ray confidence and the error-derived target.

    The target exp(-E / tau) enters through a stop-gradient; combined with
    the confidence head's stop-gradient input, this loss trains only the
    head.
    """
    if isinstance(zeta_ray, gc.TapeNode) or isinstance(photometric_error, gc.TapeNode):
        e = gc.stop_gradient(photometric_error) if isinstance(photometric_error, gc.TapeNode) \
            else gc.constant(photometric_error)
        target = gc.exp(e * (-1.0 / tau))
        diff = target - zeta_ray
        return gc.mean(diff * diff)
    target = np.exp(-np.asarray(photometric_error, dtype=float) / tau)
    return float(np.mean((target - np.asarray(zeta_ray, dtype=float)) ** 2))


def mask_loss(accumulated_alpha, mask_value):
    """MSE between accumulated opacity and a binary silhouette."""
    if isinstance(accumulated_alpha, gc.TapeNode):
        diff = accumulated_alpha - gc.constant(np.asarray(mask_value, dtype=float))
        return gc.mean(diff * diff)
    acc = np.asarray(accumulated_alpha, dtype=float)
    return float(np.mean((acc - np.asarray(mask_value, dtype=float)) ** 2))
