"""SE(3)/so(3) operations, pinhole camera model, and ray generation.

Conventions (used everywhere in this package):
  - Poses are camera-to-world rigid transforms: x_world = R @ x_cam + t.
  - Right-handed frames; the camera looks along -z, image y points down.
  - Pixel (u, v) is sampled at its center (u + 0.5, v + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SMALL_ANGLE = 1e-8


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """self @ other, applied other-first."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map points (..., 3) from camera frame to world frame."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def is_valid(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return (np.allclose(r @ r.T, np.eye(3), atol=tol)
                and abs(np.linalg.det(r) - 1.0) < tol)


@dataclass(frozen=True)
class Twist:
    """Tangent-space pose increment: rotational part omega, translational upsilon."""

    omega: np.ndarray
    upsilon: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float))
        object.__setattr__(self, "upsilon", np.asarray(self.upsilon, dtype=float))

    @staticmethod
    def zero() -> "Twist":
        return Twist(np.zeros(3), np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.omega, self.upsilon])

    @staticmethod
    def from_vector(v: np.ndarray) -> "Twist":
        v = np.asarray(v, dtype=float)
        return Twist(v[:3], v[3:6])


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    z_near: float
    z_far: float

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=float))
        if not (0 < self.z_near < self.z_far):
            raise ValueError("require 0 < z_near < z_far")

    def point_at(self, z: float) -> np.ndarray:
        return self.origin + z * self.direction


def hat(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: hat(v) @ w == cross(v, w)."""
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def _rot_coeffs(theta: float) -> tuple[float, float, float]:
    """Coefficients A = sin(t)/t, B = (1-cos t)/t^2, C = (t - sin t)/t^3."""
    if theta < 1e-4:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / (theta * theta)
        c = (theta - np.sin(theta)) / (theta ** 3)
    return a, b, c


def se3_exp(t: Twist) -> Pose:
    """Exponential map from the tangent space onto rigid transforms."""
    omega = t.omega
    theta = float(np.linalg.norm(omega))
    k = hat(omega)
    k2 = k @ k
    a, b, c = _rot_coeffs(theta)
    rot = np.eye(3) + a * k + b * k2
    v = np.eye(3) + b * k + c * k2
    return Pose(rot, v @ t.upsilon)


def so3_log(rot: np.ndarray) -> np.ndarray:
    """Principal-branch rotation vector of an orthonormal matrix, |omega| <= pi."""
    trace = np.clip((np.trace(rot) - 1.0) * 0.5, -1.0, 1.0)
    theta = float(np.arccos(trace))
    if theta < _SMALL_ANGLE:
        # First-order: R ~ I + hat(omega)
        return 0.5 * np.array([rot[2, 1] - rot[1, 2],
                               rot[0, 2] - rot[2, 0],
                               rot[1, 0] - rot[0, 1]])
    if np.pi - theta < 1e-6:
        # Near pi the antisymmetric part vanishes and arccos of the trace is
        # ill-conditioned; take the axis from the symmetric part
        # R ~ 2*outer(n, n) - I and the angle from |R - R^T| via arcsin.
        b = (rot + np.eye(3)) * 0.5
        axis_idx = int(np.argmax(np.diag(b)))
        n = b[:, axis_idx] / np.sqrt(b[axis_idx, axis_idx])
        w = np.array([rot[2, 1] - rot[1, 2],
                      rot[0, 2] - rot[2, 0],
                      rot[1, 0] - rot[0, 1]])
        theta = np.pi - np.arcsin(np.clip(0.5 * np.linalg.norm(w), 0.0, 1.0))
        # Sign from the residue; exactly at pi either sign is principal.
        if np.dot(w, n) < 0:
            n = -n
        return theta * n
    return theta / (2.0 * np.sin(theta)) * np.array([rot[2, 1] - rot[1, 2],
                                                     rot[0, 2] - rot[2, 0],
                                                     rot[1, 0] - rot[0, 1]])


def se3_log(p: Pose) -> Twist:
    """Inverse of se3_exp, principal branch."""
    omega = so3_log(p.rotation)
    theta = float(np.linalg.norm(omega))
    k = hat(omega)
    k2 = k @ k
    if theta < 1e-4:
        t2 = theta * theta
        coeff = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        coeff = (1.0 - theta * np.cos(theta * 0.5) / (2.0 * np.sin(theta * 0.5))) / (theta * theta)
    v_inv = np.eye(3) - 0.5 * k + coeff * k2
    return Twist(omega, v_inv @ p.translation)


def relative(p_i: Pose, p_j: Pose) -> Pose:
    """Transform from frame j into frame i: p_i^-1 @ p_j."""
    return p_i.inverse().compose(p_j)


def pixel_direction_cam(k: Intrinsics, u: float, v: float) -> np.ndarray:
    """Unit view direction in the camera frame through pixel center (u+0.5, v+0.5)."""
    d = np.array([(u + 0.5 - k.cx) / k.fx,
                  -(v + 0.5 - k.cy) / k.fy,
                  -1.0])
    return d / np.linalg.norm(d)


def camera_ray(pose: Pose, k: Intrinsics, pixel: tuple[float, float],
               z_near: float = 0.1, z_far: float = 10.0) -> Ray:
    """World-space ray through a pixel center.

    The pixel must lie inside the image bounds; z bounds default to a generic
    frustum and are normally supplied from the dataset manifest.
    """
    u, v = pixel
    if not (0 <= u < k.width and 0 <= v < k.height):
        raise ValueError(f"pixel ({u}, {v}) outside {k.width}x{k.height} image")
    d_cam = pixel_direction_cam(k, u, v)
    d_world = pose.rotation @ d_cam
    return Ray(pose.translation.copy(), d_world, z_near, z_far)


def rotation_to_quat(rot: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z), w >= 0."""
    t = np.trace(rot)
    if t > 0:
        s = 0.5 / np.sqrt(t + 1.0)
        q = np.array([0.25 / s,
                      (rot[2, 1] - rot[1, 2]) * s,
                      (rot[0, 2] - rot[2, 0]) * s,
                      (rot[1, 0] - rot[0, 1]) * s])
    elif rot[0, 0] > rot[1, 1] and rot[0, 0] > rot[2, 2]:
        s = 2.0 * np.sqrt(1.0 + rot[0, 0] - rot[1, 1] - rot[2, 2])
        q = np.array([(rot[2, 1] - rot[1, 2]) / s, 0.25 * s,
                      (rot[0, 1] + rot[1, 0]) / s, (rot[0, 2] + rot[2, 0]) / s])
    elif rot[1, 1] > rot[2, 2]:
        s = 2.0 * np.sqrt(1.0 + rot[1, 1] - rot[0, 0] - rot[2, 2])
        q = np.array([(rot[0, 2] - rot[2, 0]) / s, (rot[0, 1] + rot[1, 0]) / s,
                      0.25 * s, (rot[1, 2] + rot[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + rot[2, 2] - rot[0, 0] - rot[1, 1])
        q = np.array([(rot[1, 0] - rot[0, 1]) / s, (rot[0, 2] + rot[2, 0]) / s,
                      (rot[1, 2] + rot[2, 1]) / s, 0.25 * s])
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * y * y - 2 * z * z, 2 * x * y - 2 * w * z, 2 * x * z + 2 * w * y],
        [2 * x * y + 2 * w * z, 1 - 2 * x * x - 2 * z * z, 2 * y * z - 2 * w * x],
        [2 * x * z - 2 * w * y, 2 * y * z + 2 * w * x, 1 - 2 * x * x - 2 * y * y],
    ])


def save_trajectory(path, frames: list[tuple[int, Pose]]) -> None:
    """Write 'frame_index tx ty tz qw qx qy qz' lines (camera-to-world)."""
    with open(path, "w") as f:
        for idx, pose in frames:
            t = pose.translation
            q = rotation_to_quat(pose.rotation)
            f.write(f"{idx} {t[0]:.17g} {t[1]:.17g} {t[2]:.17g} "
                    f"{q[0]:.17g} {q[1]:.17g} {q[2]:.17g} {q[3]:.17g}\n")


def perturbed_pose_nodes(delta, base: Pose):
    """Left-multiplicative pose update exp(delta) @ base on the gradient tape.

    `delta` is a 6-component tape node (omega, upsilon). Returns rotation
    (3, 3) and translation (3,) nodes differentiable through delta. The
    optimizer evaluates at delta = 0 every step, so the Rodrigues
    coefficients use their series form there (exact value and derivative);
    away from zero the closed form takes over.
    """
    from . import gradcore as gc

    omega = gc.take_rows(delta, np.array([0, 1, 2]))
    upsilon = gc.take_rows(delta, np.array([3, 4, 5]))
    theta_sq = gc.dot(omega, omega)

    ex = np.array([[0.0, 0, 0], [0, 0, -1], [0, 1, 0]])
    ey = np.array([[0.0, 0, 1], [0, 0, 0], [-1, 0, 0]])
    ez = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 0]])
    wx = gc.take_rows(delta, np.array([0]))
    wy = gc.take_rows(delta, np.array([1]))
    wz = gc.take_rows(delta, np.array([2]))
    k = gc.constant(ex) * wx + gc.constant(ey) * wy + gc.constant(ez) * wz
    k2 = gc.matmul(k, k)

    if float(theta_sq.value) < 1e-4:
        a = 1.0 - theta_sq * (1.0 / 6.0) + gc.power(theta_sq, 2.0) * (1.0 / 120.0)
        b = 0.5 - theta_sq * (1.0 / 24.0) + gc.power(theta_sq, 2.0) * (1.0 / 720.0)
        c = (1.0 / 6.0) - theta_sq * (1.0 / 120.0) + gc.power(theta_sq, 2.0) * (1.0 / 5040.0)
    else:
        theta = gc.sqrt(theta_sq)
        a = gc.sin(theta) / theta
        b = (1.0 - gc.cos(theta)) / theta_sq
        c = (theta - gc.sin(theta)) / (theta_sq * theta)

    eye = gc.constant(np.eye(3))
    r_delta = eye + k * a + k2 * b
    v = eye + k * b + k2 * c
    t_delta = gc.matvec(v, upsilon)

    rot = gc.matmul(r_delta, gc.constant(base.rotation))
    trans = gc.matvec(r_delta, gc.constant(base.translation)) + t_delta
    return rot, trans


def load_trajectory(path) -> list[tuple[int, Pose]]:
    frames = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ValueError(f"bad trajectory line: {line!r}")
            idx = int(parts[0])
            t = np.array([float(x) for x in parts[1:4]])
            q = np.array([float(x) for x in parts[4:8]])
            frames.append((idx, Pose(quat_to_rotation(q), t)))
    return frames
