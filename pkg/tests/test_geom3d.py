import numpy as np
import pytest

from icon import geom3d
from icon.geom3d import Intrinsics, Pose, Twist


def random_twist(rng, max_angle=3.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, max_angle)
    return Twist(angle * axis, rng.normal(size=3))


def test_exp_zero_twist_is_identity():
    p = geom3d.se3_exp(Twist.zero())
    assert np.allclose(p.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(p.translation, 0.0, atol=1e-12)


def test_exp_quarter_turn_about_z():
    p = geom3d.se3_exp(Twist(np.array([0.0, 0.0, np.pi / 2]), np.zeros(3)))
    assert np.allclose(p.rotation @ np.array([1.0, 0, 0]), [0, 1, 0], atol=1e-12)


def test_exp_log_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        t = random_twist(rng)
        back = geom3d.se3_log(geom3d.se3_exp(t))
        assert np.allclose(back.omega, t.omega, atol=1e-8)
        assert np.allclose(back.upsilon, t.upsilon, atol=1e-8)


def test_log_identity_and_pure_translation():
    t = geom3d.se3_log(Pose.identity())
    assert np.allclose(t.as_vector(), 0.0, atol=1e-12)
    t = geom3d.se3_log(Pose(np.eye(3), np.array([0.3, 0.0, 0.0])))
    assert np.allclose(t.omega, 0.0, atol=1e-12)
    assert np.allclose(t.upsilon, [0.3, 0, 0], atol=1e-12)


def test_log_angle_pi():
    for axis in [np.array([1.0, 0, 0]), np.array([0, 1.0, 0]),
                 np.array([0.6, 0.8, 0.0]), np.array([0.0, -0.6, 0.8])]:
        t = Twist(np.pi * axis, np.array([0.1, -0.2, 0.3]))
        p = geom3d.se3_exp(t)
        back = geom3d.se3_exp(geom3d.se3_log(p))
        assert np.allclose(back.rotation, p.rotation, atol=1e-8)
        assert np.allclose(back.translation, p.translation, atol=1e-8)


def test_log_exp_bch_first_order():
    # log(A * exp(eps)) ~ log(A) + J * eps; check the O(|eps|^2) remainder
    # by halving eps and watching the error drop ~4x.
    rng = np.random.default_rng(1)
    a = geom3d.se3_exp(random_twist(rng, max_angle=1.0))
    base = geom3d.se3_log(a).as_vector()
    errs = []
    for scale in (1e-3, 5e-4):
        eps = scale * np.array([1.0, -0.5, 0.3, 0.2, 0.1, -0.4])
        composed = a.compose(geom3d.se3_exp(Twist.from_vector(eps)))
        lhs = geom3d.se3_log(composed).as_vector()
        errs.append(np.linalg.norm(lhs - base) / scale)
    # the scaled first-order response converges as eps -> 0
    assert abs(errs[0] - errs[1]) < 1e-3 * max(errs[0], 1.0)


def test_composition_associative():
    rng = np.random.default_rng(2)
    for _ in range(100):
        a, b, c = (geom3d.se3_exp(random_twist(rng)) for _ in range(3))
        left = a.compose(b).compose(c)
        right = a.compose(b.compose(c))
        assert np.allclose(left.rotation, right.rotation, atol=1e-10)
        assert np.allclose(left.translation, right.translation, atol=1e-10)


def test_compose_inverse_is_identity():
    rng = np.random.default_rng(3)
    for _ in range(100):
        p = geom3d.se3_exp(random_twist(rng))
        q = p.compose(p.inverse())
        assert np.allclose(q.rotation, np.eye(3), atol=1e-9)
        assert np.allclose(q.translation, 0.0, atol=1e-9)


def test_relative_identities():
    rng = np.random.default_rng(4)
    p = geom3d.se3_exp(random_twist(rng))
    r = geom3d.relative(p, p)
    assert np.allclose(r.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(r.translation, 0.0, atol=1e-12)
    r = geom3d.relative(Pose.identity(), p)
    assert np.allclose(r.rotation, p.rotation, atol=1e-12)
    assert np.allclose(r.translation, p.translation, atol=1e-12)


def test_relative_composes_back():
    rng = np.random.default_rng(5)
    for _ in range(50):
        p_i = geom3d.se3_exp(random_twist(rng))
        p_j = geom3d.se3_exp(random_twist(rng))
        rel = geom3d.relative(p_i, p_j)
        back = p_i.compose(rel)
        assert np.allclose(back.rotation, p_j.rotation, atol=1e-10)
        assert np.allclose(back.translation, p_j.translation, atol=1e-10)


K = Intrinsics(fx=100.0, fy=100.0, cx=32.0, cy=32.0, width=64, height=64)


def test_camera_ray_optical_axis():
    # pixel whose center is the principal point
    ray = geom3d.camera_ray(Pose.identity(), K, (31.5, 31.5))
    assert np.allclose(ray.direction, [0, 0, -1], atol=1e-12)
    assert np.allclose(ray.origin, 0.0)


def test_camera_ray_pinhole_backprojection():
    ray = geom3d.camera_ray(Pose.identity(), K, (32, 32))
    expect = np.array([0.005, -0.005, -1.0])
    expect /= np.linalg.norm(expect)
    assert np.allclose(ray.direction, expect, atol=1e-12)


def test_camera_ray_unit_norm_and_shared_origin():
    rng = np.random.default_rng(6)
    pose = geom3d.se3_exp(random_twist(rng))
    origins = []
    for _ in range(50):
        u = rng.uniform(0, K.width - 1e-9)
        v = rng.uniform(0, K.height - 1e-9)
        ray = geom3d.camera_ray(pose, K, (u, v))
        assert abs(np.linalg.norm(ray.direction) - 1.0) < 1e-12
        origins.append(ray.origin)
    assert np.allclose(origins, origins[0])


def test_camera_ray_rejects_out_of_bounds():
    with pytest.raises(ValueError):
        geom3d.camera_ray(Pose.identity(), K, (64, 10))
    with pytest.raises(ValueError):
        geom3d.camera_ray(Pose.identity(), K, (10, -1))


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        Intrinsics(fx=-1, fy=1, cx=0, cy=0, width=4, height=4)
    with pytest.raises(ValueError):
        Intrinsics(fx=1, fy=1, cx=5, cy=0, width=4, height=4)


def test_quaternion_round_trip():
    rng = np.random.default_rng(7)
    for _ in range(200):
        r = geom3d.se3_exp(random_twist(rng)).rotation
        q = geom3d.rotation_to_quat(r)
        assert abs(np.linalg.norm(q) - 1.0) < 1e-12
        assert np.allclose(geom3d.quat_to_rotation(q), r, atol=1e-10)


def test_trajectory_io_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    frames = [(i, geom3d.se3_exp(random_twist(rng))) for i in range(10)]
    path = tmp_path / "traj.txt"
    geom3d.save_trajectory(path, frames)
    loaded = geom3d.load_trajectory(path)
    assert [i for i, _ in loaded] == list(range(10))
    for (_, a), (_, b) in zip(frames, loaded):
        assert np.allclose(a.rotation, b.rotation, atol=1e-12)
        assert np.allclose(a.translation, b.translation, atol=1e-12)
