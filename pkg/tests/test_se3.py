"""Rotation/pose algebra against independent matrix and adjoint oracles."""

import numpy as np
import pytest

from okmanip.se3 import (
    FrameMismatchError,
    OrientedKeypoint,
    Pose,
    Rotation,
    Twist,
    Wrench,
    interpolate_pose,
    keypoint_from_record,
    keypoint_map,
    keypoint_record,
    pose_between,
    pose_from_record,
    pose_record,
    power,
    require_frame,
    slerp,
    transform_twist,
    transform_wrench,
)

RNG = np.random.default_rng(7)


def random_rotation(rng=RNG) -> Rotation:
    return Rotation(rng.normal(size=4))


def random_pose(rng=RNG, scale=1.0) -> Pose:
    return Pose(random_rotation(rng), rng.normal(scale=scale, size=3))


def _hat(v):
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]], dtype=float)


# --- rotations ---------------------------------------------------------------


def test_quaternion_is_normalized_and_canonical():
    r = Rotation(np.array([-2.0, 0.0, 0.0, 2.0]))
    assert np.isclose(np.linalg.norm(r.wxyz), 1.0)
    assert r.wxyz[0] >= 0.0
    # double cover: q and -q are the same rotation and the same stored value
    q = RNG.normal(size=4)
    assert np.allclose(Rotation(q).wxyz, Rotation(-q).wxyz)


def test_quaternion_rejects_garbage():
    with pytest.raises(ValueError):
        Rotation(np.zeros(4))
    with pytest.raises(ValueError):
        Rotation(np.array([1.0, np.nan, 0.0, 0.0]))
    with pytest.raises(ValueError):
        Rotation(np.ones(3))


def test_apply_matches_matrix_product():
    for _ in range(50):
        r = random_rotation()
        v = RNG.normal(size=3)
        assert np.allclose(r.apply(v), r.as_matrix() @ v, atol=1e-14)


def test_apply_batched_rows():
    r = random_rotation()
    vs = RNG.normal(size=(11, 3))
    assert np.allclose(r.apply(vs), (r.as_matrix() @ vs.T).T, atol=1e-14)


def test_composition_matches_matrix_product():
    for _ in range(50):
        a, b = random_rotation(), random_rotation()
        assert np.allclose((a * b).as_matrix(), a.as_matrix() @ b.as_matrix(), atol=1e-13)


def test_inverse_is_transpose():
    r = random_rotation()
    assert np.allclose(r.inverse().as_matrix(), r.as_matrix().T, atol=1e-14)
    assert np.allclose((r * r.inverse()).as_matrix(), np.eye(3), atol=1e-14)


def test_matrix_round_trip_all_shepperd_branches():
    # near-identity hits the trace branch; the half-turns hit each pivot
    cases = [Rotation.from_rotvec((1e-4, 0, 0))]
    for axis in np.eye(3):
        cases.append(Rotation.from_axis_angle(axis, np.pi - 1e-3))
    cases += [random_rotation() for _ in range(40)]
    for r in cases:
        back = Rotation.from_matrix(r.as_matrix())
        assert np.allclose(back.wxyz, r.wxyz, atol=1e-12)


def test_rotvec_round_trip():
    for _ in range(50):
        rv = RNG.normal(size=3)
        rv *= RNG.uniform(0.0, np.pi - 1e-6) / np.linalg.norm(rv)
        assert np.allclose(Rotation.from_rotvec(rv).rotvec(), rv, atol=1e-12)
    assert np.allclose(Rotation.identity().rotvec(), np.zeros(3))


def test_axis_angle_tiny_angle_stable():
    r = Rotation.from_rotvec((1e-13, 0.0, 0.0))
    assert r.angle() < 1e-12


def test_from_axes_columns():
    r = random_rotation()
    m = r.as_matrix()
    r2 = Rotation.from_axes(m[:, 0], m[:, 1], m[:, 2])
    assert np.allclose(r2.wxyz, r.wxyz, atol=1e-12)
    assert np.allclose(r.x_axis(), m[:, 0], atol=1e-14)
    assert np.allclose(r.z_axis(), m[:, 2], atol=1e-14)


def test_slerp_endpoints_and_midpoint():
    a, b = random_rotation(), random_rotation()
    assert np.allclose(slerp(a, b, 0.0).wxyz, a.wxyz, atol=1e-12)
    assert np.allclose(slerp(a, b, 1.0).wxyz, b.wxyz, atol=1e-12)
    mid = slerp(a, b, 0.5)
    # midpoint is equidistant along the shortest arc
    d1 = (mid * a.inverse()).angle()
    d2 = (b * mid.inverse()).angle()
    assert np.isclose(d1, d2, atol=1e-10)


# --- poses -------------------------------------------------------------------


def test_pose_compose_and_apply_agree():
    for _ in range(30):
        a, b = random_pose(), random_pose()
        p = RNG.normal(size=3)
        assert np.allclose((a * b).apply(p), a.apply(b.apply(p)), atol=1e-12)


def test_pose_inverse():
    t = random_pose()
    p = RNG.normal(size=3)
    assert np.allclose(t.inverse().apply(t.apply(p)), p, atol=1e-12)
    ident = t * t.inverse()
    assert np.allclose(ident.translation, 0.0, atol=1e-13)
    assert ident.rotation.angle() < 1e-12


def test_interpolate_pose_endpoints():
    a, b = random_pose(), random_pose()
    for alpha, ref in ((0.0, a), (1.0, b)):
        m = interpolate_pose(a, b, alpha)
        assert np.allclose(m.translation, ref.translation, atol=1e-14)
        assert (m.rotation * ref.rotation.inverse()).angle() < 1e-12


def test_pose_translation_is_frozen():
    t = Pose.from_translation((1.0, 2.0, 3.0))
    with pytest.raises(ValueError):
        t.translation[0] = 9.0


# --- twists and wrenches -----------------------------------------------------


def test_vector_round_trip_and_shape_checks():
    tw = Twist.from_vector(np.arange(6.0), "a")
    assert np.allclose(tw.as_vector(), np.arange(6.0))
    assert tw.expressed_in == "a"
    wr = Wrench.from_vector(np.arange(6.0), "b")
    assert np.allclose(wr.as_vector(), np.arange(6.0))
    with pytest.raises(ValueError):
        Twist.from_vector(np.arange(5.0), "a")
    with pytest.raises(ValueError):
        Wrench(np.zeros(2), np.zeros(3), "b")


def twist_adjoint(rel: Pose) -> np.ndarray:
    """Independent 6x6 oracle: angular' = R w, linear' = R v + p x (R w)."""
    r = rel.rotation.as_matrix()
    out = np.zeros((6, 6))
    out[:3, :3] = r
    out[3:, 3:] = r
    out[3:, :3] = _hat(rel.translation) @ r
    return out


def wrench_adjoint(rel: Pose) -> np.ndarray:
    r = rel.rotation.as_matrix()
    out = np.zeros((6, 6))
    out[:3, :3] = r
    out[3:, 3:] = r
    out[:3, 3:] = _hat(rel.translation) @ r
    return out


def test_transform_twist_matches_adjoint_oracle():
    for _ in range(50):
        rel = random_pose()
        tw = Twist.from_vector(RNG.normal(size=6), "src")
        got = transform_twist(rel, tw, "dst")
        assert got.expressed_in == "dst"
        assert np.allclose(got.as_vector(), twist_adjoint(rel) @ tw.as_vector(), atol=1e-12)


def test_transform_wrench_matches_adjoint_oracle():
    for _ in range(50):
        rel = random_pose()
        wr = Wrench.from_vector(RNG.normal(size=6), "src")
        got = transform_wrench(rel, wr, "dst")
        assert np.allclose(got.as_vector(), wrench_adjoint(rel) @ wr.as_vector(), atol=1e-12)


def test_transform_round_trip():
    rel = random_pose()
    tw = Twist.from_vector(RNG.normal(size=6), "a")
    back = transform_twist(rel.inverse(), transform_twist(rel, tw, "b"), "a")
    assert np.allclose(back.as_vector(), tw.as_vector(), atol=1e-12)


def test_power_invariance_under_shared_transform():
    # <w, t> is frame independent when both move together; 1000 samples
    rng = np.random.default_rng(2026)
    worst = 0.0
    for _ in range(1000):
        rel = Pose(Rotation(rng.normal(size=4)), rng.normal(scale=2.0, size=3))
        tw = Twist.from_vector(rng.normal(size=6), "a")
        wr = Wrench.from_vector(rng.normal(size=6), "a")
        before = power(wr, tw)
        after = power(transform_wrench(rel, wr, "b"), transform_twist(rel, tw, "b"))
        worst = max(worst, abs(after - before))
    assert worst < 1e-10


def test_power_requires_matching_frames():
    with pytest.raises(FrameMismatchError):
        power(Wrench.zero("a"), Twist.zero("b"))
    with pytest.raises(FrameMismatchError):
        require_frame("x", "y")


# --- oriented keypoints ------------------------------------------------------


def test_pose_between_recovers_target():
    for _ in range(30):
        cur = OrientedKeypoint("k", random_pose(), "world")
        tgt = OrientedKeypoint("k", random_pose(), "world")
        t = pose_between(cur, tgt)
        moved = t * cur.frame
        assert np.allclose(moved.translation, tgt.frame.translation, atol=1e-12)
        assert (moved.rotation * tgt.frame.rotation.inverse()).angle() < 1e-12


def test_pose_between_rejects_parent_mismatch():
    a = OrientedKeypoint("k", Pose.identity(), "world")
    b = OrientedKeypoint("k", Pose.identity(), "object")
    with pytest.raises(FrameMismatchError):
        pose_between(a, b)


def test_keypoint_map_rejects_duplicates():
    kp = OrientedKeypoint("k", Pose.identity(), "world")
    with pytest.raises(ValueError, match="duplicate"):
        keypoint_map([kp, kp])


# --- records -----------------------------------------------------------------


def test_pose_record_round_trip():
    p = random_pose()
    back = pose_from_record(pose_record(p))
    assert np.allclose(back.translation, p.translation, atol=1e-15)
    assert np.allclose(back.rotation.wxyz, p.rotation.wxyz, atol=1e-15)
    with pytest.raises(ValueError):
        pose_from_record([1, 0, 0, 0])


def test_keypoint_record_round_trip():
    kp = OrientedKeypoint("peg_end", random_pose(), "world")
    back = keypoint_from_record(keypoint_record(kp))
    assert back.label == kp.label and back.parent == kp.parent
    assert np.allclose(back.position, kp.position, atol=1e-15)
