"""Rigid-body algebra with explicit frame bookkeeping.

Rotations are unit quaternions stored as ``(w, x, y, z)``, renormalized on
construction and canonicalized to ``w >= 0`` so that equal rotations have
equal components.  Poses map points from their child frame into their parent
frame: ``p_parent = R @ p + t``.

Twists and wrenches are body quantities *expressed at a named frame*:

* ``Twist``  -- ``(angular, linear)``: the body's angular velocity and the
  linear velocity of the body point currently coincident with the frame
  origin, both written in the frame's axes.
* ``Wrench`` -- ``(torque, force)``: the moment about the frame origin and
  the net force, both written in the frame's axes.

``transform_twist`` and ``transform_wrench`` re-express these quantities at a
different frame.  ``rel`` is the pose of the *source* frame in the
*destination* frame (``R``, ``p`` below)::

    angular' = R w                  torque' = R tau + p x (R f)
    linear'  = R v + p x (R w)      force'  = R f

The two maps are dual: the instantaneous power ``<wrench, twist> =
torque . angular + force . linear`` is unchanged when both operands are
transformed with the same ``rel``.

Frame identifiers are plain strings compared at operation boundaries; mixing
frames raises :class:`FrameMismatchError` instead of silently producing
garbage.  Throughout this package a twist or wrench tagged with a keypoint
label is expressed at that keypoint's origin in the enclosing episode's
working-frame axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

_EPS = 1e-12


class FrameMismatchError(ValueError):
    """Raised when an operation receives a quantity expressed in the wrong frame."""


def _finite(name: str, arr: np.ndarray) -> np.ndarray:
    # sum() is finite iff every element is (inf/nan both poison it), and is
    # far cheaper than an elementwise isfinite reduction on tiny arrays.
    if not math.isfinite(float(arr.sum())):
        raise ValueError(f"{name} must be finite, got {arr!r}")
    return arr


def _cross(a, b) -> np.ndarray:
    """Cross product for plain 3-vectors without np.cross dispatch overhead."""
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def _vec3(value, name: str = "vector") -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have shape (3,), got {arr.shape}")
    return _finite(name, arr)


def require_frame(actual: str, expected: str, what: str = "quantity") -> None:
    """Check a frame identifier at an operation boundary."""
    if actual != expected:
        raise FrameMismatchError(
            f"{what} expressed in frame {actual!r}, expected {expected!r}"
        )


@dataclass(frozen=True, eq=False)
class Rotation:
    """A 3-D rotation as a canonical unit quaternion (w, x, y, z)."""

    wxyz: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.wxyz, dtype=float).copy()
        if q.shape != (4,):
            raise ValueError(f"quaternion must have shape (4,), got {q.shape}")
        _finite("quaternion", q)
        n = math.sqrt(float(q @ q))
        if n < _EPS:
            raise ValueError("zero-norm quaternion")
        q /= n
        # Canonical sign: w >= 0; tie-break on the first nonzero component.
        if q[0] < 0.0 or (q[0] == 0.0 and q[np.nonzero(q)[0][0]] < 0.0):
            q = -q
        q.flags.writeable = False
        object.__setattr__(self, "wxyz", q)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Rotation":
        a = _vec3(axis, "axis")
        n = float(np.linalg.norm(a))
        if n < _EPS:
            raise ValueError("rotation axis must be nonzero")
        half = 0.5 * float(angle)
        return cls(np.concatenate(([np.cos(half)], np.sin(half) * a / n)))

    @classmethod
    def from_rotvec(cls, rotvec) -> "Rotation":
        rv = _vec3(rotvec, "rotvec")
        angle = float(np.linalg.norm(rv))
        if angle < _EPS:
            # First-order quaternion; renormalized by the constructor.
            return cls(np.concatenate(([1.0], 0.5 * rv)))
        return cls.from_axis_angle(rv / angle, angle)

    @classmethod
    def from_matrix(cls, matrix) -> "Rotation":
        """Quaternion extraction via the largest-pivot (Shepperd) branch."""
        m = np.asarray(matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got {m.shape}")
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > max(m[0, 0], m[1, 1], m[2, 2]):
            s = 2.0 * np.sqrt(1.0 + tr)
            q = np.array(
                [
                    0.25 * s,
                    (m[2, 1] - m[1, 2]) / s,
                    (m[0, 2] - m[2, 0]) / s,
                    (m[1, 0] - m[0, 1]) / s,
                ]
            )
        else:
            i = int(np.argmax([m[0, 0], m[1, 1], m[2, 2]]))
            j, k = (i + 1) % 3, (i + 2) % 3
            s = 2.0 * np.sqrt(max(1.0 + m[i, i] - m[j, j] - m[k, k], 0.0))
            q = np.empty(4)
            q[0] = (m[k, j] - m[j, k]) / s
            q[1 + i] = 0.25 * s
            q[1 + j] = (m[j, i] + m[i, j]) / s
            q[1 + k] = (m[k, i] + m[i, k]) / s
        return cls(q)

    @classmethod
    def from_axes(cls, x_axis, y_axis, z_axis) -> "Rotation":
        """Rotation whose columns are the given (orthonormal) axes."""
        return cls.from_matrix(np.column_stack([_vec3(x_axis), _vec3(y_axis), _vec3(z_axis)]))

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self.wxyz
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def apply(self, vec) -> np.ndarray:
        """Rotate a 3-vector: v' = v + 2w(u x v) + 2u x (u x v)."""
        v = np.asarray(vec, dtype=float)
        if v.ndim != 1:
            return v @ self.as_matrix().T
        w, ux, uy, uz = self.wxyz
        vx, vy, vz = v
        cx = uy * vz - uz * vy
        cy = uz * vx - ux * vz
        cz = ux * vy - uy * vx
        return np.array(
            [
                vx + 2.0 * (w * cx + uy * cz - uz * cy),
                vy + 2.0 * (w * cy + uz * cx - ux * cz),
                vz + 2.0 * (w * cz + ux * cy - uy * cx),
            ]
        )

    def __mul__(self, other: "Rotation") -> "Rotation":
        w1, x1, y1, z1 = self.wxyz
        w2, x2, y2, z2 = other.wxyz
        return Rotation(
            np.array(
                [
                    w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
                    w1 * x2 + w2 * x1 + y1 * z2 - z1 * y2,
                    w1 * y2 + w2 * y1 + z1 * x2 - x1 * z2,
                    w1 * z2 + w2 * z1 + x1 * y2 - y1 * x2,
                ]
            )
        )

    def inverse(self) -> "Rotation":
        return Rotation(self.wxyz * np.array([1.0, -1.0, -1.0, -1.0]))

    def rotvec(self) -> np.ndarray:
        """Axis-angle vector with angle in [0, pi] (canonical w >= 0)."""
        w = self.wxyz[0]
        u = self.wxyz[1:]
        s = float(np.linalg.norm(u))
        if s < _EPS:
            return 2.0 * u
        angle = 2.0 * np.arctan2(s, w)
        return (angle / s) * u

    def angle(self) -> float:
        """Rotation angle in [0, pi]."""
        return float(np.linalg.norm(self.rotvec()))

    def x_axis(self) -> np.ndarray:
        return self.apply(np.array([1.0, 0.0, 0.0]))

    def y_axis(self) -> np.ndarray:
        return self.apply(np.array([0.0, 1.0, 0.0]))

    def z_axis(self) -> np.ndarray:
        return self.apply(np.array([0.0, 0.0, 1.0]))


def slerp(a: Rotation, b: Rotation, alpha: float) -> Rotation:
    """Spherical interpolation from a (alpha=0) to b (alpha=1), shortest arc."""
    qa, qb = a.wxyz, b.wxyz
    dot = float(qa @ qb)
    if dot < 0.0:
        qb, dot = -qb, -dot
    if dot > 1.0 - 1e-10:
        return Rotation(qa + alpha * (qb - qa))
    theta = np.arccos(min(dot, 1.0))
    s = np.sin(theta)
    return Rotation(np.sin((1 - alpha) * theta) / s * qa + np.sin(alpha * theta) / s * qb)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform child->parent: p_parent = rotation @ p + translation."""

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        t = _vec3(self.translation, "translation").copy()
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(Rotation.identity(), np.zeros(3))

    @classmethod
    def from_translation(cls, xyz) -> "Pose":
        return cls(Rotation.identity(), _vec3(xyz))

    @classmethod
    def from_rotation(cls, rotation: Rotation) -> "Pose":
        return cls(rotation, np.zeros(3))

    def apply(self, point) -> np.ndarray:
        return self.rotation.apply(point) + self.translation

    def __mul__(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation * other.rotation,
            self.rotation.apply(other.translation) + self.translation,
        )

    def inverse(self) -> "Pose":
        rinv = self.rotation.inverse()
        return Pose(rinv, -rinv.apply(self.translation))


def compose(a: Pose, b: Pose) -> Pose:
    """Pose composition: (a * b).apply(p) == a.apply(b.apply(p))."""
    return a * b


def interpolate_pose(a: Pose, b: Pose, alpha: float) -> Pose:
    """Linear translation blend plus shortest-arc rotation slerp."""
    return Pose(
        slerp(a.rotation, b.rotation, alpha),
        (1.0 - alpha) * a.translation + alpha * b.translation,
    )


@dataclass(frozen=True, eq=False)
class Twist:
    """Body twist expressed at a named frame (angular first)."""

    angular: np.ndarray
    linear: np.ndarray
    expressed_in: str

    def __post_init__(self):
        object.__setattr__(self, "angular", _vec3(self.angular, "angular"))
        object.__setattr__(self, "linear", _vec3(self.linear, "linear"))

    @classmethod
    def zero(cls, frame: str) -> "Twist":
        return cls(np.zeros(3), np.zeros(3), frame)

    @classmethod
    def from_vector(cls, vec, frame: str) -> "Twist":
        v = np.asarray(vec, dtype=float)
        if v.shape != (6,):
            raise ValueError(f"twist vector must have shape (6,), got {v.shape}")
        return cls(v[:3], v[3:], frame)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.angular, self.linear])


@dataclass(frozen=True, eq=False)
class Wrench:
    """Wrench expressed at a named frame (torque first, pairing with Twist)."""

    torque: np.ndarray
    force: np.ndarray
    expressed_at: str

    def __post_init__(self):
        object.__setattr__(self, "torque", _vec3(self.torque, "torque"))
        object.__setattr__(self, "force", _vec3(self.force, "force"))

    @classmethod
    def zero(cls, frame: str) -> "Wrench":
        return cls(np.zeros(3), np.zeros(3), frame)

    @classmethod
    def from_vector(cls, vec, frame: str) -> "Wrench":
        v = np.asarray(vec, dtype=float)
        if v.shape != (6,):
            raise ValueError(f"wrench vector must have shape (6,), got {v.shape}")
        return cls(v[:3], v[3:], frame)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.torque, self.force])


def transform_twist(rel: Pose, twist: Twist, to_frame: str) -> Twist:
    """Re-express a twist at a new frame; ``rel`` is the source frame's pose in it."""
    w = rel.rotation.apply(twist.angular)
    v = rel.rotation.apply(twist.linear) + _cross(rel.translation, w)
    return Twist(w, v, to_frame)


def transform_wrench(rel: Pose, wrench: Wrench, to_frame: str) -> Wrench:
    """Re-express a wrench at a new frame; ``rel`` is the source frame's pose in it."""
    f = rel.rotation.apply(wrench.force)
    tau = rel.rotation.apply(wrench.torque) + _cross(rel.translation, f)
    return Wrench(tau, f, to_frame)


def power(wrench: Wrench, twist: Twist) -> float:
    """Instantaneous power; both operands must share a frame."""
    require_frame(twist.expressed_in, wrench.expressed_at, "twist")
    return float(wrench.torque @ twist.angular + wrench.force @ twist.linear)


@dataclass(frozen=True, eq=False)
class OrientedKeypoint:
    """A semantic point with an attached full frame (position + axes)."""

    label: str
    frame: Pose
    parent: str

    @property
    def position(self) -> np.ndarray:
        return self.frame.translation

    def moved_to(self, frame: Pose, parent: str) -> "OrientedKeypoint":
        return OrientedKeypoint(self.label, frame, parent)


def pose_between(current: OrientedKeypoint, target: OrientedKeypoint) -> Pose:
    """The rigid transform T with T * current.frame == target.frame.

    Both keypoints must live in the same parent frame.
    """
    if current.parent != target.parent:
        raise FrameMismatchError(
            f"keypoints live in different parents: {current.parent!r} vs {target.parent!r}"
        )
    return target.frame * current.frame.inverse()


# --- flat numeric records (scenario files, trial logs) ---------------------


def pose_record(pose: Pose) -> list:
    """Pose as a flat [qw, qx, qy, qz, x, y, z] record."""
    return [float(v) for v in np.concatenate([pose.rotation.wxyz, pose.translation])]

def pose_from_record(record: Sequence) -> Pose:
    arr = np.asarray(record, dtype=float)
    if arr.shape != (7,):
        raise ValueError(f"pose record must have 7 entries, got {arr.shape}")
    return Pose(Rotation(arr[:4]), arr[4:])


def keypoint_record(kp: OrientedKeypoint) -> dict:
    return {"label": kp.label, "parent": kp.parent, "pose": pose_record(kp.frame)}


def keypoint_from_record(record: Mapping) -> OrientedKeypoint:
    return OrientedKeypoint(
        str(record["label"]), pose_from_record(record["pose"]), str(record["parent"])
    )


def keypoint_map(keypoints: Iterable[OrientedKeypoint]) -> dict:
    """Index keypoints by label, rejecting duplicates."""
    out: dict[str, OrientedKeypoint] = {}
    for kp in keypoints:
        if kp.label in out:
            raise ValueError(f"duplicate keypoint label {kp.label!r}")
        out[kp.label] = kp
    return out
