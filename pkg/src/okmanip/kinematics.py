"""Serial-chain kinematics and kinematic tracking of grasped-object keypoints.

A chain is a fixed base pose, a sequence of 1-DOF joints (revolute or
prismatic, each with a fixed ``origin`` offset ahead of its motion), and a
gripper offset after the last joint.  Link ``i`` is the body rigidly attached
to the frame *after* joint ``i``'s motion; its mass and center of mass (in
that link frame) drive the gravity-torque model.

Once an object is grasped, its keypoints are frozen relative to the gripper
(:func:`attach_object`) and from then on tracked purely kinematically:
``world = gripper(q) * grasp * keypoint_in_object``.

Jacobian convention: ``keypoint_jacobian(chain, q, att, label) @ qdot`` is the
keypoint's twist expressed at the keypoint origin in world axes, angular rows
on top -- the same convention :mod:`okmanip.control` consumes.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
import yaml

from .se3 import (
    OrientedKeypoint,
    Pose,
    Rotation,
    keypoint_map,
    pose_from_record,
)

REVOLUTE = "revolute"
PRISMATIC = "prismatic"


class JointLimitError(ValueError):
    """A joint position outside its configured limits reached an API boundary."""


class UnknownLabelError(KeyError):
    """Requested a keypoint label the attachment does not carry."""


@dataclass(frozen=True, eq=False)
class JointModel:
    kind: str
    axis: np.ndarray
    origin: Pose
    limits: tuple[float, float]

    def __post_init__(self):
        if self.kind not in (REVOLUTE, PRISMATIC):
            raise ValueError(f"unknown joint kind {self.kind!r}")
        a = np.asarray(self.axis, dtype=float)
        if a.shape != (3,):
            raise ValueError("joint axis must be a 3-vector")
        n = float(np.linalg.norm(a))
        if n < 1e-12:
            raise ValueError("joint axis must be nonzero")
        object.__setattr__(self, "axis", a / n)
        lo, hi = float(self.limits[0]), float(self.limits[1])
        if not lo < hi:
            raise ValueError(f"joint limits must satisfy lo < hi, got ({lo}, {hi})")
        object.__setattr__(self, "limits", (lo, hi))


@dataclass(frozen=True, eq=False)
class KinematicChain:
    joints: tuple[JointModel, ...]
    base: Pose
    end_effector_offset: Pose
    link_masses: np.ndarray
    link_coms: np.ndarray
    name: str = ""

    def __post_init__(self):
        n = len(self.joints)
        masses = np.asarray(self.link_masses, dtype=float)
        coms = np.asarray(self.link_coms, dtype=float)
        if masses.shape != (n,):
            raise ValueError(f"expected {n} link masses, got shape {masses.shape}")
        if np.any(masses < 0.0):
            raise ValueError("link masses must be non-negative")
        if coms.shape != (n, 3):
            raise ValueError(f"expected link coms of shape ({n}, 3), got {coms.shape}")
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "link_masses", masses)
        object.__setattr__(self, "link_coms", coms)

    @property
    def dof(self) -> int:
        return len(self.joints)

    def lower_limits(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    def upper_limits(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.lower_limits(), self.upper_limits())


@dataclass
class JointState:
    q: np.ndarray
    qdot: np.ndarray | None = None


def _coerce_q(chain: KinematicChain, q) -> np.ndarray:
    arr = np.asarray(q.q if isinstance(q, JointState) else q, dtype=float)
    if arr.shape != (chain.dof,):
        raise ValueError(f"expected {chain.dof} joint positions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("joint positions must be finite")
    return arr


def check_limits(chain: KinematicChain, q, slack: float = 1e-9) -> np.ndarray:
    arr = _coerce_q(chain, q)
    lo, hi = chain.lower_limits(), chain.upper_limits()
    if np.any(arr < lo - slack) or np.any(arr > hi + slack):
        bad = [
            f"joint {i}: {arr[i]:.6f} not in [{lo[i]}, {hi[i]}]"
            for i in range(chain.dof)
            if arr[i] < lo[i] - slack or arr[i] > hi[i] + slack
        ]
        raise JointLimitError("; ".join(bad))
    return arr


@dataclass(frozen=True, eq=False)
class FkResult:
    link_poses: tuple[Pose, ...]
    gripper: Pose
    joint_origins: np.ndarray  # (n, 3) world position of each joint axis point
    joint_axes: np.ndarray  # (n, 3) world direction of each joint axis


def forward_kinematics(chain: KinematicChain, q) -> FkResult:
    """Pose of every link frame and the gripper for a configuration ``q``."""
    qa = check_limits(chain, q)
    t = chain.base
    links = []
    origins = np.empty((chain.dof, 3))
    axes = np.empty((chain.dof, 3))
    for i, joint in enumerate(chain.joints):
        t = t * joint.origin
        origins[i] = t.translation
        axes[i] = t.rotation.apply(joint.axis)
        if joint.kind == REVOLUTE:
            motion = Pose.from_rotation(Rotation.from_axis_angle(joint.axis, qa[i]))
        else:
            motion = Pose.from_translation(joint.axis * qa[i])
        t = t * motion
        links.append(t)
    return FkResult(tuple(links), t * chain.end_effector_offset, origins, axes)


def gripper_pose(chain: KinematicChain, q) -> Pose:
    return forward_kinematics(chain, q).gripper


@dataclass(frozen=True, eq=False)
class AttachedObject:
    """A grasped object: grasp pose plus keypoints frozen in the object frame."""

    grasp: Pose
    keypoints: Mapping[str, OrientedKeypoint]

    def labels(self) -> list[str]:
        return list(self.keypoints)


def attach_object(
    world_keypoints: Iterable[OrientedKeypoint] | Mapping[str, OrientedKeypoint],
    gripper: Pose,
    grasp: Pose,
) -> AttachedObject:
    """Freeze world-frame keypoints into the grasped object's frame.

    ``grasp`` maps object coordinates to gripper coordinates, so the object
    frame sits at ``gripper * grasp`` in the world at grasp time.
    """
    if isinstance(world_keypoints, Mapping):
        world_keypoints = world_keypoints.values()
    hand_to_world = (gripper * grasp).inverse()
    frozen = {}
    for kp in world_keypoints:
        if kp.parent != "world":
            raise ValueError(
                f"keypoint {kp.label!r} must be expressed in 'world', got {kp.parent!r}"
            )
        frozen[kp.label] = kp.moved_to(hand_to_world * kp.frame, "object")
    return AttachedObject(grasp, keypoint_map(frozen.values()))


def _object_keypoint(att: AttachedObject, label: str) -> OrientedKeypoint:
    try:
        return att.keypoints[label]
    except KeyError:
        raise UnknownLabelError(
            f"no keypoint {label!r}; attachment has {sorted(att.keypoints)}"
        ) from None


def keypoint_world_from_fk(
    fk: FkResult, att: AttachedObject, label: str
) -> OrientedKeypoint:
    kp = _object_keypoint(att, label)
    return kp.moved_to(fk.gripper * att.grasp * kp.frame, "world")


def keypoint_world(
    chain: KinematicChain, q, att: AttachedObject, label: str
) -> OrientedKeypoint:
    """World pose of a grasped keypoint, tracked through the kinematics."""
    return keypoint_world_from_fk(forward_kinematics(chain, q), att, label)


def _cross_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cross product of (n, 3) arrays without np.cross dispatch cost."""
    out = np.empty_like(a)
    out[:, 0] = a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1]
    out[:, 1] = a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2]
    out[:, 2] = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    return out


def point_jacobian(chain: KinematicChain, fk: FkResult, point: np.ndarray) -> np.ndarray:
    """Geometric Jacobian (6 x n, angular rows first) of a world point.

    Columns follow the usual revolute/prismatic screw rows: a revolute joint
    with world axis ``a`` through ``o`` contributes ``(a, a x (p - o))``; a
    prismatic joint contributes ``(0, a)``.
    """
    n = chain.dof
    jac = np.zeros((6, n))
    rev = np.array([j.kind == REVOLUTE for j in chain.joints])
    axes = fk.joint_axes
    if np.any(rev):
        lever = point[None, :] - fk.joint_origins[rev]
        jac[:3, rev] = axes[rev].T
        jac[3:, rev] = _cross_rows(axes[rev], lever).T
    if np.any(~rev):
        jac[3:, ~rev] = axes[~rev].T
    return jac


def keypoint_jacobian_from_fk(
    chain: KinematicChain, fk: FkResult, att: AttachedObject, label: str
) -> np.ndarray:
    kp = keypoint_world_from_fk(fk, att, label)
    return point_jacobian(chain, fk, kp.position)


def keypoint_jacobian(
    chain: KinematicChain, q, att: AttachedObject, label: str
) -> np.ndarray:
    """Jacobian mapping qdot to the keypoint twist (world axes, at the keypoint)."""
    return keypoint_jacobian_from_fk(chain, forward_kinematics(chain, q), att, label)


def gripper_jacobian(chain: KinematicChain, q) -> np.ndarray:
    fk = forward_kinematics(chain, q)
    return point_jacobian(chain, fk, fk.gripper.translation)


def gravity_torque(chain: KinematicChain, q, gravity=(0.0, 0.0, -9.81)) -> np.ndarray:
    """Joint torques that statically balance gravity.

    Equal to the gradient of the total gravitational potential energy
    ``U(q) = -sum_i m_i g . c_i(q)``; commanding this torque holds the chain
    still in the quasi-static model.
    """
    g = np.asarray(gravity, dtype=float)
    fk = forward_kinematics(chain, q)
    coms_world = np.array(
        [fk.link_poses[i].apply(chain.link_coms[i]) for i in range(chain.dof)]
    )
    tau = np.zeros(chain.dof)
    for j, joint in enumerate(chain.joints):
        rows = slice(j, chain.dof)  # links j..n-1 move with joint j
        m = chain.link_masses[rows]
        if joint.kind == REVOLUTE:
            dp = np.cross(fk.joint_axes[j], coms_world[rows] - fk.joint_origins[j])
        else:
            dp = np.broadcast_to(fk.joint_axes[j], (chain.dof - j, 3))
        tau[j] = -float(m @ (dp @ g))
    return tau


def _compiled(chain: KinematicChain) -> "CompiledChain":
    """Per-chain compiled-evaluation cache (chains hash by identity)."""
    compiled = _COMPILED_CACHE.get(id(chain))
    if compiled is None or compiled.chain is not chain:
        compiled = CompiledChain(chain)
        if len(_COMPILED_CACHE) > 16:
            _COMPILED_CACHE.clear()
        _COMPILED_CACHE[id(chain)] = compiled
    return compiled


_COMPILED_CACHE: dict = {}


def _ik_descend(
    compiled: "CompiledChain",
    seed: np.ndarray,
    r_target: np.ndarray,
    p_target: np.ndarray,
    pos_tol: float,
    rot_tol: float,
    max_iters: int,
    max_step: float,
):
    """Damped least-squares descent from one seed; returns (q, err, ok)."""
    lo, hi = compiled.lo, compiled.hi
    eye = np.eye(compiled.n)

    def evaluate(qv):
        origins, axes, r, t = compiled.frames(qv)
        e_rot = Rotation.from_matrix(r_target @ r.T).rotvec()
        e_lin = p_target - t
        return origins, axes, t, e_rot, e_lin

    q = seed.copy()
    origins, axes, tool, e_rot, e_lin = evaluate(q)
    err = float(np.linalg.norm(e_rot) + np.linalg.norm(e_lin))
    mu = 1e-8
    for _ in range(max_iters):
        if np.linalg.norm(e_lin) < pos_tol and np.linalg.norm(e_rot) < rot_tol:
            return q, err, True
        jac = compiled.point_jacobian(origins, axes, tool)
        e = np.concatenate([e_rot, e_lin])
        jtj = jac.T @ jac
        jte = jac.T @ e
        stepped = False
        for _ in range(10):
            dq = np.linalg.solve(jtj + mu * eye, jte)
            step = float(np.linalg.norm(dq))
            if step > max_step:
                dq *= max_step / step
            q_new = np.clip(q + dq, lo, hi)
            new = evaluate(q_new)
            err_new = float(np.linalg.norm(new[3]) + np.linalg.norm(new[4]))
            if err_new < err:
                q, (origins, axes, tool, e_rot, e_lin), err = q_new, new, err_new
                mu = max(mu / 4.0, 1e-12)
                stepped = True
                break
            mu *= 10.0
        if not stepped:
            break  # stuck (limits or local minimum); caller tries another seed
    ok = bool(np.linalg.norm(e_lin) < pos_tol and np.linalg.norm(e_rot) < rot_tol)
    return q, err, ok


def solve_gripper_ik(
    chain: KinematicChain,
    q0,
    target: Pose,
    pos_tol: float = 1e-11,
    rot_tol: float = 1e-11,
    max_iters: int = 100,
    max_step: float = 0.5,
    limit_margin: float = 0.1,
) -> tuple[np.ndarray, bool]:
    """Place the gripper exactly at ``target`` with damped least squares.

    Descends from ``q0`` first; when the landscape traps that attempt at a
    joint limit or a wrist flip, retries from the midrange configuration and
    then from a fixed sequence of pseudo-random restarts (same every call, so
    results stay reproducible).  A converged solution with at least
    ``limit_margin`` (radians or meters) of travel left on every joint is
    returned immediately; a converged solution parked against a limit is only
    kept as a fallback, because a controller started there has no authority
    in that direction.  Returns ``(q, converged)``; every iterate respects
    the joint limits, so an unreachable target simply reports
    ``converged=False`` with the best configuration found.
    """
    q0 = np.clip(_coerce_q(chain, q0), chain.lower_limits(), chain.upper_limits())
    compiled = _compiled(chain)
    lo, hi = compiled.lo, compiled.hi
    r_target = target.rotation.as_matrix()
    p_target = np.asarray(target.translation, dtype=float)

    restarts = np.random.default_rng(1815).uniform(lo, hi, size=(22, chain.dof))
    seeds = [q0, 0.5 * (lo + hi), *restarts]
    best_q, best_err = q0, np.inf
    cramped_q, cramped_margin = None, -np.inf
    for seed in seeds:
        q, err, ok = _ik_descend(
            compiled, np.asarray(seed, float), r_target, p_target,
            pos_tol, rot_tol, max_iters, max_step,
        )
        if ok:
            margin = float(np.minimum(q - lo, hi - q).min())
            if margin >= limit_margin:
                return q, True
            if margin > cramped_margin:
                cramped_q, cramped_margin = q, margin
        elif err < best_err:
            best_q, best_err = q, err
    if cramped_q is not None:
        return cramped_q, True
    return best_q, False


class CompiledChain:
    """Array-based evaluation of a chain for tight simulation loops.

    Precomputes each joint's constant offset rotation, axis skew, and axis
    outer product so a configuration evaluates with a handful of 3x3 matrix
    products (Euler-Rodrigues for revolute motion).  Produces the same
    numbers as :func:`forward_kinematics`; the test suite pins the two
    against each other.
    """

    def __init__(self, chain: KinematicChain):
        self.chain = chain
        self.n = chain.dof
        self.revolute = np.array([j.kind == REVOLUTE for j in chain.joints])
        self.axes_local = np.array([j.axis for j in chain.joints])
        self.r_origin = np.array([j.origin.rotation.as_matrix() for j in chain.joints])
        self.t_origin = np.array([j.origin.translation for j in chain.joints])
        self.r_base = chain.base.rotation.as_matrix()
        self.t_base = chain.base.translation
        self.r_ee = chain.end_effector_offset.rotation.as_matrix()
        self.t_ee = chain.end_effector_offset.translation
        self.lo = chain.lower_limits()
        self.hi = chain.upper_limits()
        self.a_hat = np.array(
            [
                [[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]]
                for a in self.axes_local
            ]
        )
        self.a_outer = np.array([np.outer(a, a) for a in self.axes_local])
        self._eye = np.eye(3)
        self._memo_key: bytes | None = None
        self._memo_val: tuple | None = None

    def frames(self, q: np.ndarray):
        """(joint_origins, world_axes, gripper_R, gripper_t) for configuration q.

        The last evaluation is memoized by configuration bytes: one control
        tick asks for the same q several times (dynamics, sensing, believed
        keypoints).  Callers treat the returned arrays as read-only.
        """
        key = q.tobytes()
        if key == self._memo_key:
            return self._memo_val
        r = self.r_base
        t = self.t_base
        origins = np.empty((self.n, 3))
        axes = np.empty((self.n, 3))
        for i in range(self.n):
            t = r @ self.t_origin[i] + t
            r = r @ self.r_origin[i]
            origins[i] = t
            axes[i] = r @ self.axes_local[i]
            qi = q[i]
            if self.revolute[i]:
                c = np.cos(qi)
                r = r @ (
                    c * self._eye + np.sin(qi) * self.a_hat[i] + (1.0 - c) * self.a_outer[i]
                )
            else:
                t = t + r @ (self.axes_local[i] * qi)
        t = r @ self.t_ee + t
        r = r @ self.r_ee
        self._memo_key = key
        self._memo_val = (origins, axes, r, t)
        return self._memo_val

    def point_jacobian(self, origins, axes, point: np.ndarray) -> np.ndarray:
        jac = np.zeros((6, self.n))
        rev = self.revolute
        jac[:3, rev] = axes[rev].T
        jac[3:, rev] = _cross_rows(axes[rev], point[None, :] - origins[rev]).T
        if not rev.all():
            jac[3:, ~rev] = axes[~rev].T
        return jac


# --- chain definition files -------------------------------------------------


def chain_from_dict(data: Mapping) -> KinematicChain:
    try:
        joints_raw = data["joints"]
        if not isinstance(joints_raw, list) or not joints_raw:
            raise ValueError("'joints' must be a non-empty list")
        joints, masses, coms = [], [], []
        for i, j in enumerate(joints_raw):
            try:
                joints.append(
                    JointModel(
                        kind=str(j["kind"]),
                        axis=np.asarray(j["axis"], dtype=float),
                        origin=pose_from_record(j["origin"]),
                        limits=(float(j["limits"][0]), float(j["limits"][1])),
                    )
                )
                masses.append(float(j.get("mass", 0.0)))
                coms.append(np.asarray(j.get("com", (0.0, 0.0, 0.0)), dtype=float))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"joint {i}: {exc}") from exc
        return KinematicChain(
            joints=tuple(joints),
            base=pose_from_record(data.get("base", [1, 0, 0, 0, 0, 0, 0])),
            end_effector_offset=pose_from_record(
                data.get("end_effector_offset", [1, 0, 0, 0, 0, 0, 0])
            ),
            link_masses=np.array(masses),
            link_coms=np.array(coms),
            name=str(data.get("name", "")),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed chain definition: {exc}") from exc


def load_chain(path) -> KinematicChain:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"chain file {path} must hold a mapping")
    return chain_from_dict(data)


def builtin_chain(name: str = "arm6") -> KinematicChain:
    """Load one of the chain definitions shipped with the package."""
    ref = importlib.resources.files("okmanip") / "data" / f"{name}.yaml"
    with importlib.resources.as_file(ref) as path:
        return load_chain(path)
