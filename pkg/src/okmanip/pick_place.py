"""Pick-and-place goals on keypoints and the transforms that satisfy them.

A placement goal is a list of constraints on where an object's keypoints
should end up: point targets (meters), axis targets (radians), or full frame
targets.  :func:`solve_placement` finds the rigid transform to apply to the
grasped object by Levenberg-Marquardt on SE(3) with an axis-angle local
parameterization.  When the goal is one full-frame target on an oriented
keypoint the optimizer is unnecessary: :func:`solve_oriented` returns the
answer in closed form, and both routes are checked against each other in the
test suite.

:func:`stage_pick_place` turns a solved transform into a joint trajectory by
interpolating the gripper pose in task space and resolving each step through
the damped least-squares velocity map.  It delivers the object to the goal
and hands off to a closed-loop agent; it does not plan around obstacles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .control import VelocityResolutionConfig, resolve_velocity
from .kinematics import (
    AttachedObject,
    KinematicChain,
    _compiled,
    forward_kinematics,
    keypoint_world_from_fk,
    solve_gripper_ik,
)
from .se3 import (
    OrientedKeypoint,
    Pose,
    Rotation,
    Twist,
    interpolate_pose,
    pose_between,
)

_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}


class InfeasibleGoalError(ValueError):
    """A goal is structurally unusable (degenerate axis, missing orientation...)."""


@dataclass(frozen=True)
class PointTarget:
    """Keypoint position must reach ``target`` (world meters)."""

    label: str
    target: tuple[float, float, float]
    tolerance: float = 1e-6


@dataclass(frozen=True)
class AxisTarget:
    """A body direction must align with ``target_axis`` (tolerance in rad).

    The direction is either the unit vector from keypoint ``label`` to
    keypoint ``label_to``, or (exclusively) the ``axis`` ('x'|'y'|'z') of
    keypoint ``label``'s own frame.
    """

    label: str
    target_axis: tuple[float, float, float]
    label_to: str | None = None
    axis: str | None = None
    tolerance: float = 1e-6

    def __post_init__(self):
        if (self.label_to is None) == (self.axis is None):
            raise InfeasibleGoalError(
                "axis constraint needs exactly one of label_to or axis"
            )
        if self.axis is not None and self.axis not in _AXIS_INDEX:
            raise InfeasibleGoalError(f"axis must be one of x/y/z, got {self.axis!r}")


@dataclass(frozen=True)
class FrameTarget:
    """Keypoint frame must land on ``target`` (position and orientation)."""

    label: str
    target: Pose
    position_tolerance: float = 1e-6
    rotation_tolerance: float = 1e-6


Constraint = PointTarget | AxisTarget | FrameTarget


@dataclass(frozen=True)
class PlacementGoal:
    constraints: tuple[Constraint, ...]

    def __post_init__(self):
        if not self.constraints:
            raise InfeasibleGoalError("goal has no constraints")
        object.__setattr__(self, "constraints", tuple(self.constraints))


@dataclass(frozen=True)
class PlacementSolution:
    transform: Pose
    residuals: tuple[float, ...]
    tolerances: tuple[float, ...]
    converged: bool
    iterations: int

    @property
    def max_residual(self) -> float:
        return max(self.residuals)


def _lookup(keypoints: Mapping, label: str) -> tuple[np.ndarray, Rotation | None]:
    try:
        kp = keypoints[label]
    except KeyError:
        raise InfeasibleGoalError(f"goal references unknown keypoint {label!r}") from None
    if isinstance(kp, OrientedKeypoint):
        return kp.position, kp.frame.rotation
    pos = np.asarray(kp, dtype=float)
    if pos.shape != (3,):
        raise InfeasibleGoalError(
            f"keypoint {label!r} must be an OrientedKeypoint or a 3-vector"
        )
    return pos, None


def _unit(vec, what: str) -> np.ndarray:
    v = np.asarray(vec, dtype=float)
    n = float(np.linalg.norm(v))
    if n < 1e-9:
        raise InfeasibleGoalError(f"{what} is degenerate (norm {n:.2e})")
    return v / n


def _hat(v: np.ndarray) -> np.ndarray:
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )


@dataclass
class _Block:
    """One least-squares block: either a point to place or a direction to align."""

    kind: str  # "point" | "direction"
    body: np.ndarray  # point coords or unit direction, in the start pose
    target: np.ndarray


def _compile(goal: PlacementGoal, keypoints: Mapping) -> list[list[_Block]]:
    """Per-constraint residual blocks, measured off the objects' start pose."""
    compiled = []
    for c in goal.constraints:
        if isinstance(c, PointTarget):
            pos, _ = _lookup(keypoints, c.label)
            compiled.append([_Block("point", pos, np.asarray(c.target, dtype=float))])
        elif isinstance(c, AxisTarget):
            pos, rot = _lookup(keypoints, c.label)
            if c.label_to is not None:
                other, _ = _lookup(keypoints, c.label_to)
                body = _unit(other - pos, f"axis {c.label}->{c.label_to}")
            else:
                if rot is None:
                    raise InfeasibleGoalError(
                        f"axis constraint on {c.label!r} needs an oriented keypoint"
                    )
                body = rot.as_matrix()[:, _AXIS_INDEX[c.axis]]
            compiled.append([_Block("direction", body, _unit(c.target_axis, "target axis"))])
        elif isinstance(c, FrameTarget):
            pos, rot = _lookup(keypoints, c.label)
            if rot is None:
                raise InfeasibleGoalError(
                    f"frame constraint on {c.label!r} needs an oriented keypoint"
                )
            blocks = [_Block("point", pos, c.target.translation)]
            rm, tm = rot.as_matrix(), c.target.rotation.as_matrix()
            for k in range(3):
                blocks.append(_Block("direction", rm[:, k], tm[:, k]))
            compiled.append(blocks)
        else:
            raise InfeasibleGoalError(f"unknown constraint type {type(c).__name__}")
    return compiled


def _stack(compiled, transform: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Residual vector and its Jacobian wrt a left increment (rotvec, translation)."""
    rows_r, rows_j = [], []
    for blocks in compiled:
        for b in blocks:
            if b.kind == "point":
                w = transform.apply(b.body)
                jac = np.hstack([-_hat(w), np.eye(3)])
            else:
                w = transform.rotation.apply(b.body)
                jac = np.hstack([-_hat(w), np.zeros((3, 3))])
            rows_r.append(w - b.target)
            rows_j.append(jac)
    return np.concatenate(rows_r), np.vstack(rows_j)


def _angle_between(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.arctan2(np.linalg.norm(np.cross(a, b)), float(a @ b)))


def _score(goal: PlacementGoal, compiled, transform: Pose):
    """Per-constraint scalar residuals (m or rad) and their tolerances."""
    residuals, tolerances = [], []
    for c, blocks in zip(goal.constraints, compiled):
        if isinstance(c, PointTarget):
            w = transform.apply(blocks[0].body)
            residuals.append(float(np.linalg.norm(w - blocks[0].target)))
            tolerances.append(c.tolerance)
        elif isinstance(c, AxisTarget):
            d = transform.rotation.apply(blocks[0].body)
            residuals.append(_angle_between(d, blocks[0].target))
            tolerances.append(c.tolerance)
        else:  # FrameTarget: one position entry and one rotation-angle entry
            w = transform.apply(blocks[0].body)
            residuals.append(float(np.linalg.norm(w - blocks[0].target)))
            tolerances.append(c.position_tolerance)
            axes_now = np.column_stack(
                [transform.rotation.apply(b.body) for b in blocks[1:]]
            )
            axes_tgt = np.column_stack([b.target for b in blocks[1:]])
            rel = Rotation.from_matrix(axes_tgt @ axes_now.T)
            residuals.append(rel.angle())
            tolerances.append(c.rotation_tolerance)
    return tuple(residuals), tuple(tolerances)


def evaluate_goal(goal: PlacementGoal, keypoints: Mapping) -> PlacementSolution:
    """Score keypoints against a goal as-is (identity transform)."""
    compiled = _compile(goal, keypoints)
    residuals, tolerances = _score(goal, compiled, Pose.identity())
    return PlacementSolution(
        Pose.identity(),
        residuals,
        tolerances,
        all(r <= t for r, t in zip(residuals, tolerances)),
        0,
    )


def solve_placement(
    keypoints: Mapping,
    goal: PlacementGoal,
    seed_pose: Pose | None = None,
    max_iterations: int = 100,
    step_tolerance: float = 1e-12,
) -> PlacementSolution:
    """Rigid transform of the object that satisfies the goal's constraints.

    Levenberg-Marquardt over SE(3); each iterate applies a left increment
    ``(exp(rotvec), dt)``.  Deterministic: the same keypoints, goal, and seed
    pose always produce the same solution, including the free spin left by
    rotationally symmetric goals.
    """
    compiled = _compile(goal, keypoints)
    transform = seed_pose if seed_pose is not None else Pose.identity()
    r, jac = _stack(compiled, transform)
    cost = 0.5 * float(r @ r)
    mu = 1e-6
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        jtj = jac.T @ jac
        jtr = jac.T @ r
        stepped = False
        while mu < 1e10:
            delta = np.linalg.solve(jtj + mu * np.eye(6), -jtr)
            candidate = Pose(Rotation.from_rotvec(delta[:3]), delta[3:]) * transform
            r_new, jac_new = _stack(compiled, candidate)
            cost_new = 0.5 * float(r_new @ r_new)
            if cost_new < cost or cost_new == 0.0:
                transform, r, jac, cost = candidate, r_new, jac_new, cost_new
                mu = max(mu / 3.0, 1e-12)
                stepped = True
                break
            mu *= 10.0
        if not stepped or float(np.linalg.norm(delta)) < step_tolerance:
            break
    residuals, tolerances = _score(goal, compiled, transform)
    return PlacementSolution(
        transform,
        residuals,
        tolerances,
        all(r_ <= t_ for r_, t_ in zip(residuals, tolerances)),
        iterations,
    )


def solve_oriented(current: OrientedKeypoint, target: OrientedKeypoint) -> Pose:
    """Closed-form transform for a full-frame goal on one oriented keypoint.

    When position *and* axes are pinned by a single keypoint the optimization
    collapses to rigid alignment of two frames.
    """
    return pose_between(current, target)


def frame_goal(
    label: str,
    target: Pose,
    position_tolerance: float = 1e-6,
    rotation_tolerance: float = 1e-6,
) -> PlacementGoal:
    return PlacementGoal((FrameTarget(label, target, position_tolerance, rotation_tolerance),))


# --- staging ----------------------------------------------------------------


@dataclass(frozen=True)
class StagingConfig:
    linear_speed: float = 0.15  # m/s along the task-space segment
    angular_speed: float = 1.0  # rad/s
    control_dt: float = 0.02
    max_seconds: float = 60.0
    resolve: VelocityResolutionConfig = field(
        default_factory=lambda: VelocityResolutionConfig(regularization=0.0)
    )


@dataclass
class StagingResult:
    ok: bool
    q_path: list
    q_end: np.ndarray
    solution: PlacementSolution | None
    message: str = ""


def _goal_is_single_frame(goal: PlacementGoal) -> bool:
    return len(goal.constraints) == 1 and isinstance(goal.constraints[0], FrameTarget)


def stage_pick_place(
    chain: KinematicChain,
    q_start,
    attachment: AttachedObject,
    goal: PlacementGoal,
    cfg: StagingConfig = StagingConfig(),
) -> StagingResult:
    """Carry a grasped object to a placement goal, kinematically.

    Solves for the object transform (closed form for a single full-frame
    goal, otherwise the iterative solver), interpolates the gripper pose
    linearly in task space, resolves every step through
    :func:`okmanip.control.resolve_velocity`, and polishes the endpoint so
    the delivered keypoints satisfy the goal within its tolerances.  The
    path is not collision-checked; it is a staging move above the scene.
    """
    q = np.asarray(q_start, dtype=float).copy()
    fk0 = forward_kinematics(chain, q)
    kps0 = {
        label: keypoint_world_from_fk(fk0, attachment, label)
        for label in attachment.keypoints
    }

    if _goal_is_single_frame(goal):
        c: FrameTarget = goal.constraints[0]
        if c.label not in kps0:
            return StagingResult(
                False, [], q, None, f"goal references unknown keypoint {c.label!r}"
            )
        transform = solve_oriented(
            kps0[c.label], OrientedKeypoint(c.label, c.target, "world")
        )
        compiled = _compile(goal, kps0)
        residuals, tolerances = _score(goal, compiled, transform)
        solution = PlacementSolution(
            transform,
            residuals,
            tolerances,
            all(r <= t for r, t in zip(residuals, tolerances)),
            0,
        )
    else:
        solution = solve_placement(kps0, goal, seed_pose=Pose.identity())
    if not solution.converged:
        return StagingResult(False, [], q, solution, "placement solve did not converge")

    g_start = fk0.gripper
    g_target = solution.transform * g_start
    lin = float(np.linalg.norm(g_target.translation - g_start.translation))
    ang = (g_target.rotation * g_start.rotation.inverse()).angle()
    duration = max(lin / cfg.linear_speed, ang / cfg.angular_speed, cfg.control_dt)
    if duration > cfg.max_seconds:
        return StagingResult(False, [], q, solution, "staging move exceeds time budget")
    steps = max(int(np.ceil(duration / cfg.control_dt)), 1)

    path = []
    fast = _compiled(chain)
    for k in range(1, steps + 1):
        ref = interpolate_pose(g_start, g_target, k / steps)
        origins, axes, r_grip, t_grip = fast.frames(q)
        err = np.concatenate(
            [
                (ref.rotation * Rotation.from_matrix(r_grip).inverse()).rotvec(),
                ref.translation - t_grip,
            ]
        )
        jac = fast.point_jacobian(origins, axes, t_grip)
        qdot = resolve_velocity(
            jac, Twist.from_vector(err / cfg.control_dt, "gripper"), cfg.resolve
        )
        q = chain.clamp(q + qdot * cfg.control_dt)
        path.append(q.copy())

    q_end, ik_ok = solve_gripper_ik(chain, q, g_target)
    if not ik_ok:
        return StagingResult(False, path, q_end, solution, "endpoint polish did not converge")
    path.append(q_end.copy())

    fk_end = forward_kinematics(chain, q_end)
    kps_end = {
        label: keypoint_world_from_fk(fk_end, attachment, label)
        for label in attachment.keypoints
    }
    compiled = _compile(goal, kps_end)
    residuals, tolerances = _score(goal, compiled, Pose.identity())
    delivered = all(r <= t for r, t in zip(residuals, tolerances))
    return StagingResult(
        delivered,
        path,
        q_end,
        solution,
        "" if delivered else f"delivered residuals {residuals} exceed tolerances",
    )
