"""Joint-space resolution of keypoint-space commands.

Three mappings tie desired keypoint motion and interaction to the joint
level, all built on the keypoint Jacobian convention from
:mod:`okmanip.kinematics` (angular rows first, world axes at the keypoint):

* :func:`resolve_velocity`  -- damped least squares from a desired keypoint
  twist to joint velocities, with a uniform-scaling velocity limit.
* :func:`resolve_force`     -- joint torques realizing a desired keypoint
  wrench quasi-statically (``J^T w``) plus gravity balance.
* :func:`estimate_keypoint_wrench` -- minimum-norm wrench explaining measured
  external joint torques (gravity already removed by the caller).

:func:`virtual_sensor` re-expresses a wrist force/torque measurement at any
tracked keypoint, which makes the reading independent of where the object was
grasped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .se3 import Pose, Twist, Wrench, require_frame, transform_wrench


@dataclass(frozen=True)
class VelocityResolutionConfig:
    """Tuning for resolve_velocity.

    regularization: damping weight on |qdot|^2; 0 selects the exact
        minimum-norm least-squares solution.
    joint_velocity_limit: per-joint speed bound; the solution is scaled
        uniformly (direction preserved) to respect it.  None disables.
    task_weights: optional per-axis weights on the twist residual,
        ordered (angular xyz, linear xyz).
    """

    regularization: float = 1e-6
    joint_velocity_limit: float | None = 2.5
    task_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.regularization < 0.0:
            raise ValueError("regularization must be >= 0")
        if self.joint_velocity_limit is not None and self.joint_velocity_limit <= 0.0:
            raise ValueError("joint_velocity_limit must be positive")
        if self.task_weights is not None:
            w = np.asarray(self.task_weights, dtype=float)
            if w.shape != (6,) or np.any(w < 0.0):
                raise ValueError("task_weights must be 6 non-negative values")


def _check_jacobian(jac) -> np.ndarray:
    j = np.asarray(jac, dtype=float)
    if j.ndim != 2 or j.shape[0] != 6:
        raise ValueError(f"Jacobian must have shape (6, n), got {j.shape}")
    if not np.all(np.isfinite(j)):
        raise ValueError("Jacobian must be finite")
    return j


def resolve_velocity(
    jacobian,
    twist: Twist,
    cfg: VelocityResolutionConfig = VelocityResolutionConfig(),
    frame: str | None = None,
) -> np.ndarray:
    """Joint velocities qdot minimizing |W(J qdot - v)|^2 + reg |qdot|^2."""
    jac = _check_jacobian(jacobian)
    if frame is not None:
        require_frame(twist.expressed_in, frame, "commanded twist")
    v = twist.as_vector()
    if cfg.task_weights is not None:
        scale = np.sqrt(np.asarray(cfg.task_weights, dtype=float))
        jac = jac * scale[:, None]
        v = v * scale
    if cfg.regularization > 0.0:
        n = jac.shape[1]
        qdot = np.linalg.solve(
            jac.T @ jac + cfg.regularization * np.eye(n), jac.T @ v
        )
    else:
        qdot = np.linalg.lstsq(jac, v, rcond=None)[0]
    if cfg.joint_velocity_limit is not None:
        peak = float(np.max(np.abs(qdot))) if qdot.size else 0.0
        if peak > cfg.joint_velocity_limit:
            qdot = qdot * (cfg.joint_velocity_limit / peak)
    return qdot


def resolve_force(
    jacobian,
    wrench: Wrench,
    gravity_torque,
    frame: str | None = None,
) -> np.ndarray:
    """Joint torques exerting ``wrench`` at the keypoint while holding gravity.

    Quasi-static: tau = J^T w + g; inertial and velocity-product terms are
    deliberately not modeled.
    """
    jac = _check_jacobian(jacobian)
    if frame is not None:
        require_frame(wrench.expressed_at, frame, "commanded wrench")
    g = np.asarray(gravity_torque, dtype=float)
    if g.shape != (jac.shape[1],):
        raise ValueError(
            f"gravity torque shape {g.shape} does not match Jacobian columns {jac.shape[1]}"
        )
    return jac.T @ wrench.as_vector() + g


def estimate_keypoint_wrench(jacobian, external_torque, frame: str) -> Wrench:
    """Minimum-norm keypoint wrench w with J^T w ~= tau_external.

    ``external_torque`` must already exclude gravity (and any commanded
    torque); the result is the external interaction expressed at the keypoint.
    Rank-deficient Jacobians get the least-squares minimum-norm tie-break.
    """
    jac = _check_jacobian(jacobian)
    tau = np.asarray(external_torque, dtype=float)
    if tau.shape != (jac.shape[1],):
        raise ValueError(
            f"torque shape {tau.shape} does not match Jacobian columns {jac.shape[1]}"
        )
    if not np.all(np.isfinite(tau)):
        raise ValueError("external torque must be finite")
    w = np.linalg.lstsq(jac.T, tau, rcond=None)[0]
    return Wrench.from_vector(w, frame)


def virtual_sensor(
    wrist_measurement: Wrench, wrist_to_keypoint: Pose, keypoint_frame: str
) -> Wrench:
    """Re-express a wrist F/T reading at a keypoint.

    ``wrist_to_keypoint`` is the wrist frame's pose in the keypoint frame.
    Because keypoints ride on the object, the transformed reading does not
    depend on how the object sits in the hand.
    """
    require_frame(wrist_measurement.expressed_at, "wrist", "wrist measurement")
    return transform_wrench(wrist_to_keypoint, wrist_measurement, keypoint_frame)
