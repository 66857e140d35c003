"""Quasi-static contact worlds for tabletop insertion and surface wiping.

Contact is a point-sampled penalty model: sample points on the grasped
object's boundary are pushed out of scene material with a normal force of
``stiffness * penetration`` toward the nearest free-space boundary, plus
kinetic Coulomb friction capped at ``friction * normal`` opposing the
tangential contact-point velocity.  Points pressing on the same face are
aggregated into one contact (max penetration at the penetration-weighted
centroid), so a flat press of depth d produces a single ``stiffness * d``
normal force rather than one per sample point.

The robot itself has no dynamics.  Velocity commands integrate exactly
(``q' = q + qdot dt``, clamped and flagged at joint limits); torque commands
move through a quasi-static joint admittance
``qdot = admittance * (tau_cmd - tau_contact - tau_gravity)``.

Perception is a one-shot affair: keypoints are perturbed once at grasp time
(Gaussian position noise, random axis-angle orientation noise, optional fixed
bias) and tracked kinematically afterwards -- errors ride along rigidly, they
do not accumulate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .kinematics import AttachedObject, CompiledChain, KinematicChain, gravity_torque
from .se3 import OrientedKeypoint, Pose, Rotation, Twist, Wrench, _cross, keypoint_map

GRAVITY = (0.0, 0.0, -9.81)


# --- scenes -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PegHoleScene:
    """A block with a chamfered bore and a matching peg.

    The ``hole_pose`` frame sits at the bore mouth center in the top surface,
    z pointing *into* the hole; the peg's ``peg_end`` frame sits at the tip
    face center, z pointing from body to tip.  A fully inserted, aligned peg
    therefore has its ``peg_end`` frame coincident with ``hole_pose`` shifted
    along +z by the insertion depth.
    """

    hole_pose: Pose
    peg_shape: str = "square"  # "square" | "circular"
    peg_half_extent: float = 5e-3  # half width (square) or radius (circular)
    peg_length: float = 0.04
    clearance: float = 2e-4  # hole half-extent minus peg half-extent, >= 0
    chamfer_depth: float = 2e-3
    chamfer_angle: float = np.pi / 4  # from the bore axis
    bore_depth: float = 0.03
    surface_half_extent: float = 0.15
    stiffness: float = 1e4  # N/m
    friction: float = 0.3

    def __post_init__(self):
        if self.peg_shape not in ("square", "circular"):
            raise ValueError(f"unknown peg shape {self.peg_shape!r}")
        if self.clearance < 0.0:
            raise ValueError("clearance must be >= 0")
        for name in ("peg_half_extent", "peg_length", "bore_depth", "stiffness"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.chamfer_depth < 0.0 or self.friction < 0.0:
            raise ValueError("chamfer_depth and friction must be >= 0")

    @property
    def hole_half_extent(self) -> float:
        return self.peg_half_extent + self.clearance

    @property
    def chamfer_width(self) -> float:
        return self.chamfer_depth * np.tan(self.chamfer_angle)

    def keypoints(self) -> dict:
        return keypoint_map([OrientedKeypoint("hole_top", self.hole_pose, "world")])

    def peg_object_keypoints(self) -> dict:
        return keypoint_map([OrientedKeypoint("peg_end", Pose.identity(), "object")])


@dataclass(frozen=True, eq=False)
class WipeScene:
    """A finite board and a rectangular-footprint eraser.

    ``board_pose`` sits at the surface center with z along the outward
    normal.  The eraser's ``center`` frame sits at the bottom-face center
    with z pointing *into* the board when wiping; ``front`` is the midpoint
    of the bottom face's +x edge.  ``board_height_offset`` sinks the real
    surface below where it was mapped -- the scene keypoint stays at the
    nominal pose, so only contact feels the offset.
    """

    board_pose: Pose
    board_half_extents: tuple[float, float] = (0.15, 0.10)
    eraser_half_extents: tuple[float, float] = (0.025, 0.015)
    board_height_offset: float = 0.0
    stiffness: float = 1e4
    friction: float = 0.3

    def __post_init__(self):
        if self.stiffness <= 0.0:
            raise ValueError("stiffness must be positive")
        if min(self.board_half_extents) <= 0.0 or min(self.eraser_half_extents) <= 0.0:
            raise ValueError("board and eraser extents must be positive")
        if self.friction < 0.0:
            raise ValueError("friction must be >= 0")

    def keypoints(self) -> dict:
        return keypoint_map([OrientedKeypoint("board_center", self.board_pose, "world")])

    def eraser_object_keypoints(self) -> dict:
        ex = self.eraser_half_extents[0]
        return keypoint_map(
            [
                OrientedKeypoint("center", Pose.identity(), "object"),
                OrientedKeypoint("front", Pose.from_translation((ex, 0.0, 0.0)), "object"),
            ]
        )

    def true_surface_pose(self) -> Pose:
        drop = self.board_pose.rotation.z_axis() * self.board_height_offset
        return Pose(self.board_pose.rotation, self.board_pose.translation - drop)


# --- perception ----------------------------------------------------------------


@dataclass(frozen=True)
class PerceptionModel:
    """One-shot keypoint noise applied at grasp time."""

    position_sigma: float | tuple[float, float, float] = 5e-3
    rotation_sigma: float = 0.0
    bias: tuple[float, float, float] | None = None
    seed: int | None = None

    def __post_init__(self):
        if np.any(np.asarray(self.position_sigma) < 0.0) or self.rotation_sigma < 0.0:
            raise ValueError("noise sigmas must be >= 0")


def perceive(
    keypoints: Mapping[str, OrientedKeypoint],
    model: PerceptionModel,
    rng: np.random.Generator | None = None,
) -> dict:
    """Corrupt ground-truth keypoints per the model.

    Labels are processed in sorted order so a seeded generator reproduces the
    same draw regardless of dict insertion order.
    """
    if rng is None:
        rng = np.random.default_rng(model.seed)
    sigma = np.broadcast_to(np.asarray(model.position_sigma, dtype=float), (3,))
    bias = np.zeros(3) if model.bias is None else np.asarray(model.bias, dtype=float)
    out = {}
    for label in sorted(keypoints):
        kp = keypoints[label]
        dp = rng.normal(0.0, 1.0, 3) * sigma + bias
        rot = kp.frame.rotation
        if model.rotation_sigma > 0.0:
            axis = rng.normal(0.0, 1.0, 3)
            axis /= max(np.linalg.norm(axis), 1e-12)
            angle = rng.normal(0.0, model.rotation_sigma)
            rot = Rotation.from_axis_angle(axis, angle) * rot
        out[label] = kp.moved_to(Pose(rot, kp.frame.translation + dp), kp.parent)
    return out


# --- category-level variation ----------------------------------------------


@dataclass(frozen=True)
class CategorySampler:
    """Ranges for drawing object instances and grasps within a category."""

    peg_half_extent: tuple[float, float] = (4e-3, 7e-3)
    peg_length: tuple[float, float] = (0.035, 0.06)
    grasp_height_frac: tuple[float, float] = (0.55, 0.85)
    grasp_lateral_sigma: float = 1.5e-3
    grasp_yaw: tuple[float, float] = (-0.4, 0.4)
    eraser_half_x: tuple[float, float] = (0.02, 0.035)
    eraser_half_y: tuple[float, float] = (0.012, 0.02)

    def sample_peg(self, rng: np.random.Generator, base: PegHoleScene):
        """Scene instance plus grasp (peg_end frame in gripper coordinates)."""
        half = rng.uniform(*self.peg_half_extent)
        length = rng.uniform(*self.peg_length)
        scene = replace(base, peg_half_extent=half, peg_length=length)
        height = length * rng.uniform(*self.grasp_height_frac)
        lateral = rng.normal(0.0, self.grasp_lateral_sigma, 2)
        yaw = rng.uniform(*self.grasp_yaw)
        grasp = Pose(
            Rotation.from_axis_angle((0.0, 0.0, 1.0), yaw),
            np.array([lateral[0], lateral[1], height]),
        )
        return scene, grasp

    def sample_eraser(self, rng: np.random.Generator, base: WipeScene):
        ex = rng.uniform(*self.eraser_half_x)
        ey = rng.uniform(*self.eraser_half_y)
        scene = replace(base, eraser_half_extents=(ex, ey))
        lateral = rng.normal(0.0, self.grasp_lateral_sigma, 2)
        yaw = rng.uniform(*self.grasp_yaw)
        grasp = Pose(
            Rotation.from_axis_angle((0.0, 0.0, 1.0), yaw),
            np.array([lateral[0], lateral[1], 0.10]),
        )
        return scene, grasp


# --- penalty contact ---------------------------------------------------------


def _peg_boundary_points(scene: PegHoleScene) -> np.ndarray:
    """Sample points on the peg boundary, in the peg_end frame (tip at z=0)."""
    a = scene.peg_half_extent
    if scene.peg_shape == "square":
        ring = np.array(
            [
                [a, a], [a, -a], [-a, a], [-a, -a],
                [a, 0.0], [-a, 0.0], [0.0, a], [0.0, -a],
            ]
        )
    else:
        ang = np.linspace(0.0, 2.0 * np.pi, 12, endpoint=False)
        ring = a * np.column_stack([np.cos(ang), np.sin(ang)])
    tip = np.column_stack([ring, np.zeros(len(ring))])
    side = []
    for frac in (0.15, 0.4, 0.8):
        z = -frac * scene.peg_length
        corners = ring[:4] if scene.peg_shape == "square" else ring[::3]
        side.append(np.column_stack([corners, np.full(len(corners), z)]))
    return np.vstack([tip] + side)


def _peg_contact_groups(scene: PegHoleScene, pts_hole: np.ndarray):
    """Penetration, free-space normal (hole frame), and face-group id per point."""
    x, y, z = pts_hole[:, 0], pts_hole[:, 1], pts_hole[:, 2]
    h = scene.hole_half_extent
    w = scene.chamfer_width
    d = scene.chamfer_depth
    bore = scene.bore_depth
    if scene.peg_shape == "square":
        s = np.maximum(np.abs(x), np.abs(y))
        x_dominant = np.abs(x) >= np.abs(y)
        lat = np.zeros((len(s), 3))
        lat[x_dominant, 0] = -np.sign(x[x_dominant])
        lat[~x_dominant, 1] = -np.sign(y[~x_dominant])
        bucket = np.where(x_dominant, (x < 0).astype(int), 2 + (y < 0).astype(int))
    else:
        s = np.hypot(x, y)
        safe = np.maximum(s, 1e-12)
        lat = np.column_stack([-x / safe, -y / safe, np.zeros(len(s))])
        bucket = ((np.arctan2(y, x) + np.pi) / (np.pi / 4)).astype(int) % 8

    mouth = h + (w * np.clip(1.0 - z / d, 0.0, 1.0) if d > 0.0 else 0.0)
    in_free_bore = (z <= bore) & (s < mouth)
    material = (z > 0.0) & (s <= scene.surface_half_extent) & ~in_free_bore

    big = np.inf
    # top surface: exit straight up
    d_top = np.where(material & (s >= h), z, big)
    # bore bottom: exit up into the bore
    d_bot = np.where(material & (s < h), z - bore, big)
    # bore wall below the chamfer
    d_wall = np.where(material & (z >= d), s - h, big)
    # chamfer facet
    if d > 0.0:
        slope = w / d
        denom = np.sqrt(1.0 + slope * slope)
        g = (s - h - w + slope * z) / denom
        d_ch = np.where(material & (z >= 0.0) & (z <= d), g, big)
    else:
        slope, denom = 0.0, 1.0
        d_ch = np.full_like(z, big)

    dists = np.stack([d_top, d_bot, d_wall, d_ch])
    dists = np.where(dists > 0.0, dists, big)
    choice = np.argmin(dists, axis=0)
    delta = dists[choice, np.arange(len(z))]
    contact = np.isfinite(delta) & material
    delta = np.where(contact, delta, 0.0)

    up = np.array([0.0, 0.0, -1.0])  # hole z points into the hole
    normals = np.zeros((len(z), 3))
    normals[choice == 0] = up
    normals[choice == 1] = up
    normals[choice == 2] = lat[choice == 2]
    ch = choice == 3
    normals[ch] = (lat[ch] + slope * up) / denom

    group = np.where(choice == 0, 0, np.where(choice == 1, 1, 2 + bucket))
    return delta, normals, group, contact


def _aggregate_contacts(points, delta, normals, group, contact, stiffness):
    """One force per touched face: stiffness * max penetration at the
    penetration-weighted centroid, along the penetration-weighted normal."""
    forces, apps = [], []
    touched = np.unique(group[contact])
    for gid in touched:
        mask = contact & (group == gid)
        dm = delta[mask]
        n = (normals[mask] * dm[:, None]).sum(axis=0)
        n /= max(np.linalg.norm(n), 1e-12)
        app = (points[mask] * dm[:, None]).sum(axis=0) / dm.sum()
        forces.append(stiffness * dm.max() * n)
        apps.append(app)
    return forces, apps


def _friction_force(normal_force, app, twist_ref, mu):
    """Kinetic Coulomb friction at an application point, given the body twist
    (angular, linear, reference point) in the same frame as ``app``."""
    if twist_ref is None or mu <= 0.0:
        return np.zeros(3)
    ang, lin, ref = twist_ref
    v = lin + _cross(ang, app - ref)
    n_mag = float(np.linalg.norm(normal_force))
    n_hat = normal_force / max(n_mag, 1e-12)
    v_t = v - (v @ n_hat) * n_hat
    speed = float(np.linalg.norm(v_t))
    if speed < 1e-9 or n_mag <= 0.0:
        return np.zeros(3)
    return -mu * n_mag * v_t / speed


def contact_wrench_peg(
    scene: PegHoleScene, peg_end: OrientedKeypoint, peg_twist: Twist | None = None
) -> tuple[Wrench, float]:
    """Contact wrench on the peg (expressed at peg_end, world axes) and the
    insertion depth (tip-center distance below the top plane when the tip is
    in the bore, else 0).

    ``peg_twist`` (world axes at peg_end) supplies contact-point velocities
    for friction; omit it for a frictionless static query.
    """
    r_peg = peg_end.frame.rotation.as_matrix()
    p_peg = peg_end.frame.translation
    pts_world = (r_peg @ _peg_boundary_points(scene).T).T + p_peg

    r_hole = scene.hole_pose.rotation.as_matrix()
    t_hole = scene.hole_pose.translation
    pts_hole = (pts_world - t_hole) @ r_hole

    delta, normals, group, contact = _peg_contact_groups(scene, pts_hole)

    twist_ref = None
    if peg_twist is not None:
        ang = r_hole.T @ peg_twist.angular
        lin = r_hole.T @ peg_twist.linear
        twist_ref = (ang, lin, r_hole.T @ (p_peg - t_hole))

    force = np.zeros(3)
    torque = np.zeros(3)
    if contact.any():
        forces, apps = _aggregate_contacts(
            pts_hole, delta, normals, group, contact, scene.stiffness
        )
        p_ref = r_hole.T @ (p_peg - t_hole)
        for f, app in zip(forces, apps):
            f = f + _friction_force(f, app, twist_ref, scene.friction)
            force += f
            torque += _cross(app - p_ref, f)

    tip = r_hole.T @ (p_peg - t_hole)
    if scene.peg_shape == "square":
        tip_s = max(abs(tip[0]), abs(tip[1]))
    else:
        tip_s = float(np.hypot(tip[0], tip[1]))
    depth = float(tip[2]) if (tip[2] > 0.0 and tip_s < scene.hole_half_extent) else 0.0

    return Wrench(r_hole @ torque, r_hole @ force, "peg_end"), depth


def _eraser_boundary_points(scene: WipeScene) -> np.ndarray:
    ex, ey = scene.eraser_half_extents
    xy = np.array(
        [
            [ex, ey], [ex, -ey], [-ex, ey], [-ex, -ey],
            [ex, 0.0], [-ex, 0.0], [0.0, ey], [0.0, -ey], [0.0, 0.0],
        ]
    )
    return np.column_stack([xy, np.zeros(len(xy))])


def contact_wrench_wipe(
    scene: WipeScene, center: OrientedKeypoint, eraser_twist: Twist | None = None
) -> tuple[Wrench, float]:
    """Contact wrench on the eraser (at ``center``, world axes) and the total
    normal force against the board."""
    r_er = center.frame.rotation.as_matrix()
    p_er = center.frame.translation
    pts_world = (r_er @ _eraser_boundary_points(scene).T).T + p_er

    surface = scene.true_surface_pose()
    r_b = surface.rotation.as_matrix()
    t_b = surface.translation
    pts_b = (pts_world - t_b) @ r_b

    hx, hy = scene.board_half_extents
    pen = -pts_b[:, 2]
    contact = (pen > 0.0) & (np.abs(pts_b[:, 0]) <= hx) & (np.abs(pts_b[:, 1]) <= hy)

    if not contact.any():
        return Wrench.zero("center"), 0.0

    dm = pen[contact]
    normal_force = scene.stiffness * float(dm.max())
    app_b = (pts_b[contact] * dm[:, None]).sum(axis=0) / dm.sum()
    f_b = np.array([0.0, 0.0, normal_force])

    twist_ref = None
    if eraser_twist is not None:
        twist_ref = (
            r_b.T @ eraser_twist.angular,
            r_b.T @ eraser_twist.linear,
            r_b.T @ (p_er - t_b),
        )
    f_b = f_b + _friction_force(f_b, app_b, twist_ref, scene.friction)

    p_ref = r_b.T @ (p_er - t_b)
    torque_b = _cross(app_b - p_ref, f_b)
    return Wrench(r_b @ torque_b, r_b @ f_b, "center"), normal_force


# --- quasi-static stepping ----------------------------------------------------


@dataclass(frozen=True)
class VelocityCommand:
    qdot: np.ndarray


@dataclass(frozen=True)
class TorqueCommand:
    tau: np.ndarray


@dataclass
class StepResult:
    q: np.ndarray
    qdot: np.ndarray
    wrench: Wrench  # contact wrench at the task keypoint (true state, world axes)
    keypoints: dict  # true world keypoints
    aux: float  # insertion depth [m] or normal force [N] depending on the world
    limit_hit: bool


class _World:
    """Shared quasi-static stepping; subclasses provide contact + keypoints."""

    task_label: str = ""

    def __init__(self, chain: KinematicChain, grasp: Pose, admittance: float = 0.05):
        self.chain = chain
        self.compiled = CompiledChain(chain)
        self.grasp = grasp
        self.admittance = admittance
        self._last_qdot = np.zeros(chain.dof)

    # subclass hooks ----------------------------------------------------
    def object_keypoints(self) -> dict:
        raise NotImplementedError

    def static_keypoints(self) -> dict:
        raise NotImplementedError

    def contact(self, task_kp: OrientedKeypoint, twist: Twist | None):
        raise NotImplementedError

    # ---------------------------------------------------------------------
    def attachment(self) -> AttachedObject:
        return AttachedObject(self.grasp, self.object_keypoints())

    def true_keypoints(self, q: np.ndarray) -> dict:
        _, _, r_g, t_g = self.compiled.frames(q)
        gripper = Pose(Rotation.from_matrix(r_g), t_g)
        hand = gripper * self.grasp
        out = dict(self.static_keypoints())
        for label, kp in self.object_keypoints().items():
            out[label] = kp.moved_to(hand * kp.frame, "world")
        return out

    def _task_twist(self, q, qdot, task_position) -> Twist:
        origins, axes, _, _ = self.compiled.frames(q)
        jac = self.compiled.point_jacobian(origins, axes, task_position)
        vel = jac @ qdot
        return Twist(vel[:3], vel[3:], self.task_label)

    def step(self, q, command, dt: float) -> StepResult:
        q = np.asarray(q, dtype=float)
        if isinstance(command, VelocityCommand):
            qdot = np.asarray(command.qdot, dtype=float)
        elif isinstance(command, TorqueCommand):
            # Explicit quasi-static admittance: contact evaluated at the
            # current q, friction from the previous step's joint motion.
            kps = self.true_keypoints(q)
            task_kp = kps[self.task_label]
            prev_twist = self._task_twist(q, self._last_qdot, task_kp.position)
            wrench, _ = self.contact(task_kp, prev_twist)
            origins, axes, _, _ = self.compiled.frames(q)
            jac = self.compiled.point_jacobian(origins, axes, task_kp.position)
            tau_contact = jac.T @ wrench.as_vector()
            tau_g = gravity_torque(self.chain, q, GRAVITY)
            qdot = self.admittance * (
                np.asarray(command.tau, dtype=float) - tau_contact - tau_g
            )
        else:
            raise TypeError(f"unknown command type {type(command).__name__}")

        q_next = q + qdot * dt
        clamped = np.clip(q_next, self.compiled.lo, self.compiled.hi)
        limit_hit = bool(np.any(clamped != q_next))
        q_next = clamped
        self._last_qdot = qdot

        kps = self.true_keypoints(q_next)
        task_kp = kps[self.task_label]
        twist = self._task_twist(q_next, qdot, task_kp.position)
        wrench, aux = self.contact(task_kp, twist)
        return StepResult(q_next, qdot, wrench, kps, aux, limit_hit)


class PegHoleWorld(_World):
    task_label = "peg_end"

    def __init__(self, chain, scene: PegHoleScene, grasp: Pose, admittance: float = 0.05):
        super().__init__(chain, grasp, admittance)
        self.scene = scene

    def object_keypoints(self):
        return self.scene.peg_object_keypoints()

    def static_keypoints(self):
        return self.scene.keypoints()

    def contact(self, task_kp, twist):
        return contact_wrench_peg(self.scene, task_kp, twist)


class WipeWorld(_World):
    task_label = "center"

    def __init__(self, chain, scene: WipeScene, grasp: Pose, admittance: float = 0.05):
        super().__init__(chain, grasp, admittance)
        self.scene = scene

    def object_keypoints(self):
        return self.scene.eraser_object_keypoints()

    def static_keypoints(self):
        return self.scene.keypoints()

    def contact(self, task_kp, twist):
        return contact_wrench_wipe(self.scene, task_kp, twist)


def step(world: _World, q, command, dt: float) -> StepResult:
    """Advance the world one integrator step (see class docstring)."""
    return world.step(q, command, dt)


# --- traces and judges --------------------------------------------------------


@dataclass
class InsertionTrace:
    times: list = field(default_factory=list)
    peg_rot: list = field(default_factory=list)  # true peg_end rotation matrices
    peg_pos: list = field(default_factory=list)  # true peg_end positions
    depth: list = field(default_factory=list)  # true insertion depth
    force: list = field(default_factory=list)  # |contact force| as sensed
    command: list = field(default_factory=list)  # commanded twist 6-vectors
    phase: list = field(default_factory=list)
    staging_ok: bool = True
    timed_out: bool = False
    limit_hit: bool = False
    duration: float = 0.0  # simulated seconds
    final_depth: float = 0.0
    message: str = ""


@dataclass
class WipeTrace:
    times: list = field(default_factory=list)
    front_nominal: list = field(default_factory=list)  # true front, board frame
    ref_nominal: list = field(default_factory=list)  # commanded reference point
    normal_force: list = field(default_factory=list)
    phase: list = field(default_factory=list)
    staging_ok: bool = True
    limit_hit: bool = False
    duration: float = 0.0
    message: str = ""


@dataclass(frozen=True)
class JudgeResult:
    passed: bool
    reasons: tuple[str, ...] = ()
    failure_tag: str | None = None


def judge_insert(trace: InsertionTrace, depth_target: float = 8e-3) -> JudgeResult:
    """Pass iff the final true insertion depth reaches the target."""
    if trace.final_depth >= depth_target:
        return JudgeResult(True)
    if not trace.staging_ok:
        return JudgeResult(
            False,
            (f"staging failed: {trace.message}",),
            "grasp-stage-failure",
        )
    tag = "timeout" if trace.timed_out else "perception-exceeds-correction"
    return JudgeResult(
        False,
        (f"final depth {trace.final_depth * 1e3:.2f} mm < {depth_target * 1e3:.2f} mm",),
        tag,
    )


@dataclass(frozen=True)
class WipeJudgeConfig:
    edge_tolerance: float = 0.02  # m, front keypoint vs its reference
    min_force: float = 5.0  # N
    sustain_window: float = 0.2  # s of continuous low force that fails the run
    wipe_start: float = 2.0  # judge from here on (force must have settled)


def judge_wipe(trace: WipeTrace, cfg: WipeJudgeConfig = WipeJudgeConfig()) -> JudgeResult:
    """Fail on front-reference discrepancy or sustained loss of pressing force."""
    if not trace.staging_ok:
        return JudgeResult(False, (f"staging failed: {trace.message}",), "grasp-stage-failure")
    reasons = []
    times = np.asarray(trace.times)
    active = times >= cfg.wipe_start
    if not active.any():
        return JudgeResult(False, ("trace ends before the wipe phase",), "timeout")

    front = np.asarray(trace.front_nominal)[active]
    ref = np.asarray(trace.ref_nominal)[active]
    disc = np.linalg.norm(front[:, :2] - ref[:, :2], axis=1)
    if float(disc.max()) > cfg.edge_tolerance:
        reasons.append(
            f"front strays {disc.max() * 100:.1f} cm from its reference "
            f"(> {cfg.edge_tolerance * 100:.0f} cm)"
        )

    force = np.asarray(trace.normal_force)[active]
    t_act = times[active]
    low_start = None
    sustained = 0.0
    for t, f in zip(t_act, force):
        if f < cfg.min_force:
            if low_start is None:
                low_start = t
            sustained = max(sustained, t - low_start)
        else:
            low_start = None
    if low_start is not None:
        sustained = max(sustained, t_act[-1] - low_start)
    if sustained > cfg.sustain_window or (low_start is not None and len(t_act) == 1):
        reasons.append(
            f"normal force below {cfg.min_force:.0f} N for {sustained:.2f} s"
        )

    if reasons:
        return JudgeResult(False, tuple(reasons), "perception-exceeds-correction")
    return JudgeResult(True)
