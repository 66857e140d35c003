"""Closed-loop episode runner: perceive once, grasp, stage, servo, judge.

The controller here is deliberately structured so that agent behavior is a
function of keypoints only:

* The agent's commanded keypoint twist feeds a *desired-pose integrator* —
  a reference pose for the task keypoint advanced by exactly the commanded
  twist each tick.  The reference never sees joints, grasps, or tracking
  error, so two episodes whose agents emit the same commands produce the
  same reference trajectory bit for bit.
* A tracking servo (gain ``track_gain``) turns reference-vs-believed pose
  error into the twist actually resolved to joint velocities.  It absorbs
  resolution damping and start-pose mismatch; its windup is clamped so a
  physically blocked robot cannot build an unbounded reference offset.

Wrench sensing follows the hardware path: the true contact reaction is
expressed at the wrist as the load the tool applies to its surroundings,
then re-expressed at the (possibly misperceived) task keypoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .agents import AgentAction, AgentInput, TrajectoryReference
from .control import VelocityResolutionConfig, resolve_force, resolve_velocity, virtual_sensor
from .kinematics import (
    AttachedObject,
    KinematicChain,
    attach_object,
    forward_kinematics,
    gravity_torque,
    solve_gripper_ik,
)
from .pick_place import StagingConfig, frame_goal, stage_pick_place
from .se3 import OrientedKeypoint, Pose, Rotation, Twist, Wrench, transform_wrench
from .sim import (
    InsertionTrace,
    PegHoleScene,
    PegHoleWorld,
    PerceptionModel,
    StepResult,
    TorqueCommand,
    VelocityCommand,
    WipeScene,
    WipeWorld,
    WipeTrace,
    perceive,
)

AgentFactory = Callable[[Mapping[str, OrientedKeypoint]], object]


@dataclass(frozen=True)
class EpisodeConfig:
    dt: float = 0.01  # integrator step
    control_dt: float = 0.01  # agent decision period (multiple of dt)
    duration: float = 16.0  # simulated-time budget
    hover: float = 0.02  # start height above the task surface
    track_gain: float = 25.0  # 1/s, reference-tracking servo
    windup_linear: float = 5e-3  # m, reference offset clamp
    windup_angular: float = 0.1  # rad
    force_abort: float = 25.0  # N, safety stop on sensed force
    exact_start: bool = False  # True: IK directly to the start pose (no staged move)
    resolve: VelocityResolutionConfig = field(default_factory=VelocityResolutionConfig)
    staging: StagingConfig = field(default_factory=StagingConfig)

    def __post_init__(self):
        if self.dt <= 0.0 or self.control_dt <= 0.0 or self.duration <= 0.0:
            raise ValueError("dt, control_dt and duration must be positive")
        if abs(self.control_dt / self.dt - round(self.control_dt / self.dt)) > 1e-9:
            raise ValueError("control_dt must be an integer multiple of dt")


# --- wrench plumbing ---------------------------------------------------------


def synthesize_wrist_measurement(
    reaction: Wrench, gripper: Pose, task_position
) -> Wrench:
    """What the wrist F/T sensor reads for a given contact reaction.

    ``reaction`` is the environment's wrench on the object at the true task
    keypoint (world axes).  The sensor reports the load the tool applies to
    its surroundings, in the wrist's own axes.
    """
    applied = Wrench(-reaction.torque, -reaction.force, reaction.expressed_at)
    r_inv = gripper.rotation.inverse()
    rel = Pose(r_inv, r_inv.apply(np.asarray(task_position) - gripper.translation))
    return transform_wrench(rel, applied, "wrist")


def sense_at_keypoint(
    wrist_measurement: Wrench, gripper: Pose, keypoint_position, label: str
) -> Wrench:
    """Re-express a wrist reading at a keypoint the robot believes in."""
    rel = Pose(gripper.rotation, gripper.translation - np.asarray(keypoint_position))
    return virtual_sensor(wrist_measurement, rel, label)


# --- shared episode core -----------------------------------------------------


class _EpisodeCore:
    """State shared by the per-tick loop, independent of the task family."""

    def __init__(self, world, q0, perceived_static, perceived_attachment, cfg):
        self.world = world
        self.cfg = cfg
        self.q = np.asarray(q0, dtype=float).copy()
        self.static = dict(perceived_static)
        self.attachment: AttachedObject = perceived_attachment
        self.task_label = world.task_label
        self.limit_hit = False
        self.aborted = False
        gripper = self._gripper()
        self.p_des = self._believed(gripper)[self.task_label].frame

    def _gripper(self) -> Pose:
        _, _, r, t = self.world.compiled.frames(self.q)
        return Pose(Rotation.from_matrix(r), t)

    def _believed(self, gripper: Pose) -> dict:
        """The robot's keypoint picture: frozen scene + tracked grasped object."""
        hand = gripper * self.attachment.grasp
        out = dict(self.static)
        for label, kp in self.attachment.keypoints.items():
            out[label] = kp.moved_to(hand * kp.frame, "world")
        return out

    def probe(self) -> StepResult:
        """Contact state at the current configuration without moving."""
        return self.world.step(self.q, VelocityCommand(np.zeros(self.world.chain.dof)), 0.0)

    def sense(self, res: StepResult, gripper: Pose, believed) -> Wrench:
        true_task = res.keypoints[self.task_label]
        wrist = synthesize_wrist_measurement(res.wrench, gripper, true_task.position)
        return sense_at_keypoint(
            wrist, gripper, believed[self.task_label].position, self.task_label
        )

    def advance(self, action: AgentAction, believed) -> StepResult:
        """Apply one agent decision for one control period."""
        cfg = self.cfg
        per = believed[self.task_label].frame
        origins, axes, _, _ = self.world.compiled.frames(self.q)
        jac = self.world.compiled.point_jacobian(origins, axes, per.translation)

        if action.is_velocity:
            cmd = action.twist
            # Reference integration: the commanded twist and nothing else.
            rot = Rotation.from_rotvec(np.asarray(cmd.angular) * cfg.control_dt)
            self.p_des = Pose(rot * self.p_des.rotation,
                              self.p_des.translation + cmd.linear * cfg.control_dt)
            self.p_des = _clamp_offset(self.p_des, per, cfg.windup_linear, cfg.windup_angular)
            w = cmd.angular + cfg.track_gain * (self.p_des.rotation * per.rotation.inverse()).rotvec()
            v = cmd.linear + cfg.track_gain * (self.p_des.translation - per.translation)
            qdot = resolve_velocity(jac, Twist(w, v, self.task_label), cfg.resolve,
                                    frame=self.task_label)
            command = VelocityCommand(qdot)
        else:
            tau = resolve_force(
                jac, action.wrench,
                gravity_torque(self.world.chain, self.q),
                frame=self.task_label,
            )
            command = TorqueCommand(tau)

        substeps = round(cfg.control_dt / cfg.dt)
        for _ in range(substeps):
            res = self.world.step(self.q, command, cfg.dt)
            self.q = res.q
            self.limit_hit |= res.limit_hit
        return res


def _clamp_offset(des: Pose, actual: Pose, lin: float, ang: float) -> Pose:
    """Pull the reference pose back within a ball around the actual pose."""
    dp = des.translation - actual.translation
    n = float(np.linalg.norm(dp))
    if n > lin:
        dp *= lin / n
    rv = (des.rotation * actual.rotation.inverse()).rotvec()
    m = float(np.linalg.norm(rv))
    rot = des.rotation
    if m > ang:
        rot = Rotation.from_rotvec(rv * (ang / m)) * actual.rotation
    return Pose(rot, actual.translation + dp)


def _start_configuration(chain, q_home, attachment, start_pose, task_label, cfg):
    """Bring the grasped object to its start pose; returns (q, ok, message)."""
    kp_obj = attachment.keypoints[task_label].frame
    gripper_target = start_pose * (attachment.grasp * kp_obj).inverse()
    if cfg.exact_start:
        q, ok = solve_gripper_ik(chain, q_home, gripper_target)
        return q, ok, "" if ok else "start pose out of reach"
    result = stage_pick_place(
        chain, q_home, attachment, frame_goal(task_label, start_pose), cfg.staging
    )
    return result.q_end, result.ok, result.message


# --- insertion ----------------------------------------------------------------


def run_insertion_episode(
    chain: KinematicChain,
    scene: PegHoleScene,
    grasp: Pose,
    agent_factory: AgentFactory,
    model: PerceptionModel = PerceptionModel(),
    rng: np.random.Generator | None = None,
    cfg: EpisodeConfig = EpisodeConfig(),
    q_home=None,
) -> InsertionTrace:
    trace = InsertionTrace()
    world = PegHoleWorld(chain, scene, grasp)
    q_home = chain.clamp(np.zeros(chain.dof) if q_home is None else np.asarray(q_home, float))

    # One-shot perception at grasp time; errors ride kinematically afterwards.
    truth = world.true_keypoints(q_home)
    noisy = perceive(truth, model, rng)
    gripper0 = forward_kinematics(chain, q_home).gripper
    perceived_att = attach_object([noisy["peg_end"]], gripper0, grasp)
    perceived_static = {"hole_top": noisy["hole_top"]}

    start = noisy["hole_top"].frame * Pose.from_translation((0.0, 0.0, -cfg.hover))
    q0, ok, message = _start_configuration(
        chain, q_home, perceived_att, start, "peg_end", cfg
    )
    if not ok:
        trace.staging_ok = False
        trace.message = message
        return trace

    core = _EpisodeCore(world, q0, perceived_static, perceived_att, cfg)
    agent = agent_factory(core._believed(core._gripper()))

    res = core.probe()
    t = 0.0
    while True:
        gripper = core._gripper()
        believed = core._believed(gripper)
        wrench = core.sense(res, gripper, believed)
        f_mag = float(np.linalg.norm(wrench.force))
        if f_mag >= cfg.force_abort:
            trace.message = f"force safety stop ({f_mag:.1f} N) at t={t:.2f} s"
            break
        action = agent.step(AgentInput(believed, wrench, t))
        res = core.advance(action, believed)
        t += cfg.control_dt

        peg = res.keypoints["peg_end"]
        trace.times.append(t)
        trace.peg_rot.append(peg.frame.rotation.as_matrix())
        trace.peg_pos.append(peg.position.copy())
        trace.depth.append(res.aux)
        trace.force.append(f_mag)
        trace.command.append(
            action.twist.as_vector() if action.is_velocity else action.wrench.as_vector()
        )
        trace.phase.append(action.phase)

        if action.finished:
            break
        if t >= cfg.duration - 1e-12:
            trace.timed_out = True
            break

    trace.limit_hit = core.limit_hit
    trace.duration = t
    trace.final_depth = trace.depth[-1] if trace.depth else 0.0
    return trace


# --- wiping -------------------------------------------------------------------


def run_wipe_episode(
    chain: KinematicChain,
    scene: WipeScene,
    grasp: Pose,
    agent_factory: AgentFactory,
    waypoints,
    wipe_speed: float = 0.05,
    settle_time: float = 2.0,
    model: PerceptionModel = PerceptionModel(),
    rng: np.random.Generator | None = None,
    cfg: EpisodeConfig = EpisodeConfig(),
    q_home=None,
) -> WipeTrace:
    trace = WipeTrace()
    world = WipeWorld(chain, scene, grasp)
    q_home = chain.clamp(np.zeros(chain.dof) if q_home is None else np.asarray(q_home, float))

    truth = world.true_keypoints(q_home)
    noisy = perceive(truth, model, rng)
    gripper0 = forward_kinematics(chain, q_home).gripper
    perceived_att = attach_object([noisy["center"], noisy["front"]], gripper0, grasp)
    perceived_static = {"board_center": noisy["board_center"]}

    # Start with the believed front edge hovering over the first waypoint,
    # eraser face toward the board.  The flip is a pure pitch so the approach
    # orientation stays well inside the arm's wrist limits; it maps the
    # eraser's +x (the front) onto the board's -x, hence the +half_x offset.
    board = noisy["board_center"].frame
    half_x = float(np.linalg.norm(noisy["front"].position - noisy["center"].position))
    wp0 = np.asarray(waypoints[0], dtype=float)
    flip = Rotation.from_axis_angle((0.0, 1.0, 0.0), np.pi)
    start = Pose(
        board.rotation * flip,
        board.translation
        + board.rotation.apply((wp0[0] + half_x, wp0[1], cfg.hover)),
    )
    q0, ok, message = _start_configuration(
        chain, q_home, perceived_att, start, "center", cfg
    )
    if not ok:
        trace.staging_ok = False
        trace.message = message
        return trace

    core = _EpisodeCore(world, q0, perceived_static, perceived_att, cfg)
    agent = agent_factory(core._believed(core._gripper()))
    reference = TrajectoryReference(waypoints, wipe_speed, start_time=settle_time)
    board_true = scene.board_pose
    r_bt = board_true.rotation.as_matrix()

    res = core.probe()
    t = 0.0
    while True:
        gripper = core._gripper()
        believed = core._believed(gripper)
        wrench = core.sense(res, gripper, believed)
        f_mag = float(np.linalg.norm(wrench.force))
        if f_mag >= cfg.force_abort:
            trace.message = f"force safety stop ({f_mag:.1f} N) at t={t:.2f} s"
            break
        action = agent.step(AgentInput(believed, wrench, t))
        res = core.advance(action, believed)
        t += cfg.control_dt

        front_b = r_bt.T @ (res.keypoints["front"].position - board_true.translation)
        ref, _ = reference.sample(t)
        trace.times.append(t)
        trace.front_nominal.append(front_b[:2])
        trace.ref_nominal.append(ref[:2].copy())
        trace.normal_force.append(res.aux)
        trace.phase.append(action.phase)

        if action.finished:
            break
        if t >= cfg.duration - 1e-12:
            break

    trace.limit_hit = core.limit_hit
    trace.duration = t
    return trace
