"""Feedback agents that act purely on oriented keypoints and keypoint wrenches.

Agents never see joint angles, gripper poses, or grasp transforms: their whole
world is a dictionary of (possibly misperceived) oriented keypoints plus the
wrench at their task keypoint.  That makes every policy here automatically
indifferent to how the object is held, and — wrapped in :func:`retarget` —
equivariant to rigid relocations of the whole workspace.

Wrench convention: ``AgentInput.wrench`` is the force/torque the *grasped
object applies to its surroundings*, expressed at the task keypoint in world
axes (see :func:`okmanip.control.virtual_sensor`).  A peg pressing +x against
a wall therefore reports a +x force, and a compliant response must move -x.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .kinematics import UnknownLabelError
from .se3 import OrientedKeypoint, Pose, Rotation, Twist, Wrench, _cross

_LATERAL_SPEED_LIMIT = 0.05  # m/s, clamp on servo corrections


@dataclass(frozen=True)
class AgentInput:
    """Everything an agent is allowed to know at one control tick."""

    keypoints: Mapping[str, OrientedKeypoint]
    wrench: Wrench | None  # applied-by-object, at the task keypoint, world axes
    time: float


@dataclass(frozen=True)
class AgentAction:
    """Exactly one of ``twist`` / ``wrench`` is populated.

    ``label`` names the keypoint the command is expressed at.  ``finished``
    tells the episode runner the agent considers its task complete; ``phase``
    is a free-form tag recorded in traces.
    """

    label: str
    twist: Twist | None = None
    wrench: Wrench | None = None
    finished: bool = False
    phase: str = ""

    def __post_init__(self):
        if (self.twist is None) == (self.wrench is None):
            raise ValueError("exactly one of twist/wrench must be set")
        cmd = self.twist if self.twist is not None else self.wrench
        if not np.all(np.isfinite(cmd.as_vector())):
            raise ValueError("command entries must be finite")

    @property
    def is_velocity(self) -> bool:
        return self.twist is not None

    @classmethod
    def velocity(cls, label, angular, linear, finished=False, phase=""):
        return cls(label, twist=Twist(angular, linear, label), finished=finished, phase=phase)

    @classmethod
    def force(cls, label, torque, force, finished=False, phase=""):
        return cls(label, wrench=Wrench(torque, force, label), finished=finished, phase=phase)


def _require(keypoints: Mapping[str, OrientedKeypoint], labels: Sequence[str]):
    missing = [lb for lb in labels if lb not in keypoints]
    if missing:
        raise UnknownLabelError(f"agent input is missing keypoints: {missing}")


def _check_wrench(wrench: Wrench | None) -> tuple[np.ndarray, np.ndarray]:
    if wrench is None:
        return np.zeros(3), np.zeros(3)
    vec = wrench.as_vector()
    if not np.all(np.isfinite(vec)):
        raise ValueError("agent input wrench has non-finite entries")
    return wrench.torque, wrench.force


class TrajectoryReference:
    """Constant-speed point moving along a piecewise-linear path.

    ``sample(t)`` returns the reference point and its velocity; before
    ``start_time`` it parks at the first waypoint, after the path runs out it
    parks at the last (velocity zero in both cases).
    """

    def __init__(self, waypoints, speed: float, start_time: float = 0.0):
        pts = np.atleast_2d(np.asarray(waypoints, dtype=float))
        if len(pts) < 1:
            raise ValueError("trajectory needs at least one waypoint")
        if speed <= 0.0:
            raise ValueError("speed must be positive")
        self.points = pts
        self.speed = speed
        self.start_time = start_time
        if len(pts) > 1:
            seg = np.diff(pts, axis=0)
            length = np.linalg.norm(seg, axis=1)
            keep = length > 0.0
            self._seg = seg[keep]
            self._seg_len = length[keep]
            self._seg_start = pts[:-1][keep]
        else:
            self._seg = np.zeros((0, pts.shape[1]))
            self._seg_len = np.zeros(0)
            self._seg_start = np.zeros((0, pts.shape[1]))
        self._cum = np.concatenate([[0.0], np.cumsum(self._seg_len)])
        self.length = float(self._cum[-1])

    @property
    def end_time(self) -> float:
        return self.start_time + self.length / self.speed

    def sample(self, t: float):
        s = (t - self.start_time) * self.speed
        dim = self.points.shape[1]
        if s <= 0.0 or self.length == 0.0:
            return self.points[0].copy(), np.zeros(dim)
        if s >= self.length:
            return self.points[-1].copy(), np.zeros(dim)
        i = min(int(np.searchsorted(self._cum, s, side="right") - 1), len(self._seg) - 1)
        frac = (s - self._cum[i]) / self._seg_len[i]
        direction = self._seg[i] / self._seg_len[i]
        return self._seg_start[i] + frac * self._seg[i], self.speed * direction


# --- wiping -------------------------------------------------------------------


@dataclass(frozen=True)
class WipingAgentConfig:
    """Hybrid wipe controller: force along the board normal, position across it.

    The pressing force is regulated to ``nominal_force``; the ``front``
    keypoint tracks a constant-speed reference along ``waypoints`` (given in
    the board keypoint's x-y plane), started after ``settle_time`` so contact
    is established first.
    """

    waypoints: Sequence = ((0.0, 0.0),)
    nominal_force: float = 10.0  # N
    force_gain: float = 5e-4  # m/s per N
    wipe_speed: float = 0.05  # m/s along the waypoint path
    settle_time: float = 2.0  # s before the reference starts moving
    xy_gain: float = 4.0  # 1/s
    orient_gain: float = 4.0  # 1/s
    approach_speed: float = 0.025  # m/s descent before first contact
    contact_threshold: float = 0.5  # N pressing force that counts as contact

    def __post_init__(self):
        for name in ("force_gain", "xy_gain", "orient_gain"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if len(self.waypoints) == 0:
            raise ValueError("waypoints must be non-empty")
        if self.wipe_speed <= 0.0 or self.settle_time < 0.0:
            raise ValueError("wipe_speed must be > 0 and settle_time >= 0")


class WipingAgent:
    """Press the eraser at constant force while sweeping the front edge."""

    labels = ("center", "front", "board_center")

    def __init__(self, config: WipingAgentConfig = WipingAgentConfig()):
        self.config = config
        self.reference = TrajectoryReference(
            config.waypoints, config.wipe_speed, start_time=config.settle_time
        )
        self._touched = False

    def step(self, inp: AgentInput) -> AgentAction:
        cfg = self.config
        _require(inp.keypoints, self.labels)
        _, f_applied = _check_wrench(inp.wrench)

        board = inp.keypoints["board_center"].frame
        normal = board.rotation.z_axis()
        press = float(f_applied @ (-normal))  # force pushed into the board

        if press >= cfg.contact_threshold:
            self._touched = True
        if self._touched:
            v_normal = cfg.force_gain * (press - cfg.nominal_force) * normal
        else:
            v_normal = -cfg.approach_speed * normal

        # Lateral servo in the board plane; z is owned by the force loop.
        r_b = board.rotation.as_matrix()
        front = inp.keypoints["front"].position
        front_b = r_b.T @ (front - board.translation)
        ref, ref_vel = self.reference.sample(inp.time)
        err = ref - front_b[:2]
        v_plane = ref_vel + cfg.xy_gain * err
        v_plane = _clamp_norm(v_plane, _LATERAL_SPEED_LIMIT + cfg.wipe_speed)
        v_lateral = r_b @ np.array([v_plane[0], v_plane[1], 0.0])

        # Keep the eraser face flat on the board: z axis of `center` toward -normal.
        axis = inp.keypoints["center"].frame.rotation.z_axis()
        omega = cfg.orient_gain * _cross(axis, -normal)

        done = self._touched and inp.time >= self.reference.end_time
        return AgentAction.velocity(
            "center",
            omega,
            v_normal + v_lateral,
            finished=done,
            phase="wipe" if self._touched else "approach",
        )


def _clamp_norm(v: np.ndarray, limit: float) -> np.ndarray:
    n = float(np.linalg.norm(v))
    return v if n <= limit else v * (limit / n)


# --- insertion ----------------------------------------------------------------


@dataclass(frozen=True)
class InsertionAgentConfig:
    """Approach / contact-search / insert state machine parameters.

    The contact search alternates between closed-loop windows — a growing
    spiral of the peg tip around the believed hole axis while a force loop
    keeps a light press — and brief feedforward windows that pause the sweep
    and push straight down (force-capped so the penalty-contact integrator
    stays well behaved).  A drop latch (tip sinking ``drop_detect`` beyond its
    on-surface baseline) switches off the sweep and descends with wrench
    compliance only.
    """

    approach_speed: float = 0.01  # m/s toward the hole along its axis
    align_gain: float = 4.0  # 1/s, orientation servo onto the hole frame
    lateral_gain: float = 4.0  # 1/s, position servo in the hole plane
    contact_force_threshold: float = 0.5  # N, approach -> search transition
    compliance_linear: float = 2e-3  # m/s per N, yields under lateral load
    compliance_angular: float = 5e-3  # rad/s per N·m
    press_force: float = 2.0  # N held during the spiral sweep
    press_gain: float = 1.25e-3  # m/s per N of press error
    descend_bias: float = 2.5e-3  # m/s steady downward drift while searching
    search_speed: float = 0.015  # m/s along the spiral
    search_pitch: float = 1.4e-3  # m radial growth per spiral turn
    search_amplitude: float = 0.012  # m max spiral radius
    switch_period: float = 0.8  # s, closed-loop/feedforward alternation
    switch_duty: float = 0.7  # fraction of the period spent closed-loop
    feedforward_press: float = 6.0  # N cap for the feedforward push windows
    drop_detect: float = 1.5e-3  # m of depth progress that counts as "dropped"
    insert_speed: float = 0.01  # m/s descent after the drop
    depth_target: float = 0.015  # m of believed depth that finishes the task

    def __post_init__(self):
        gains = (
            "align_gain", "lateral_gain", "compliance_linear", "compliance_angular",
            "press_gain", "approach_speed", "search_speed", "insert_speed",
            "descend_bias", "drop_detect", "search_amplitude",
        )
        for name in gains:
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.switch_period <= 0.0 or self.search_pitch <= 0.0:
            raise ValueError("periods and search_pitch must be positive")
        if not 0.0 < self.switch_duty <= 1.0:
            raise ValueError("switch_duty must lie in (0, 1]")


class InsertionAgent:
    """Peg-in-hole with spiral contact search and wrench compliance.

    Phases: ``approach`` (descend onto the believed hole mouth while aligning
    position and orientation), ``search`` (entered on contact force; see
    :class:`InsertionAgentConfig`), ``done`` (believed depth past target).
    Purely deterministic — the spiral is a fixed curve, not a random walk.
    """

    labels = ("peg_end", "hole_top")

    def __init__(self, config: InsertionAgentConfig = InsertionAgentConfig()):
        self.config = config
        self.phase = "approach"
        self._t_last: float | None = None
        self._search_t0 = 0.0
        self._depth_baseline = np.inf
        self._spiral_s = 0.0
        self._spiral_ref: np.ndarray | None = None
        self._dropped = False

    # internal helpers ---------------------------------------------------
    def _spiral_offset(self, s: float) -> np.ndarray:
        """Archimedean spiral offset (hole-plane x, y) at arc length s."""
        cfg = self.config
        if s <= 0.0:
            return np.zeros(2)
        theta = np.sqrt(4.0 * np.pi * s / cfg.search_pitch)
        r = min(cfg.search_pitch * theta / (2.0 * np.pi), cfg.search_amplitude)
        return r * np.array([np.cos(theta), np.sin(theta)])

    def step(self, inp: AgentInput) -> AgentAction:
        cfg = self.config
        _require(inp.keypoints, self.labels)
        tau_applied, f_applied = _check_wrench(inp.wrench)
        f_mag = float(np.linalg.norm(f_applied))

        peg = inp.keypoints["peg_end"].frame
        hole = inp.keypoints["hole_top"].frame
        z_h = hole.rotation.z_axis()
        delta = hole.translation - peg.translation
        depth = float(-delta @ z_h)  # believed depth of the tip past the mouth

        dt = 0.0 if self._t_last is None else max(inp.time - self._t_last, 0.0)
        self._t_last = inp.time

        if depth >= cfg.depth_target:
            self.phase = "done"
        if self.phase == "done":
            return AgentAction.velocity(
                "peg_end", np.zeros(3), np.zeros(3), finished=True, phase="done"
            )

        align = cfg.align_gain * (hole.rotation * peg.rotation.inverse()).rotvec()

        if self.phase == "approach":
            if f_mag >= cfg.contact_force_threshold:
                self.phase = "search"
                self._search_t0 = inp.time
                self._depth_baseline = depth
            else:
                lateral = delta - (delta @ z_h) * z_h
                v = cfg.approach_speed * z_h + _clamp_norm(
                    cfg.lateral_gain * lateral, _LATERAL_SPEED_LIMIT
                )
                return AgentAction.velocity("peg_end", align, v, phase="approach")

        # --- search ---
        comply_lin = -cfg.compliance_linear * (f_applied - (f_applied @ z_h) * z_h)
        comply_ang = -cfg.compliance_angular * tau_applied
        press = float(f_applied @ z_h)

        if not self._dropped:
            self._depth_baseline = min(self._depth_baseline, depth)
            if depth - self._depth_baseline > cfg.drop_detect:
                self._dropped = True

        if self._dropped:
            v_down = min(
                cfg.insert_speed,
                cfg.press_gain * (cfg.feedforward_press - press) + cfg.descend_bias,
            )
            v = v_down * z_h + comply_lin
            return AgentAction.velocity(
                "peg_end", align + comply_ang, v, phase="search"
            )

        in_period = (inp.time - self._search_t0) % cfg.switch_period
        closed_loop = in_period < cfg.switch_duty * cfg.switch_period

        if closed_loop:
            prev = self._spiral_ref
            self._spiral_s += cfg.search_speed * dt
            offset = self._spiral_offset(self._spiral_s)
            ref = hole.translation + hole.rotation.apply((offset[0], offset[1], 0.0))
            feedforward = (ref - prev) / dt if (prev is not None and dt > 0.0) else 0.0
            self._spiral_ref = ref
            err = ref - peg.translation
            err -= (err @ z_h) * z_h
            v_lat = feedforward + _clamp_norm(cfg.lateral_gain * err, _LATERAL_SPEED_LIMIT)
            v_down = cfg.press_gain * (cfg.press_force - press) + cfg.descend_bias
        else:
            # Feedforward push: sweep paused, straight-down force-capped shove.
            v_lat = 0.0
            v_down = cfg.press_gain * (cfg.feedforward_press - press) + cfg.descend_bias

        v = v_down * z_h + v_lat + comply_lin
        return AgentAction.velocity("peg_end", align + comply_ang, v, phase="search")


# --- open-loop baselines --------------------------------------------------


class OpenLoopInsertAgent:
    """Commands the same downward twist every tick, feedback be damned.

    ``direction`` is fixed at construction (the episode passes the believed
    hole axis); the agent finishes after commanding ``travel`` meters.
    """

    labels = ("peg_end",)

    def __init__(self, direction=(0.0, 0.0, -1.0), speed: float = 0.015, travel: float = 0.05):
        d = np.asarray(direction, dtype=float)
        self.direction = d / np.linalg.norm(d)
        self.speed = speed
        self.travel = travel
        self._t0: float | None = None

    def step(self, inp: AgentInput) -> AgentAction:
        if self._t0 is None:
            self._t0 = inp.time
        done = self.speed * (inp.time - self._t0) >= self.travel
        v = np.zeros(3) if done else self.speed * self.direction
        return AgentAction.velocity(
            "peg_end", np.zeros(3), v, finished=done, phase="descend"
        )


class OpenLoopWipeAgent:
    """Replays the front-edge trajectory on a clock, ignoring all feedback.

    Built from the board pose as believed at episode start: descend
    ``descend_distance`` to reach the planned press depth, hold until
    ``settle_time``, then play the waypoint velocities.
    """

    labels = ("center",)

    def __init__(
        self,
        board_pose: Pose,
        waypoints,
        wipe_speed: float = 0.05,
        settle_time: float = 2.0,
        descend_distance: float = 0.021,
        approach_speed: float = 0.025,
    ):
        self.board_pose = board_pose
        self.reference = TrajectoryReference(waypoints, wipe_speed, start_time=settle_time)
        self.descend_distance = descend_distance
        self.approach_speed = approach_speed
        self._t0: float | None = None

    def step(self, inp: AgentInput) -> AgentAction:
        if self._t0 is None:
            self._t0 = inp.time
        t = inp.time - self._t0
        normal = self.board_pose.rotation.z_axis()
        descend_end = self.descend_distance / self.approach_speed
        v = np.zeros(3)
        if t < descend_end:
            v = -self.approach_speed * normal
        else:
            _, ref_vel = self.reference.sample(inp.time)
            r_b = self.board_pose.rotation.as_matrix()
            v = r_b @ np.array([ref_vel[0], ref_vel[1], 0.0])
        done = inp.time >= self.reference.end_time
        return AgentAction.velocity(
            "center", np.zeros(3), v, finished=done,
            phase="wipe" if t >= descend_end else "approach",
        )


# --- rigid-transform retargeting -------------------------------------------


class RetargetedAgent:
    """Runs the inner agent in the frame where the anchor started at identity.

    The anchor keypoint's pose is latched on the first step; afterwards every
    input keypoint and wrench is conjugated into that nominal frame, the inner
    agent acts there, and its command is rotated back out.  Rigidly moving the
    whole scene (anchor included) therefore moves the agent's behavior with
    it, bit-for-bit up to rotation round-off.
    """

    def __init__(self, agent, anchor_label: str):
        self.agent = agent
        self.anchor_label = anchor_label
        self.nominal: Pose | None = None

    def step(self, inp: AgentInput) -> AgentAction:
        if self.anchor_label not in inp.keypoints:
            raise UnknownLabelError(
                f"retarget anchor {self.anchor_label!r} missing from input"
            )
        if self.nominal is None:
            self.nominal = inp.keypoints[self.anchor_label].frame.inverse()
        n = self.nominal
        keypoints = {
            label: kp.moved_to(n * kp.frame, kp.parent)
            for label, kp in inp.keypoints.items()
        }
        wrench = inp.wrench
        if wrench is not None:
            wrench = Wrench(
                n.rotation.apply(wrench.torque),
                n.rotation.apply(wrench.force),
                wrench.expressed_at,
            )
        action = self.agent.step(AgentInput(keypoints, wrench, inp.time))

        back = n.rotation.inverse()
        if action.twist is not None:
            cmd = action.twist
            return AgentAction(
                action.label,
                twist=Twist(back.apply(cmd.angular), back.apply(cmd.linear), cmd.expressed_in),
                finished=action.finished,
                phase=action.phase,
            )
        cmd = action.wrench
        return AgentAction(
            action.label,
            wrench=Wrench(back.apply(cmd.torque), back.apply(cmd.force), cmd.expressed_at),
            finished=action.finished,
            phase=action.phase,
        )


def retarget(agent, anchor_label: str) -> RetargetedAgent:
    """Wrap ``agent`` to operate relative to ``anchor_label``'s initial pose."""
    return RetargetedAgent(agent, anchor_label)
