"""Oriented-keypoint manipulation: geometry, solvers, agents, and a trial harness.

Objects are described by a handful of labeled keypoints, each carrying a full
local frame.  Everything downstream — task goals, velocity/force resolution,
sensing, and the task agents — is phrased against those frames, which is what
makes behaviors carry over across grasps, object instances, and scene poses.
"""

from .se3 import (
    FrameMismatchError,
    OrientedKeypoint,
    Pose,
    Rotation,
    Twist,
    Wrench,
    pose_between,
    transform_twist,
    transform_wrench,
)
from .kinematics import (
    AttachedObject,
    CompiledChain,
    JointLimitError,
    KinematicChain,
    UnknownLabelError,
    attach_object,
    builtin_chain,
    forward_kinematics,
    gravity_torque,
    gripper_jacobian,
    gripper_pose,
    keypoint_jacobian,
    keypoint_world,
    load_chain,
    solve_gripper_ik,
)
from .control import (
    VelocityResolutionConfig,
    estimate_keypoint_wrench,
    resolve_force,
    resolve_velocity,
    virtual_sensor,
)
from .pick_place import (
    AxisTarget,
    FrameTarget,
    InfeasibleGoalError,
    PlacementGoal,
    PlacementSolution,
    PointTarget,
    StagingConfig,
    StagingResult,
    frame_goal,
    solve_oriented,
    solve_placement,
    stage_pick_place,
)
from .sim import (
    CategorySampler,
    PegHoleScene,
    PegHoleWorld,
    PerceptionModel,
    WipeJudgeConfig,
    WipeScene,
    WipeWorld,
    judge_insert,
    judge_wipe,
)
from .agents import (
    AgentAction,
    AgentInput,
    InsertionAgent,
    InsertionAgentConfig,
    OpenLoopInsertAgent,
    OpenLoopWipeAgent,
    RetargetedAgent,
    WipingAgent,
    WipingAgentConfig,
    retarget,
)
from .episode import (
    EpisodeConfig,
    run_insertion_episode,
    run_wipe_episode,
    sense_at_keypoint,
    synthesize_wrist_measurement,
)
from .harness import (
    Scenario,
    ScenarioError,
    TrialRecord,
    load_scenario,
    run_scenario,
    run_trial,
    sweep,
)

__version__ = "0.1.0"

__all__ = [
    "AgentAction",
    "AgentInput",
    "AttachedObject",
    "AxisTarget",
    "CategorySampler",
    "CompiledChain",
    "EpisodeConfig",
    "FrameMismatchError",
    "FrameTarget",
    "InfeasibleGoalError",
    "InsertionAgent",
    "InsertionAgentConfig",
    "JointLimitError",
    "KinematicChain",
    "OpenLoopInsertAgent",
    "OpenLoopWipeAgent",
    "OrientedKeypoint",
    "PegHoleScene",
    "PegHoleWorld",
    "PerceptionModel",
    "PlacementGoal",
    "PlacementSolution",
    "PointTarget",
    "Pose",
    "RetargetedAgent",
    "Rotation",
    "Scenario",
    "ScenarioError",
    "StagingConfig",
    "StagingResult",
    "TrialRecord",
    "Twist",
    "UnknownLabelError",
    "VelocityResolutionConfig",
    "WipeJudgeConfig",
    "WipeScene",
    "WipeWorld",
    "WipingAgent",
    "WipingAgentConfig",
    "Wrench",
    "attach_object",
    "builtin_chain",
    "estimate_keypoint_wrench",
    "forward_kinematics",
    "frame_goal",
    "gravity_torque",
    "gripper_jacobian",
    "gripper_pose",
    "judge_insert",
    "judge_wipe",
    "keypoint_jacobian",
    "keypoint_world",
    "load_chain",
    "load_scenario",
    "pose_between",
    "resolve_force",
    "resolve_velocity",
    "retarget",
    "run_insertion_episode",
    "run_scenario",
    "run_trial",
    "run_wipe_episode",
    "sense_at_keypoint",
    "solve_gripper_ik",
    "solve_oriented",
    "solve_placement",
    "stage_pick_place",
    "sweep",
    "synthesize_wrist_measurement",
    "transform_twist",
    "transform_wrench",
    "virtual_sensor",
]
