"""Batch trial runner: scenario files in, failure tables and trial logs out.

A scenario is a YAML document (see `scenarios/` for commented examples)::

    name: insertion-closed-loop
    task: insertion            # insertion | wiping
    chain: arm6                # builtin chain name, or a path to a chain YAML
    agent: closed_loop         # closed_loop | open_loop
    trials: 100
    seed: 2026
    scene: {...}               # PegHoleScene / WipeScene fields; poses as
                               # [qw, qx, qy, qz, x, y, z] records
    sampler: {...}             # CategorySampler ranges, or null for a fixed
                               # instance with the default grasp
    perception: {...}          # PerceptionModel fields
    episode: {...}             # EpisodeConfig fields, plus start: staged|exact
    agent_config: {...}        # agent parameters (see _AGENT_KEYS)
    judge: {...}               # judge thresholds
    retarget_anchor: hole_top  # or null to run the agent unwrapped
    thresholds:
      min_success_rate: 0.9    # optional; run exits 1 when unmet

Every trial draws its generator as ``default_rng([master_seed, trial_id])``,
so records are reproducible individually and independent of execution order
(and of how many workers ran them).  Summaries contain only simulated-time
quantities — repeated runs with one seed are byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from multiprocessing import Pool
from pathlib import Path

import numpy as np
import yaml

from .agents import (
    InsertionAgent,
    InsertionAgentConfig,
    OpenLoopInsertAgent,
    OpenLoopWipeAgent,
    WipingAgent,
    WipingAgentConfig,
    retarget,
)
from .episode import EpisodeConfig, run_insertion_episode, run_wipe_episode
from .kinematics import KinematicChain, builtin_chain, load_chain
from .pick_place import StagingConfig
from .se3 import Pose, pose_from_record
from .sim import (
    CategorySampler,
    PegHoleScene,
    PerceptionModel,
    WipeJudgeConfig,
    WipeScene,
    judge_insert,
    judge_wipe,
)


class ScenarioError(ValueError):
    """The scenario file cannot be used as given."""


# --- schema ------------------------------------------------------------------

_TOP_KEYS = {
    "name", "task", "chain", "agent", "trials", "seed", "scene", "sampler",
    "perception", "episode", "agent_config", "judge", "retarget_anchor",
    "thresholds",
}

_DEFAULT_ANCHOR = {"insertion": "hole_top", "wiping": "board_center"}

# agent_config keys accepted per (task, agent); closed-loop sets mirror the
# config dataclasses, open-loop sets are the baseline knobs.
_AGENT_KEYS = {
    ("insertion", "closed_loop"): {f.name for f in dataclasses.fields(InsertionAgentConfig)},
    ("insertion", "open_loop"): {"speed", "travel"},
    ("wiping", "closed_loop"): {f.name for f in dataclasses.fields(WipingAgentConfig)},
    ("wiping", "open_loop"): {
        "waypoints", "wipe_speed", "settle_time", "approach_speed",
    },
}

_DEFAULT_WAYPOINTS = [[-0.09, -0.04], [0.09, -0.04], [0.09, 0.04], [-0.09, 0.04]]


def _check_keys(block: dict, allowed, where: str):
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ScenarioError(f"unknown key(s) {unknown} in {where}; allowed: {sorted(allowed)}")


def _build(cls, overrides: dict, where: str, **fixed):
    names = {f.name for f in dataclasses.fields(cls)} - set(fixed)
    _check_keys(overrides, names, where)
    try:
        return cls(**fixed, **{k: _plainify(v) for k, v in overrides.items()})
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"bad {where}: {exc}") from exc


def _plainify(value):
    if isinstance(value, list):
        return tuple(_plainify(v) for v in value)
    return value


@dataclass(frozen=True)
class Scenario:
    """A validated scenario: plain data plus the resolved name."""

    name: str
    data: dict

    @property
    def task(self) -> str:
        return self.data["task"]

    @property
    def trials(self) -> int:
        return self.data["trials"]

    @property
    def seed(self) -> int:
        return self.data["seed"]


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file; raises ScenarioError on any problem."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"scenario is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError("scenario top level must be a mapping")
    return validate_scenario(raw, default_name=path.stem)


def validate_scenario(raw: dict, default_name: str = "scenario") -> Scenario:
    data = dict(raw)
    _check_keys(data, _TOP_KEYS, "scenario")

    task = data.setdefault("task", "insertion")
    if task not in ("insertion", "wiping"):
        raise ScenarioError(f"task must be insertion or wiping, got {task!r}")
    agent = data.setdefault("agent", "closed_loop")
    if agent not in ("closed_loop", "open_loop"):
        raise ScenarioError(f"agent must be closed_loop or open_loop, got {agent!r}")

    trials = data.setdefault("trials", 1)
    if not isinstance(trials, int) or trials < 1:
        raise ScenarioError("trials must be an integer >= 1")
    seed = data.setdefault("seed", 0)
    if not isinstance(seed, int):
        raise ScenarioError("seed must be an integer")

    data.setdefault("name", default_name)
    data.setdefault("chain", "arm6")
    data.setdefault("scene", {})
    data.setdefault("sampler", {})
    data.setdefault("perception", {})
    data.setdefault("episode", {})
    data.setdefault("agent_config", {})
    data.setdefault("judge", {})
    data.setdefault("retarget_anchor", _DEFAULT_ANCHOR[task])
    data.setdefault("thresholds", {})

    thresholds = data["thresholds"] or {}
    _check_keys(thresholds, {"min_success_rate"}, "thresholds")
    rate = thresholds.get("min_success_rate")
    if rate is not None and not 0.0 <= float(rate) <= 1.0:
        raise ScenarioError("thresholds.min_success_rate must lie in [0, 1]")

    _check_keys(data["agent_config"] or {}, _AGENT_KEYS[(task, agent)],
                f"agent_config (task={task}, agent={agent})")

    # Building every component catches the remaining field errors up front.
    scenario = Scenario(data["name"], data)
    _chain_for(scenario)
    _scene_for(scenario)
    _sampler_for(scenario)
    _perception_for(scenario)
    _episode_for(scenario)
    _judge_for(scenario)
    return scenario


# --- component builders --------------------------------------------------------


def _chain_for(s: Scenario) -> KinematicChain:
    ref = s.data["chain"]
    try:
        if isinstance(ref, str) and (ref.endswith(".yaml") or ref.endswith(".yml") or "/" in ref):
            if not Path(ref).exists():
                raise ScenarioError(f"chain file not found: {ref}")
            return load_chain(ref)
        return builtin_chain(ref)
    except (ValueError, KeyError, OSError) as exc:
        raise ScenarioError(f"bad chain reference {ref!r}: {exc}") from exc


def _pose_field(block: dict, key: str, default: Pose) -> Pose:
    record = block.pop(key, None)
    if record is None:
        return default
    try:
        return pose_from_record(list(record))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"scene.{key} must be a [qw,qx,qy,qz,x,y,z] record: {exc}") from exc


# z axis straight down (a pitch flip, which keeps approach poses well inside
# the arm's wrist limits): the bore descends into a tabletop block.
_DEFAULT_HOLE = pose_from_record([0.0, 0.0, 1.0, 0.0, 0.45, 0.0, 0.12])
_DEFAULT_BOARD = Pose.from_translation((0.45, 0.0, 0.10))


def _scene_for(s: Scenario):
    block = dict(s.data["scene"] or {})
    if s.task == "insertion":
        pose = _pose_field(block, "hole_pose", _DEFAULT_HOLE)
        return _build(PegHoleScene, block, "scene", hole_pose=pose)
    pose = _pose_field(block, "board_pose", _DEFAULT_BOARD)
    return _build(WipeScene, block, "scene", board_pose=pose)


def _sampler_for(s: Scenario) -> CategorySampler | None:
    block = s.data["sampler"]
    if block is None:
        return None
    return _build(CategorySampler, dict(block), "sampler")


def _perception_for(s: Scenario) -> PerceptionModel:
    return _build(PerceptionModel, dict(s.data["perception"] or {}), "perception")


def _episode_for(s: Scenario) -> EpisodeConfig:
    block = dict(s.data["episode"] or {})
    start = block.pop("start", "staged")
    if start not in ("staged", "exact"):
        raise ScenarioError(f"episode.start must be staged or exact, got {start!r}")
    block.pop("staging", None)
    block.pop("resolve", None)  # keep resolution/staging at library defaults
    return _build(EpisodeConfig, block, "episode", exact_start=(start == "exact"))


def _judge_for(s: Scenario):
    block = dict(s.data["judge"] or {})
    if s.task == "insertion":
        _check_keys(block, {"depth_target"}, "judge")
        return float(block.get("depth_target", 8e-3))
    return _build(WipeJudgeConfig, block, "judge")


def _default_grasp(task: str, scene) -> Pose:
    if task == "insertion":
        return Pose.from_translation((0.0, 0.0, 0.7 * scene.peg_length))
    return Pose.from_translation((0.0, 0.0, 0.10))


def _agent_factory(s: Scenario, cfg_episode: EpisodeConfig, scene):
    """Returns (factory, wipe_reference_kwargs_or_None)."""
    block = dict(s.data["agent_config"] or {})
    anchor = s.data["retarget_anchor"]
    agent = s.data["agent"]

    if s.task == "insertion":
        if agent == "closed_loop":
            config = _build(InsertionAgentConfig, block, "agent_config")

            def factory(kps):
                inner = InsertionAgent(config)
                return retarget(inner, anchor) if anchor else inner

        else:
            speed = float(block.get("speed", 0.015))
            travel = float(
                block.get(
                    "travel",
                    cfg_episode.hover + scene.chamfer_depth + scene.bore_depth + 5e-3,
                )
            )

            def factory(kps):
                direction = kps["hole_top"].frame.rotation.z_axis()
                return OpenLoopInsertAgent(direction, speed=speed, travel=travel)

        return factory, None

    # wiping: both agents share the reference definition
    block.setdefault("waypoints", _DEFAULT_WAYPOINTS)
    reference = {
        "waypoints": _plainify(block["waypoints"]),
        "wipe_speed": float(block.get("wipe_speed", 0.05)),
        "settle_time": float(block.get("settle_time", 2.0)),
    }
    if agent == "closed_loop":
        config = _build(WipingAgentConfig, block, "agent_config")

        def factory(kps):
            inner = WipingAgent(config)
            return retarget(inner, anchor) if anchor else inner

    else:
        approach = float(block.get("approach_speed", 0.025))
        descend = cfg_episode.hover + 10.0 / scene.stiffness  # plan to press ~10 N

        def factory(kps):
            return OpenLoopWipeAgent(
                kps["board_center"].frame,
                reference["waypoints"],
                wipe_speed=reference["wipe_speed"],
                settle_time=reference["settle_time"],
                descend_distance=descend,
                approach_speed=approach,
            )

    return factory, reference


# --- trials --------------------------------------------------------------------


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    passed: bool
    failure: str | None
    reasons: tuple
    duration: float  # simulated seconds
    params: dict
    metrics: dict

    def as_json(self) -> str:
        payload = {
            "trial": self.trial,
            "passed": self.passed,
            "failure": self.failure,
            "reasons": list(self.reasons),
            "duration": round(self.duration, 9),
            "params": self.params,
            "metrics": self.metrics,
        }
        return json.dumps(payload, sort_keys=True)


def run_trial(scenario: Scenario, trial: int) -> TrialRecord:
    """One seeded episode: sample instance, run, judge."""
    rng = np.random.default_rng([scenario.seed, trial])
    chain = _chain_for(scenario)
    base_scene = _scene_for(scenario)
    sampler = _sampler_for(scenario)
    model = _perception_for(scenario)
    cfg = _episode_for(scenario)
    judge_cfg = _judge_for(scenario)

    params: dict = {}
    if scenario.task == "insertion":
        if sampler is not None:
            scene, grasp = sampler.sample_peg(rng, base_scene)
            params = {
                "peg_half_extent": scene.peg_half_extent,
                "peg_length": scene.peg_length,
            }
        else:
            scene, grasp = base_scene, _default_grasp("insertion", base_scene)
        factory, _ = _agent_factory(scenario, cfg, scene)
        trace = run_insertion_episode(chain, scene, grasp, factory, model, rng, cfg)
        verdict = judge_insert(trace, depth_target=judge_cfg)
        metrics = {
            "final_depth": trace.final_depth,
            "staging_ok": trace.staging_ok,
            "timed_out": trace.timed_out,
        }
        duration = trace.duration
    else:
        if sampler is not None:
            scene, grasp = sampler.sample_eraser(rng, base_scene)
            params = {"eraser_half_extents": list(scene.eraser_half_extents)}
        else:
            scene, grasp = base_scene, _default_grasp("wiping", base_scene)
        factory, reference = _agent_factory(scenario, cfg, scene)
        trace = run_wipe_episode(
            chain, scene, grasp, factory,
            reference["waypoints"],
            wipe_speed=reference["wipe_speed"],
            settle_time=reference["settle_time"],
            model=model, rng=rng, cfg=cfg,
        )
        verdict = judge_wipe(trace, judge_cfg)
        active = [
            f for tt, f in zip(trace.times, trace.normal_force) if tt >= judge_cfg.wipe_start
        ]
        metrics = {
            "min_wipe_force": min(active) if active else 0.0,
            "staging_ok": trace.staging_ok,
        }
        duration = trace.duration

    params = {k: _round_floats(v) for k, v in params.items()}
    metrics = {k: _round_floats(v) for k, v in metrics.items()}
    return TrialRecord(
        trial=trial,
        passed=verdict.passed,
        failure=verdict.failure_tag,
        reasons=verdict.reasons,
        duration=duration,
        params=params,
        metrics=metrics,
    )


def _round_floats(value):
    if isinstance(value, (float, np.floating)):
        return round(float(value), 9)
    if isinstance(value, (list, tuple)):
        return [_round_floats(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    return value


def _run_trial_payload(payload) -> TrialRecord:
    name, data, trial = payload
    return run_trial(Scenario(name, data), trial)


# --- scenario execution ---------------------------------------------------------


@dataclass
class RunResult:
    scenario: str
    trials: int
    failures: int
    success_rate: float
    failure_modes: dict
    mean_duration: float
    thresholds_ok: bool
    records: list

    def summary_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "trials": self.trials,
            "failures": self.failures,
            "success_rate": round(self.success_rate, 9),
            "failure_modes": self.failure_modes,
            "mean_sim_duration": round(self.mean_duration, 9),
            "thresholds_ok": self.thresholds_ok,
        }

    def summary_text(self, task: str, agent: str) -> str:
        lines = [
            f"scenario: {self.scenario}",
            f"  task {task}  agent {agent}  trials {self.trials}",
            f"  failures {self.failures}/{self.trials}"
            f"  (success rate {self.success_rate:.3f})",
        ]
        if self.failure_modes:
            modes = ", ".join(f"{k}: {v}" for k, v in sorted(self.failure_modes.items()))
            lines.append(f"  failure modes: {modes}")
        lines.append(f"  mean episode sim-time {self.mean_duration:.3f} s")
        lines.append(f"  thresholds {'met' if self.thresholds_ok else 'NOT met'}")
        return "\n".join(lines) + "\n"


def run_scenario(
    scenario: Scenario | str | Path,
    out_dir=None,
    trials: int | None = None,
    seed: int | None = None,
    parallel: int = 1,
) -> RunResult:
    """Run all trials, write trials.jsonl / summary.json / summary.txt."""
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    data = dict(scenario.data)
    if trials is not None:
        data["trials"] = trials
    if seed is not None:
        data["seed"] = seed
    scenario = validate_scenario(data, default_name=scenario.name)

    ids = range(scenario.trials)
    if parallel > 1:
        payloads = [(scenario.name, scenario.data, i) for i in ids]
        with Pool(parallel) as pool:
            records = pool.map(_run_trial_payload, payloads)
    else:
        records = [run_trial(scenario, i) for i in ids]

    failures = sum(not r.passed for r in records)
    modes: dict = {}
    for r in records:
        if not r.passed and r.failure:
            modes[r.failure] = modes.get(r.failure, 0) + 1
    rate = 1.0 - failures / len(records)
    mean_duration = float(np.mean([r.duration for r in records]))

    min_rate = (scenario.data["thresholds"] or {}).get("min_success_rate")
    ok = True if min_rate is None else rate >= float(min_rate)

    result = RunResult(
        scenario.name, len(records), failures, rate, modes, mean_duration, ok, records
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "trials.jsonl", "w") as fh:
            for r in records:
                fh.write(r.as_json() + "\n")
        with open(out / "summary.json", "w") as fh:
            json.dump(result.summary_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")
        with open(out / "summary.txt", "w") as fh:
            fh.write(result.summary_text(scenario.task, scenario.data["agent"]))
    return result


def sweep(
    scenario: Scenario | str | Path,
    param: str,
    values,
    out_dir=None,
    trials: int | None = None,
    seed: int | None = None,
    parallel: int = 1,
) -> list:
    """Re-run the scenario once per value of a dotted config parameter.

    ``param`` addresses into the scenario mapping, e.g.
    ``perception.position_sigma`` or ``scene.clearance``.  Returns
    ``[(value, RunResult), ...]`` and writes one sub-directory per value plus
    a top-level ``sweep.jsonl``.
    """
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    keys = param.split(".")
    results = []
    for value in values:
        data = json.loads(json.dumps(scenario.data))  # deep copy, plain types
        node = data
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                node[k] = {}
            node = node[k]
        node[keys[-1]] = value
        data["name"] = f"{scenario.name}[{param}={value}]"
        sub = validate_scenario(data, default_name=data["name"])
        sub_dir = None
        if out_dir is not None:
            sub_dir = Path(out_dir) / f"{param.replace('.', '_')}_{value}"
        results.append((value, run_scenario(sub, sub_dir, trials, seed, parallel)))

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.jsonl", "w") as fh:
            for value, res in results:
                fh.write(json.dumps(
                    {"param": param, "value": value,
                     "trials": res.trials, "failures": res.failures,
                     "success_rate": round(res.success_rate, 9)},
                    sort_keys=True,
                ) + "\n")
    return results


def default_out_dir(scenario_name: str) -> Path:
    """CLI default: $OKMANIP_OUT or ./okmanip_out, plus the scenario name."""
    root = os.environ.get("OKMANIP_OUT", "okmanip_out")
    return Path(root) / scenario_name
