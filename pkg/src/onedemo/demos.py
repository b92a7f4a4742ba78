"""Recorded demonstrations: waypoint trajectories, persistence, validation.

A demonstration is the post-step end-effector path of one successful episode
plus the episode's start layout.  Gripper intent is stored as a boolean
closing flag (the sign of the commanded width change) together with the
realized width, which is enough to replay grasp and release events exactly.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from onedemo.env import (
    MAX_STEP,
    SimState,
    TabletopSim,
    TaskInstance,
    TaskKind,
    TaskSpec,
)
from onedemo.errors import (
    DemoFormatError,
    RejectedDemoError,
    UnsplittableDemoError,
    ValidationError,
)

FORMAT_VERSION = 1


class DemoSource(str, enum.Enum):
    HUMAN_TELEOP = "human_teleop"
    SCRIPTED_EXPERT = "scripted_expert"
    TRAINED_AGENT = "trained_agent"


@dataclass(frozen=True)
class DemoWaypoint:
    step_index: int
    ee_pos: np.ndarray  # post-step position, (3,)
    gripper_width: float
    gripper_closing: bool  # commanded d_gripper < 0 on this step


@dataclass
class DemoTrajectory:
    task: TaskKind
    waypoints: list[DemoWaypoint]
    block_starts: np.ndarray  # (n, 3)
    goals: np.ndarray  # (n, 3)
    source: DemoSource
    metadata: str = ""

    @property
    def instance(self) -> TaskInstance:
        return TaskInstance(self.block_starts.copy(), self.goals.copy())

    def __len__(self) -> int:
        return len(self.waypoints)


@dataclass(frozen=True)
class DemoSegment:
    """A contiguous waypoint range moving one block from a start to a goal."""

    demo: DemoTrajectory
    lo: int  # first waypoint index, inclusive
    hi: int  # last waypoint index, inclusive
    block_index: int
    start: np.ndarray  # recorded start of the segment's block
    goal: np.ndarray  # recorded goal of the segment's block

    @property
    def waypoints(self) -> list[DemoWaypoint]:
        return self.demo.waypoints[self.lo : self.hi + 1]


class DemoRecorder:
    """Accumulates waypoints while an episode is driven externally."""

    def __init__(self, spec: TaskSpec, instance: TaskInstance):
        self.spec = spec
        self.instance = instance
        self._waypoints: list[DemoWaypoint] = []
        self._closed = False

    def record_step(self, state: SimState, action) -> None:
        if self._closed:
            raise ValidationError("recorder already finished")
        a = np.asarray(action, dtype=np.float64).ravel()
        self._waypoints.append(
            DemoWaypoint(
                step_index=len(self._waypoints),
                ee_pos=state.ee_pos.copy(),
                gripper_width=float(state.gripper_width),
                gripper_closing=bool(a[3] < 0.0),
            )
        )

    def finish(self, source: DemoSource, metadata: str = "") -> DemoTrajectory:
        if self._closed:
            raise ValidationError("recorder already finished")
        self._closed = True
        return DemoTrajectory(
            task=self.spec.kind,
            waypoints=list(self._waypoints),
            block_starts=np.asarray(self.instance.block_starts, dtype=np.float64).copy(),
            goals=np.asarray(self.instance.goals, dtype=np.float64).copy(),
            source=source,
            metadata=metadata,
        )


def replay_action(state: SimState, wp: DemoWaypoint) -> np.ndarray:
    """Action that steers the simulator from `state` onto waypoint `wp`.

    Positions divide out the actuation scale; the gripper re-issues the
    recorded closing intent, otherwise it tracks the recorded width.
    """
    d_pos = (wp.ee_pos - state.ee_pos) / MAX_STEP
    if wp.gripper_closing:
        d_w = -1.0
    else:
        d_w = float(np.clip((wp.gripper_width - state.gripper_width) / MAX_STEP, -1.0, 1.0))
    return np.array([d_pos[0], d_pos[1], d_pos[2], d_w])


def replay_demo(demo: DemoTrajectory, spec: TaskSpec | None = None):
    """Open-loop replay from the recorded layout.

    Returns (success, states) where states holds the post-step SimState per
    waypoint and success is the final step's task-complete flag.
    """
    spec = spec or TaskSpec.for_kind(demo.task)
    if spec.kind is not demo.task:
        raise ValidationError(f"demo task {demo.task} does not match spec {spec.kind}")
    sim = TabletopSim(spec)
    sim.reset(instance=demo.instance)
    states: list[SimState] = []
    success = False
    for wp in demo.waypoints:
        state, _, _, info = sim.step(replay_action(sim.state, wp))
        states.append(state)
        success = bool(info["is_success"])
    return success, states


def validate_demo(demo: DemoTrajectory, spec: TaskSpec | None = None) -> None:
    """Structural checks plus the replay gate: a demo must solve its task."""
    if len(demo.waypoints) < 2:
        raise RejectedDemoError("demonstration has fewer than 2 waypoints")
    idx = [wp.step_index for wp in demo.waypoints]
    if idx != list(range(len(idx))):
        raise RejectedDemoError("waypoint step indices must be 0,1,2,...")
    spec = spec or TaskSpec.for_kind(demo.task)
    if len(demo.waypoints) > spec.episode_length:
        raise RejectedDemoError(
            f"{len(demo.waypoints)} waypoints exceed the {spec.episode_length}-step episode"
        )
    for wp in demo.waypoints:
        if not np.all(np.isfinite(wp.ee_pos)) or not np.isfinite(wp.gripper_width):
            raise RejectedDemoError(f"waypoint {wp.step_index} has non-finite values")
    success, _ = replay_demo(demo, spec)
    if not success:
        raise RejectedDemoError(
            "replaying the demonstration from its recorded layout does not "
            "complete the task"
        )


def save_demo(demo: DemoTrajectory, path: str | Path, spec: TaskSpec | None = None) -> Path:
    """Validate, then write the demonstration as JSON. Rejects failures."""
    validate_demo(demo, spec)
    doc = {
        "format_version": FORMAT_VERSION,
        "task": demo.task.value,
        "source": demo.source.value,
        "block_starts": [[float(v) for v in row] for row in demo.block_starts],
        "goals": [[float(v) for v in row] for row in demo.goals],
        "waypoints": [
            {
                "i": wp.step_index,
                "ee": [float(v) for v in wp.ee_pos],
                "w": float(wp.gripper_width),
                "closing": bool(wp.gripper_closing),
            }
            for wp in demo.waypoints
        ],
        "metadata": demo.metadata,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


def _field(doc: dict, key: str, kind, where: str):
    if key not in doc:
        raise DemoFormatError(f"{where}: missing field '{key}'")
    val = doc[key]
    if kind is float:
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise DemoFormatError(f"{where}: field '{key}' must be a number")
        return float(val)
    if not isinstance(val, kind):
        raise DemoFormatError(f"{where}: field '{key}' has wrong type")
    return val


def _vec3(raw, where: str) -> np.ndarray:
    if not isinstance(raw, list) or len(raw) != 3 or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw
    ):
        raise DemoFormatError(f"{where}: expected a list of 3 numbers")
    return np.array(raw, dtype=np.float64)


def load_demo(path: str | Path) -> DemoTrajectory:
    """Parse a demonstration file; errors name the offending field."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DemoFormatError(f"{path}: not valid JSON at line {e.lineno}: {e.msg}") from e
    if not isinstance(doc, dict):
        raise DemoFormatError(f"{path}: top level must be an object")
    version = _field(doc, "format_version", int, str(path))
    if version != FORMAT_VERSION:
        raise DemoFormatError(f"{path}: unsupported format_version {version}")
    try:
        task = TaskKind(_field(doc, "task", str, str(path)))
    except ValueError as e:
        raise DemoFormatError(f"{path}: unknown task '{doc.get('task')}'") from e
    try:
        source = DemoSource(_field(doc, "source", str, str(path)))
    except ValueError as e:
        raise DemoFormatError(f"{path}: unknown source '{doc.get('source')}'") from e
    raw_starts = _field(doc, "block_starts", list, str(path))
    raw_goals = _field(doc, "goals", list, str(path))
    starts = np.array([_vec3(r, f"{path}: block_starts[{i}]") for i, r in enumerate(raw_starts)])
    goals = np.array([_vec3(r, f"{path}: goals[{i}]") for i, r in enumerate(raw_goals)])
    raw_wps = _field(doc, "waypoints", list, str(path))
    waypoints = []
    for k, raw in enumerate(raw_wps):
        where = f"{path}: waypoints[{k}]"
        if not isinstance(raw, dict):
            raise DemoFormatError(f"{where}: must be an object")
        waypoints.append(
            DemoWaypoint(
                step_index=_field(raw, "i", int, where),
                ee_pos=_vec3(_field(raw, "ee", list, where), f"{where}.ee"),
                gripper_width=_field(raw, "w", float, where),
                gripper_closing=_field(raw, "closing", bool, where),
            )
        )
    metadata = _field(doc, "metadata", str, str(path))
    return DemoTrajectory(
        task=task,
        waypoints=waypoints,
        block_starts=starts,
        goals=goals,
        source=source,
        metadata=metadata,
    )


def split_subtrajectories(demo: DemoTrajectory, spec: TaskSpec | None = None) -> list[DemoSegment]:
    """Cut a demo into per-block segments for independent retargeting.

    Single-block tasks are one segment.  A stack demo is split right after
    the release that leaves block 0 within its success threshold of its
    recorded placement; the remainder moves block 1.
    """
    spec = spec or TaskSpec.for_kind(demo.task)
    if len(demo.waypoints) == 0:
        raise ValidationError("demo has no waypoints")
    last = len(demo.waypoints) - 1
    if demo.task is not TaskKind.STACK:
        return [
            DemoSegment(
                demo, 0, last, 0,
                demo.block_starts[0].copy(), demo.goals[0].copy(),
            )
        ]
    _, states = replay_demo(demo, spec)
    split_at = None
    prev_grasped = None
    for i, state in enumerate(states):
        released = prev_grasped == 0 and state.grasped_block != 0
        if released:
            placed = np.linalg.norm(state.blocks[0].pos - demo.goals[0])
            if placed < spec.success_threshold:
                split_at = i
                break
        prev_grasped = state.grasped_block
    if split_at is None or split_at >= last:
        raise UnsplittableDemoError(
            "no release of block 0 near its recorded placement; cannot split "
            "the stack demonstration into per-block segments"
        )
    return [
        DemoSegment(demo, 0, split_at, 0, demo.block_starts[0].copy(), demo.goals[0].copy()),
        DemoSegment(demo, split_at + 1, last, 1, demo.block_starts[1].copy(), demo.goals[1].copy()),
    ]
