"""Hand-coded expert policies used to record seed demonstrations.

Each expert runs a small waypoint phase machine against the simulator state:
hover over a block, descend, close, carry, place.  The push expert also
picks the block up and carries it rather than shoving it along the table,
mirroring how people demonstrate the task.  Experts move at half speed and
dwell a few steps around grasp and release; slow, padded trajectories leave
headroom for the retargeting stretch and tracking noise downstream.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from onedemo.demos import DemoRecorder, DemoSource, DemoTrajectory, validate_demo
from onedemo.env import (
    MAX_STEP,
    SimState,
    TabletopSim,
    TaskInstance,
    TaskKind,
    TaskSpec,
    sample_task_instance,
)
from onedemo.errors import DegenerateWorkspaceError, RejectedDemoError

HOVER_Z = 0.10
SPEED = 0.5  # fraction of the per-step actuation limit
# Scripted demo instances keep at least this much start-to-goal displacement
# per axis so the retargeting scale factors stay moderate.
MIN_AXIS_DISP = 0.10
MIN_CLEARANCE = 0.06  # keep other blocks/goals away from each grasp point


@dataclass
class _Phase:
    target: np.ndarray
    grip: float
    dwell: int = 0  # extra steps to hold once the target is reached


class ScriptedExpert:
    """Deterministic phase-machine policy for one task instance."""

    def __init__(self, spec: TaskSpec, instance: TaskInstance, speed: float = SPEED):
        self.spec = spec
        self.speed = speed
        self._phases = self._plan(spec, instance)
        self._idx = 0
        self._dwell_left = self._phases[0].dwell

    @staticmethod
    def _pick_place(block, goal, lift_z, hold: bool) -> list[_Phase]:
        bx, by, bz = block
        gx, gy, gz = goal
        # Dwells pad the trajectory where precision matters: settling over the
        # block before closing, and closing for several steps.  Replayed under
        # noise these pauses are what let the tracker catch up and re-try a
        # missed grasp; the gripper keeps closing through the carry for the
        # same reason.
        phases = [
            _Phase(np.array([bx, by, HOVER_Z]), grip=1.0, dwell=3),
            _Phase(np.array([bx, by, bz]), grip=1.0, dwell=2),
            _Phase(np.array([bx, by, bz]), grip=-1.0, dwell=6),
            _Phase(np.array([bx, by, lift_z]), grip=-1.0),
            _Phase(np.array([gx, gy, lift_z]), grip=-1.0),
            _Phase(np.array([gx, gy, gz]), grip=-1.0, dwell=2),
        ]
        if hold:
            phases.append(_Phase(np.array([gx, gy, gz]), grip=-1.0, dwell=10_000))
        else:
            phases.append(_Phase(np.array([gx, gy, gz]), grip=1.0, dwell=2))  # open
            phases.append(_Phase(np.array([gx, gy, gz + 0.08]), grip=1.0))
        return phases

    def _plan(self, spec: TaskSpec, inst: TaskInstance) -> list[_Phase]:
        if spec.kind is TaskKind.STACK:
            first = self._pick_place(inst.block_starts[0], inst.goals[0], HOVER_Z, hold=False)
            second = self._pick_place(inst.block_starts[1], inst.goals[1], HOVER_Z, hold=True)
            return first + second
        # Push goals sit on the table and pick-and-place goals may float;
        # both are demonstrated by carrying the block and holding it there.
        return self._pick_place(inst.block_starts[0], inst.goals[0], HOVER_Z, hold=True)

    def action(self, state: SimState) -> np.ndarray:
        phase = self._phases[self._idx]
        err = phase.target - state.ee_pos
        if np.max(np.abs(err)) < 1e-6:
            if self._dwell_left > 0:
                self._dwell_left -= 1
            elif self._idx + 1 < len(self._phases):
                self._idx += 1
                self._dwell_left = self._phases[self._idx].dwell
                phase = self._phases[self._idx]
                err = phase.target - state.ee_pos
        d_pos = np.clip(err / MAX_STEP, -self.speed, self.speed)
        return np.array([d_pos[0], d_pos[1], d_pos[2], phase.grip])


def _axis_disp_ok(a: np.ndarray, b: np.ndarray) -> bool:
    return bool(np.all(np.abs(a[:2] - b[:2]) >= MIN_AXIS_DISP))


def _scripted_instance(spec: TaskSpec, rng: np.random.Generator) -> TaskInstance:
    """Sample an instance with healthy per-axis displacement for recording."""
    for _ in range(2000):
        inst = sample_task_instance(spec, rng)
        pairs = [(inst.block_starts[i], inst.goals[i]) for i in range(spec.n_blocks)]
        if not all(_axis_disp_ok(s, g) for s, g in pairs):
            continue
        if spec.kind is TaskKind.PICK_AND_PLACE and inst.goals[0, 2] < 0.12:
            # insist on a high air goal so vertical retargeting stays tame
            continue
        if spec.n_blocks == 2:
            # keep every grasp/place location clear of the other block's
            points = [inst.block_starts[0], inst.block_starts[1], inst.goals[0]]
            gaps = [
                np.linalg.norm(p[:2] - q[:2])
                for i, p in enumerate(points)
                for q in points[i + 1 :]
            ]
            if min(gaps) < MIN_CLEARANCE:
                continue
        return inst
    raise DegenerateWorkspaceError(
        "could not sample a well-spread instance for a scripted demonstration"
    )


def record_scripted_demo(
    kind: TaskKind | str,
    seed: int = 0,
    spec: TaskSpec | None = None,
    metadata: str = "",
) -> DemoTrajectory:
    """Run the expert on a seed-derived instance and return a validated demo."""
    spec = spec or TaskSpec.for_kind(kind)
    rng = np.random.default_rng(seed)
    last_err: Exception | None = None
    for _ in range(20):  # rare expert failures: resample and retry
        if spec.kind is TaskKind.PICK_AND_PLACE:
            draw_spec = TaskSpec.for_kind(spec.kind, goal_in_air_fraction=1.0)
        else:
            draw_spec = spec
        inst = _scripted_instance(draw_spec, rng)
        sim = TabletopSim(spec)
        sim.reset(instance=inst)
        expert = ScriptedExpert(spec, inst)
        recorder = DemoRecorder(spec, inst)
        for _ in range(spec.episode_length):
            a = expert.action(sim.state)
            state, _, _, _ = sim.step(a)
            recorder.record_step(state, a)
        demo = recorder.finish(DemoSource.SCRIPTED_EXPERT, metadata=metadata)
        try:
            validate_demo(demo, spec)
            return demo
        except RejectedDemoError as e:
            last_err = e
    raise RejectedDemoError(
        f"scripted expert kept failing on sampled instances: {last_err}"
    )
