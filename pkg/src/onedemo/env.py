"""Deterministic kinematic tabletop simulator for block manipulation tasks.

There is no physics engine underneath: a point end-effector moves in a
clamped box, blocks are axis-aligned cubes that can be grasped, released,
pushed, and that settle instantly onto their highest support.  All state
transitions are pure float64 arithmetic, so an action sequence replays
bit-identically anywhere.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from onedemo.errors import (
    DegenerateWorkspaceError,
    EpisodeOverError,
    ValidationError,
)

# Per-step actuation limits: largest end-effector move per axis and the
# matching gripper-width change, both scaled by an action in [-1, 1].
MAX_STEP = 0.05
GRIPPER_MAX_WIDTH = 0.08
GRASP_RADIUS = 0.025
HOME_EE = (0.0, 0.0, 0.15)
SAMPLE_ATTEMPTS = 1000


class TaskKind(str, enum.Enum):
    PUSH = "push"
    PICK_AND_PLACE = "pick_and_place"
    STACK = "stack"


@dataclass(frozen=True)
class Workspace:
    """Axis-aligned sampling and actuation bounds on the table.

    Block starts and goals are drawn from the square ``[-xy_half, xy_half]^2``;
    air goals (pick-and-place) get a height in ``air_z``.  The end effector
    itself can roam the larger table square out to ``table_half``.
    """

    xy_half: float = 0.15
    air_z: tuple[float, float] = (0.05, 0.20)
    table_half: float = 0.30
    ee_z_max: float = 0.35


@dataclass(frozen=True)
class TaskSpec:
    """Static description of one task family."""

    kind: TaskKind
    block_half_extent: float = 0.02
    success_threshold: float = 0.05
    episode_length: int = 50
    workspace: Workspace = field(default_factory=Workspace)
    goal_in_air_fraction: float = 0.5

    def __post_init__(self):
        problems = []
        if self.block_half_extent <= 0:
            problems.append("block_half_extent must be positive")
        if self.success_threshold <= 0:
            problems.append("success_threshold must be positive")
        if self.episode_length < 1:
            problems.append("episode_length must be >= 1")
        if not 0.0 <= self.goal_in_air_fraction <= 1.0:
            problems.append("goal_in_air_fraction must be in [0, 1]")
        ws = self.workspace
        if ws.xy_half <= 0:
            problems.append("workspace.xy_half must be positive")
        if ws.table_half < ws.xy_half + self.block_half_extent:
            problems.append("blocks at the workspace edge must still fit on the table")
        if not (self.block_half_extent < ws.air_z[0] < ws.air_z[1] <= ws.ee_z_max):
            problems.append("workspace.air_z band must sit above the block and below ee_z_max")
        if problems:
            raise ValidationError("; ".join(problems))

    @property
    def n_blocks(self) -> int:
        return 2 if self.kind is TaskKind.STACK else 1

    @property
    def goal_dim(self) -> int:
        return 3 * self.n_blocks

    @property
    def obs_dim(self) -> int:
        # ee pos + ee vel + width, then pos/rot/lin_vel/ang_vel per block.
        return 7 + 12 * self.n_blocks

    @staticmethod
    def for_kind(kind: TaskKind | str, **overrides) -> "TaskSpec":
        kind = TaskKind(kind)
        defaults = {
            TaskKind.PUSH: dict(success_threshold=0.05, episode_length=50),
            TaskKind.PICK_AND_PLACE: dict(success_threshold=0.05, episode_length=50),
            TaskKind.STACK: dict(success_threshold=0.04, episode_length=100),
        }[kind]
        defaults.update(overrides)
        return TaskSpec(kind=kind, **defaults)


@dataclass
class BlockState:
    pos: np.ndarray
    rot: np.ndarray
    lin_vel: np.ndarray
    ang_vel: np.ndarray
    half_extent: float

    def copy(self) -> "BlockState":
        return BlockState(
            self.pos.copy(), self.rot.copy(), self.lin_vel.copy(),
            self.ang_vel.copy(), self.half_extent,
        )


@dataclass
class SimState:
    ee_pos: np.ndarray
    ee_vel: np.ndarray
    gripper_width: float
    blocks: list[BlockState]
    grasped_block: int | None
    goals: np.ndarray  # (n_blocks, 3)
    step_count: int

    def copy(self) -> "SimState":
        return SimState(
            self.ee_pos.copy(), self.ee_vel.copy(), self.gripper_width,
            [b.copy() for b in self.blocks], self.grasped_block,
            self.goals.copy(), self.step_count,
        )


@dataclass(frozen=True)
class Observation:
    state_vector: np.ndarray
    achieved_goal: np.ndarray
    desired_goal: np.ndarray


@dataclass(frozen=True)
class TaskInstance:
    """One concrete episode layout: block start positions and goals."""

    block_starts: np.ndarray  # (n, 3)
    goals: np.ndarray  # (n, 3)


def _vec(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.shape != (3,):
        raise ValidationError(f"expected a 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("vector has non-finite components")
    return a


def compute_reward(achieved_goal, desired_goal, spec: TaskSpec):
    """Sparse reward: 0.0 iff every block is within the success threshold.

    Accepts single goals of shape (3n,) or batches (..., 3n); distances are
    per-block L2 norms.  Pure function of its inputs.
    """
    a = np.asarray(achieved_goal, dtype=np.float64)
    d = np.asarray(desired_goal, dtype=np.float64)
    if a.shape != d.shape:
        raise ValidationError(f"goal shapes differ: {a.shape} vs {d.shape}")
    if a.shape[-1] != spec.goal_dim:
        raise ValidationError(
            f"goal dim {a.shape[-1]} does not match task ({spec.goal_dim})"
        )
    diff = (a - d).reshape(a.shape[:-1] + (spec.n_blocks, 3))
    dist = np.linalg.norm(diff, axis=-1)
    ok = np.all(dist < spec.success_threshold, axis=-1)
    out = np.where(ok, 0.0, -1.0)
    return float(out) if out.ndim == 0 else out


def observe(state: SimState, spec: TaskSpec) -> Observation:
    parts = [state.ee_pos, state.ee_vel, [state.gripper_width]]
    for b in state.blocks:
        parts.extend([b.pos, b.rot, b.lin_vel, b.ang_vel])
    sv = np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in parts])
    achieved = np.concatenate([b.pos for b in state.blocks])
    desired = state.goals.ravel().copy()
    return Observation(sv, achieved, desired)


def sample_task_instance(spec: TaskSpec, rng: np.random.Generator) -> TaskInstance:
    """Draw block starts and goals uniformly from the workspace.

    Starts are always on the table.  Push goals stay on the table;
    pick-and-place goals go into the air with probability
    ``goal_in_air_fraction``; stack goals form a two-block column.
    Rejection sampling keeps stack starts from overlapping.
    """
    ws = spec.workspace
    he = spec.block_half_extent
    n = spec.n_blocks

    def draw_xy():
        return rng.uniform(-ws.xy_half, ws.xy_half, size=2)

    for _ in range(SAMPLE_ATTEMPTS):
        starts = np.zeros((n, 3))
        for i in range(n):
            starts[i, :2] = draw_xy()
            starts[i, 2] = he
        if n == 2:
            gap = np.linalg.norm(starts[0, :2] - starts[1, :2])
            if gap <= 2 * he:
                continue
        goals = np.zeros((n, 3))
        if spec.kind is TaskKind.PUSH:
            goals[0, :2] = draw_xy()
            goals[0, 2] = he
        elif spec.kind is TaskKind.PICK_AND_PLACE:
            goals[0, :2] = draw_xy()
            if rng.random() < spec.goal_in_air_fraction:
                goals[0, 2] = rng.uniform(*ws.air_z)
            else:
                goals[0, 2] = he
        else:  # stack: column of two blocks
            goals[0, :2] = draw_xy()
            goals[0, 2] = he
            goals[1] = goals[0] + np.array([0.0, 0.0, 2 * he])
        return TaskInstance(starts, goals)
    raise DegenerateWorkspaceError(
        f"could not sample a valid instance in {SAMPLE_ATTEMPTS} attempts"
    )


def validate_instance(spec: TaskSpec, instance: TaskInstance) -> TaskInstance:
    ws = spec.workspace
    he = spec.block_half_extent
    starts = np.asarray(instance.block_starts, dtype=np.float64)
    goals = np.asarray(instance.goals, dtype=np.float64)
    if starts.shape != (spec.n_blocks, 3) or goals.shape != (spec.n_blocks, 3):
        raise ValidationError(
            f"instance shapes {starts.shape}/{goals.shape} do not match "
            f"a {spec.n_blocks}-block task"
        )
    if not (np.all(np.isfinite(starts)) and np.all(np.isfinite(goals))):
        raise ValidationError("instance has non-finite coordinates")
    if np.any(np.abs(starts[:, :2]) > ws.xy_half + 1e-9):
        raise ValidationError("block start outside the workspace")
    if np.any(np.abs(starts[:, 2] - he) > 1e-9):
        raise ValidationError("block starts must sit on the table")
    if spec.kind is TaskKind.STACK:
        col = goals[1] - goals[0]
        if np.linalg.norm(col - np.array([0.0, 0.0, 2 * he])) > 1e-9:
            raise ValidationError("stack goals must form a two-block column")
    return TaskInstance(starts, goals)


def _as_action(action) -> np.ndarray:
    a = np.asarray(action, dtype=np.float64).ravel()
    if a.shape != (4,):
        raise ValidationError(f"action must have 4 components, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("action has non-finite components")
    return a


class TabletopSim:
    """Kinematic simulator. Each step applies, in order:

    1. end-effector move, clamped to 5 cm per axis and to the table box, and
       the gripper-width change; a grasped block tracks the end effector;
    2. grasp: a closing command (d_gripper < 0) with nothing held attaches
       the nearest block whose center is within 2.5 cm of the end effector;
    3. release: the held block detaches once the gripper opens wider than
       the block plus 1 cm;
    4. push: an ungrasped block overlapped by the end effector's horizontal
       sweep (while the end effector is below the block top) is translated
       along the sweep direction by the penetration depth;
    5. settle: ungrasped, unsupported blocks drop instantly onto their
       highest support (table, or another block within half an extent of
       horizontal center offset).

    Episodes have a fixed length; stepping past it raises EpisodeOverError.
    """

    def __init__(self, spec: TaskSpec):
        self.spec = spec
        self._state: SimState | None = None

    @property
    def state(self) -> SimState:
        if self._state is None:
            raise ValidationError("reset() must be called before reading state")
        return self._state

    def reset(
        self,
        rng: np.random.Generator | None = None,
        instance: TaskInstance | None = None,
    ) -> tuple[SimState, Observation]:
        if instance is None:
            if rng is None:
                raise ValidationError("reset() needs an rng or an explicit instance")
            instance = sample_task_instance(self.spec, rng)
        else:
            instance = validate_instance(self.spec, instance)
        he = self.spec.block_half_extent
        blocks = [
            BlockState(
                pos=instance.block_starts[i].copy(),
                rot=np.zeros(3),
                lin_vel=np.zeros(3),
                ang_vel=np.zeros(3),
                half_extent=he,
            )
            for i in range(self.spec.n_blocks)
        ]
        self._state = SimState(
            ee_pos=np.array(HOME_EE, dtype=np.float64),
            ee_vel=np.zeros(3),
            gripper_width=GRIPPER_MAX_WIDTH,
            blocks=blocks,
            grasped_block=None,
            goals=instance.goals.copy(),
            step_count=0,
        )
        return self._state.copy(), observe(self._state, self.spec)

    def step(self, action) -> tuple[SimState, Observation, float, dict]:
        spec = self.spec
        st = self.state
        if st.step_count >= spec.episode_length:
            raise EpisodeOverError(
                f"episode is over after {spec.episode_length} steps; reset() first"
            )
        a = np.clip(_as_action(action), -1.0, 1.0)
        ws = spec.workspace
        he = spec.block_half_extent

        old_ee = st.ee_pos
        old_block_pos = [b.pos.copy() for b in st.blocks]

        # 1. actuate: ee move (clamped to the table box) and gripper width.
        lo = np.array([-ws.table_half, -ws.table_half, he])
        hi = np.array([ws.table_half, ws.table_half, ws.ee_z_max])
        new_ee = np.clip(old_ee + MAX_STEP * a[:3], lo, hi)
        new_w = float(np.clip(st.gripper_width + MAX_STEP * a[3], 0.0, GRIPPER_MAX_WIDTH))
        grasped = st.grasped_block
        blocks = [b.copy() for b in st.blocks]
        if grasped is not None:
            blocks[grasped].pos = new_ee.copy()

        # 2. grasp on a closing command.
        if a[3] < 0.0 and grasped is None:
            dists = [np.linalg.norm(b.pos - new_ee) for b in blocks]
            nearest = int(np.argmin(dists))
            if dists[nearest] <= GRASP_RADIUS:
                grasped = nearest
                blocks[nearest].pos = new_ee.copy()

        # 3. release once the gripper is wider than the block plus 1 cm.
        if grasped is not None and new_w > 2 * he + 0.01:
            grasped = None

        # 4. push ungrasped blocks swept by the ee below their top face.
        for i, b in enumerate(blocks):
            if i == grasped:
                continue
            _push_block(b, old_ee, new_ee)

        # 5. settle, lowest block first.
        order = sorted(range(len(blocks)), key=lambda i: blocks[i].pos[2])
        for i in order:
            if i == grasped:
                continue
            b = blocks[i]
            bottom = b.pos[2] - he
            support = 0.0
            for j, other in enumerate(blocks):
                if j == i:
                    continue
                top = other.pos[2] + other.half_extent
                off = np.linalg.norm(other.pos[:2] - b.pos[:2])
                if off < he and top <= bottom + 1e-9:
                    support = max(support, top)
            b.pos[2] = support + he

        for b, old in zip(blocks, old_block_pos):
            b.lin_vel = b.pos - old
        self._state = SimState(
            ee_pos=new_ee,
            ee_vel=new_ee - old_ee,
            gripper_width=new_w,
            blocks=blocks,
            grasped_block=grasped,
            goals=st.goals,
            step_count=st.step_count + 1,
        )
        obs = observe(self._state, spec)
        reward = compute_reward(obs.achieved_goal, obs.desired_goal, spec)
        info = {"is_success": reward == 0.0}
        return self._state.copy(), obs, reward, info


def _push_block(block: BlockState, p0: np.ndarray, p1: np.ndarray) -> None:
    """Quasi-static push: slide the block so the swept ee point exits its
    footprint.  Only horizontal motion pushes, and only below the block top."""
    if p1[2] >= block.pos[2] + block.half_extent:
        return
    d = p1[:2] - p0[:2]
    length = float(np.linalg.norm(d))
    if length < 1e-12:
        return
    lo = block.pos[:2] - block.half_extent
    hi = block.pos[:2] + block.half_extent
    t0, t1 = 0.0, 1.0
    for ax in range(2):
        if d[ax] == 0.0:
            if not (lo[ax] <= p0[ax] <= hi[ax]):
                return
            continue
        ta = (lo[ax] - p0[ax]) / d[ax]
        tb = (hi[ax] - p0[ax]) / d[ax]
        t0 = max(t0, min(ta, tb))
        t1 = min(t1, max(ta, tb))
    if t0 > t1 or t0 > 1.0:
        return
    overlap = (1.0 - t0) * length
    block.pos[:2] += d / length * overlap
