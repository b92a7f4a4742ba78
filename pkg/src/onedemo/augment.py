"""Turn one demonstration into many: retarget, then replay under noise.

The recorded end-effector path is mapped onto a new episode layout with an
independent 1-D affine transform per coordinate, chosen so the recorded
block start lands on the new block start and likewise for the goals:

    a = (gen_goal - gen_start) / (rec_goal - rec_start)   (1 if degenerate)
    b = gen_start - a * rec_start
    p_gen = a * p_rec + b

Multi-block demos are split into per-block segments and each segment gets
its own map.  The mapped path is then tracked closed-loop by a proportional
controller with additive Ornstein-Uhlenbeck noise, and only rollouts that
finish the task are kept.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from onedemo.demos import DemoSegment, DemoTrajectory, split_subtrajectories
from onedemo.env import (
    MAX_STEP,
    TabletopSim,
    TaskInstance,
    TaskKind,
    TaskSpec,
    observe,
    sample_task_instance,
)
from onedemo.errors import GenerationInfeasibleError, ValidationError
from onedemo.replay import Episode, EpisodeAccumulator

DEGENERATE_EPS = 1e-6  # meters; below this the recorded axis carries no signal


@dataclass(frozen=True)
class AffineMap1D:
    a: float
    b: float

    def __call__(self, x):
        return self.a * x + self.b


def affine_params(
    rec_start: float, rec_goal: float, gen_start: float, gen_goal: float,
    eps: float = DEGENERATE_EPS,
) -> AffineMap1D:
    """Per-coordinate map sending rec_start -> gen_start and, when the
    recorded displacement is non-degenerate, rec_goal -> gen_goal."""
    span = rec_goal - rec_start
    if abs(span) > eps:
        a = (gen_goal - gen_start) / span
    else:
        a = 1.0
    b = gen_start - a * rec_start
    return AffineMap1D(a, b)


@dataclass
class ReferencePath:
    """Retargeted per-step targets plus the replayed gripper commands."""

    task: TaskKind
    targets: np.ndarray  # (T, 3) end-effector positions
    closing: np.ndarray  # (T,) bool, recorded closing intent
    widths: np.ndarray  # (T,) recorded gripper widths

    def __len__(self) -> int:
        return self.targets.shape[0]


def rescale_segment(segment: DemoSegment, gen_start, gen_goal) -> ReferencePath:
    """Apply the segment's affine maps to its waypoints, one map per axis."""
    gen_start = np.asarray(gen_start, dtype=np.float64)
    gen_goal = np.asarray(gen_goal, dtype=np.float64)
    wps = segment.waypoints
    if not wps:
        raise ValidationError("segment has no waypoints")
    maps = [
        affine_params(segment.start[ax], segment.goal[ax], gen_start[ax], gen_goal[ax])
        for ax in range(3)
    ]
    raw = np.stack([wp.ee_pos for wp in wps])
    targets = np.stack([maps[ax](raw[:, ax]) for ax in range(3)], axis=1)
    closing = np.array([wp.gripper_closing for wp in wps], dtype=bool)
    widths = np.array([wp.gripper_width for wp in wps], dtype=np.float64)
    return ReferencePath(segment.demo.task, targets, closing, widths)


def build_reference(
    demo: DemoTrajectory,
    instance: TaskInstance,
    spec: TaskSpec | None = None,
) -> ReferencePath:
    """Split the demo, retarget each segment to the instance, concatenate."""
    spec = spec or TaskSpec.for_kind(demo.task)
    segments = split_subtrajectories(demo, spec)
    parts = [
        rescale_segment(
            seg,
            instance.block_starts[seg.block_index],
            instance.goals[seg.block_index],
        )
        for seg in segments
    ]
    return ReferencePath(
        demo.task,
        np.concatenate([p.targets for p in parts]),
        np.concatenate([p.closing for p in parts]),
        np.concatenate([p.widths for p in parts]),
    )


@dataclass
class OUParams:
    theta: float = 0.15
    mu: float = 0.0
    sigma: float = 0.2
    dt: float = 1.0

    def __post_init__(self):
        if self.theta < 0 or self.sigma < 0 or self.dt <= 0:
            raise ValidationError("OU parameters must satisfy theta,sigma >= 0, dt > 0")

    @property
    def stationary_std(self) -> float:
        """Standard deviation of the discrete-time process at equilibrium."""
        phi = 1.0 - self.theta * self.dt
        return self.sigma * np.sqrt(self.dt / (1.0 - phi * phi))


class OUNoise:
    """Discrete Ornstein-Uhlenbeck process, one independent state per axis.

    N' = N + theta * (mu - N) * dt + sigma * sqrt(dt) * g,  g ~ N(0, 1)
    """

    def __init__(self, params: OUParams | None = None, dim: int = 3):
        self.params = params or OUParams()
        self.dim = dim
        self.state = np.full(dim, self.params.mu, dtype=np.float64)

    def reset(self) -> None:
        self.state = np.full(self.dim, self.params.mu, dtype=np.float64)

    def step(self, rng: np.random.Generator) -> np.ndarray:
        p = self.params
        g = rng.standard_normal(self.dim)
        self.state = self.state + p.theta * (p.mu - self.state) * p.dt \
            + p.sigma * np.sqrt(p.dt) * g
        return self.state.copy()


@dataclass(frozen=True)
class ControllerParams:
    gain: float = 20.0  # 1/m: converts tracking error to a full-scale action

    def __post_init__(self):
        if self.gain <= 0:
            raise ValidationError("controller gain must be positive")


def track_reference(
    env: TabletopSim,
    reference: ReferencePath,
    rng: np.random.Generator,
    ctrl: ControllerParams | None = None,
    noise: OUNoise | None = None,
) -> Episode:
    """Run one full episode chasing the reference path.

    Positional action per step: clamp(gain * (target - measured) + N_OU).
    The gripper replays the recorded commands by step index.  Past the end
    of a short reference the controller dwells on its final target.  The
    environment must be freshly reset to the intended generation instance.
    """
    if len(reference) == 0:
        raise ValidationError("reference path is empty")
    if env.spec.kind is not reference.task:
        raise ValidationError(
            f"reference was built for {reference.task}, env runs {env.spec.kind}"
        )
    if env.state.step_count != 0:
        raise ValidationError("env must be freshly reset before tracking")
    ctrl = ctrl or ControllerParams()
    acc = EpisodeAccumulator()
    obs = observe(env.state, env.spec)
    T = env.spec.episode_length
    for i in range(T):
        j = min(i, len(reference) - 1)
        err = reference.targets[j] - env.state.ee_pos
        drive = ctrl.gain * err
        if noise is not None:
            drive = drive + noise.step(rng)
        d_pos = np.clip(drive, -1.0, 1.0)
        if reference.closing[j]:
            d_w = -1.0
        else:
            d_w = float(np.clip(
                (reference.widths[j] - env.state.gripper_width) / MAX_STEP, -1.0, 1.0,
            ))
        action = np.array([d_pos[0], d_pos[1], d_pos[2], d_w])
        _, next_obs, reward, _ = env.step(action)
        acc.add(obs, action, reward, next_obs, done=(i == T - 1))
        obs = next_obs
    return acc.build()


@dataclass
class GenerationResult:
    episodes: list[Episode]
    attempts: int
    successes: int

    @property
    def success_ratio(self) -> float:
        return self.successes / self.attempts if self.attempts else 0.0


def generate_demo_set(
    demo: DemoTrajectory,
    count: int,
    rng: np.random.Generator,
    spec: TaskSpec | None = None,
    ctrl: ControllerParams | None = None,
    ou_params: OUParams | None = None,
    max_attempts_per_episode: int = 10,
) -> GenerationResult:
    """Retarget `demo` onto random instances until `count` episodes succeed.

    Failed rollouts are discarded.  Raises GenerationInfeasibleError (with
    the observed success ratio) once attempts exceed 10x the requested count.
    """
    if count < 1:
        raise ValidationError("count must be >= 1")
    spec = spec or TaskSpec.for_kind(demo.task)
    env = TabletopSim(spec)
    noise = OUNoise(ou_params or OUParams())
    episodes: list[Episode] = []
    attempts = 0
    cap = max_attempts_per_episode * count
    while len(episodes) < count:
        if attempts >= cap:
            raise GenerationInfeasibleError(attempts, len(episodes), count)
        attempts += 1
        instance = sample_task_instance(spec, rng)
        reference = build_reference(demo, instance, spec)
        env.reset(instance=instance)
        noise.reset()
        episode = track_reference(env, reference, rng, ctrl=ctrl, noise=noise)
        if episode.success:
            episodes.append(episode)
    return GenerationResult(episodes, attempts, len(episodes))
