"""Episode replay storage with hindsight goal relabeling and mixed sampling.

Episodes are stored as stacked arrays per field, so sampling a batch is a
couple of fancy-index gathers.  Relabeling follows the future strategy: a
sampled transition's goal is replaced, with probability k/(k+1), by an
achieved goal from a uniformly drawn later point of the same episode, and
its reward is recomputed from scratch.  Stored episodes are never mutated.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from onedemo.errors import BufferError, ValidationError

RewardFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class Episode:
    """One fixed-length rollout, all fields time-major."""

    obs: np.ndarray  # (T, obs_dim)
    actions: np.ndarray  # (T, 4)
    rewards: np.ndarray  # (T,)
    next_obs: np.ndarray  # (T, obs_dim)
    achieved: np.ndarray  # (T, goal_dim) achieved goal before the step
    next_achieved: np.ndarray  # (T, goal_dim) achieved goal after the step
    desired: np.ndarray  # (T, goal_dim)
    done: np.ndarray  # (T,) bool; True only on the final transition

    def __len__(self) -> int:
        return self.obs.shape[0]

    @property
    def success(self) -> bool:
        return bool(self.rewards[-1] == 0.0)


class EpisodeAccumulator:
    """Builds an Episode from sequential (obs, action, reward, next_obs) steps."""

    def __init__(self):
        self._rows = []

    def add(self, obs, action, reward, next_obs, done: bool):
        self._rows.append((obs, action, reward, next_obs, done))

    def build(self) -> Episode:
        if not self._rows:
            raise ValidationError("cannot build an empty episode")
        obs = np.stack([r[0].state_vector for r in self._rows])
        actions = np.stack([np.asarray(r[1], dtype=np.float64) for r in self._rows])
        rewards = np.array([r[2] for r in self._rows], dtype=np.float64)
        next_obs = np.stack([r[3].state_vector for r in self._rows])
        achieved = np.stack([r[0].achieved_goal for r in self._rows])
        next_achieved = np.stack([r[3].achieved_goal for r in self._rows])
        desired = np.stack([r[0].desired_goal for r in self._rows])
        done = np.array([r[4] for r in self._rows], dtype=bool)
        return Episode(obs, actions, rewards, next_obs, achieved, next_achieved, desired, done)


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    achieved: np.ndarray
    next_achieved: np.ndarray
    desired: np.ndarray
    done: bool


@dataclass
class TransitionBatch:
    """Column-major batch; indexing yields Transition views."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    achieved: np.ndarray
    next_achieved: np.ndarray
    desired: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return self.obs.shape[0]

    def __getitem__(self, i: int) -> Transition:
        return Transition(
            self.obs[i], self.actions[i], float(self.rewards[i]), self.next_obs[i],
            self.achieved[i], self.next_achieved[i], self.desired[i], bool(self.done[i]),
        )

    def __iter__(self) -> Iterator[Transition]:
        return (self[i] for i in range(len(self)))

    @staticmethod
    def concat(a: "TransitionBatch", b: "TransitionBatch") -> "TransitionBatch":
        return TransitionBatch(
            *(np.concatenate([getattr(a, f), getattr(b, f)]) for f in _FIELDS)
        )

    def permuted(self, perm: np.ndarray) -> "TransitionBatch":
        return TransitionBatch(*(getattr(self, f)[perm] for f in _FIELDS))


_FIELDS = (
    "obs", "actions", "rewards", "next_obs", "achieved", "next_achieved",
    "desired", "done",
)


@dataclass(frozen=True)
class SamplerConfig:
    demo_fraction: float = 0.25
    her_k: int = 4
    her_enabled: bool = True
    her_on_demo: bool = True  # relabel demonstration-buffer samples too

    def __post_init__(self):
        if not 0.0 <= self.demo_fraction <= 1.0:
            raise ValidationError("demo_fraction must be in [0, 1]")
        if self.her_k < 0:
            raise ValidationError("her_k must be >= 0")


class EpisodeBuffer:
    """Fixed-capacity FIFO ring of fixed-length episodes.

    `reward_fn(next_achieved, desired)` recomputes sparse rewards for
    validation and relabeling.  `require_success` makes push() reject
    unsuccessful episodes (demonstration buffers hold only solutions).
    """

    def __init__(self, capacity: int, reward_fn: RewardFn, require_success: bool = False):
        if capacity < 1:
            raise ValidationError("capacity must be >= 1")
        self.capacity = capacity
        self.reward_fn = reward_fn
        self.require_success = require_success
        self.frozen = False
        self.size = 0
        self.episodes_pushed = 0
        self.samples_served = 0
        self.relabels_applied = 0
        self._store: dict[str, np.ndarray] | None = None
        self._next = 0

    def __len__(self) -> int:
        return self.size

    @property
    def episode_length(self) -> int:
        if self._store is None:
            raise BufferError("buffer is empty")
        return self._store["obs"].shape[1]

    def _validate(self, ep: Episode) -> None:
        T = len(ep)
        if T < 1:
            raise ValidationError("episode is empty")
        if not np.isin(ep.rewards, (-1.0, 0.0)).all():
            raise ValidationError("episode rewards must be -1 or 0")
        recomputed = self.reward_fn(ep.next_achieved, ep.desired)
        if not np.array_equal(recomputed, ep.rewards):
            bad = int(np.nonzero(recomputed != ep.rewards)[0][0])
            raise ValidationError(
                f"episode reward at step {bad} disagrees with the goal distance"
            )
        if ep.done[:-1].any() or not ep.done[-1]:
            raise ValidationError("done must be set exactly on the final transition")
        if self.require_success and not ep.success:
            raise ValidationError("this buffer only accepts successful episodes")

    def push(self, ep: Episode) -> None:
        if self.frozen:
            raise BufferError("buffer is frozen")
        self._validate(ep)
        if self._store is None:
            T = len(ep)
            self._store = {
                "obs": np.zeros((self.capacity, T, ep.obs.shape[1])),
                "actions": np.zeros((self.capacity, T, ep.actions.shape[1])),
                "rewards": np.zeros((self.capacity, T)),
                "next_obs": np.zeros((self.capacity, T, ep.next_obs.shape[1])),
                "achieved": np.zeros((self.capacity, T, ep.achieved.shape[1])),
                "next_achieved": np.zeros((self.capacity, T, ep.next_achieved.shape[1])),
                "desired": np.zeros((self.capacity, T, ep.desired.shape[1])),
                "done": np.zeros((self.capacity, T), dtype=bool),
            }
        store = self._store
        if ep.obs.shape != store["obs"].shape[1:]:
            raise ValidationError(
                f"episode shape {ep.obs.shape} does not match buffer "
                f"{store['obs'].shape[1:]}"
            )
        i = self._next
        for name in _FIELDS:
            store[name][i] = getattr(ep, name)
        self._next = (self._next + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.episodes_pushed += 1

    def freeze(self) -> None:
        self.frozen = True

    def sample_her(
        self,
        n: int,
        config: SamplerConfig,
        rng: np.random.Generator,
        relabel: bool | None = None,
    ) -> TransitionBatch:
        """Uniformly sample `n` transitions, relabeling per the future strategy.

        With relabeling off the returned rows are bitwise copies of storage.
        """
        if self.size == 0:
            raise BufferError("cannot sample from an empty buffer")
        if n < 1:
            raise ValidationError("sample size must be >= 1")
        store = self._store
        T = store["obs"].shape[1]
        eps = rng.integers(0, self.size, size=n)
        steps = rng.integers(0, T, size=n)
        cols = {name: store[name][eps, steps].copy() for name in _FIELDS}
        if relabel is None:
            relabel = config.her_enabled
        if relabel and config.her_enabled and config.her_k > 0:
            p = config.her_k / (config.her_k + 1)
            hit = rng.random(n) < p
            # a future time in [t+1, T]: index its achieved state via the
            # next_achieved of a transition drawn uniformly from [t, T-1]
            future = steps + (rng.random(n) * (T - steps)).astype(np.int64)
            new_goals = store["next_achieved"][eps, future]
            cols["desired"][hit] = new_goals[hit]
            cols["rewards"][hit] = self.reward_fn(
                cols["next_achieved"][hit], cols["desired"][hit]
            )
            self.relabels_applied += int(hit.sum())
        self.samples_served += n
        return TransitionBatch(*(cols[name] for name in _FIELDS))


def sample_mixed(
    agent_buf: EpisodeBuffer,
    demo_buf: EpisodeBuffer | None,
    batch: int,
    config: SamplerConfig,
    rng: np.random.Generator,
) -> TransitionBatch:
    """Draw exactly floor(demo_fraction*batch) rows from the demonstration
    buffer and the rest from the agent buffer, then shuffle together."""
    if batch < 1:
        raise ValidationError("batch must be >= 1")
    n_demo = int(config.demo_fraction * batch)
    n_agent = batch - n_demo
    if n_demo > 0 and (demo_buf is None or len(demo_buf) == 0):
        raise BufferError("demo_fraction > 0 but the demonstration buffer is empty")
    if n_agent > 0 and len(agent_buf) == 0:
        raise BufferError("agent buffer is empty")
    parts = []
    if n_agent > 0:
        parts.append(agent_buf.sample_her(n_agent, config, rng))
    if n_demo > 0:
        parts.append(
            demo_buf.sample_her(
                n_demo, config, rng,
                relabel=config.her_enabled and config.her_on_demo,
            )
        )
    out = parts[0] if len(parts) == 1 else TransitionBatch.concat(parts[0], parts[1])
    return out.permuted(rng.permutation(batch))
