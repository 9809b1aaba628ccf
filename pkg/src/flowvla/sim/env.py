"""Gym-free environment wrapper around a world, a task and an embodiment."""

from __future__ import annotations

import numpy as np

from .. import vocab
from ..embodiment import D_MAX, EmbodimentSpec, get, pad_and_mask
from ..model.observation import Observation
from .tasks import Task, make_task
from .world import World, render_cameras, step_world


class ToyEnv:
    """Deterministic toy environment.

    ``step`` accepts either an unpadded action row of length ``action_dim``
    or a ``d_max`` row whose padded tail is ignored.
    """

    def __init__(self, embodiment: str | EmbodimentSpec, task: str | Task, seed=0, world: World | None = None):
        self.spec = get(embodiment) if isinstance(embodiment, str) else embodiment
        self.task = make_task(task, self.spec) if isinstance(task, str) else task
        self.rng = np.random.default_rng(seed)
        self.reset(world)

    def reset(self, world: World | None = None) -> Observation:
        self.world = world.copy() if world is not None else self.task.make_world(self.rng)
        self.initial = self.world.copy()
        self.rubric = self.task.rubric(self.world)
        self.tracker = self.rubric.tracker()
        self.tracker.update(self.world)
        self.trajectory = [self.world.copy()]
        self.actions: list[np.ndarray] = []
        self.language = self.task.prompt(self.world)
        return self.observe()

    @property
    def max_steps(self) -> int:
        return self.task.max_steps

    def render(self) -> np.ndarray:
        return render_cameras(self.world, self.spec.num_cameras)

    def observe(self, language: str | None = None) -> Observation:
        tokens = vocab.encode(self.language if language is None else language)
        obs, _ = pad_and_mask(self.render(), tokens, self.world.state_vector(self.spec.mobile_base))
        return obs

    def step(self, action_row) -> Observation:
        a = np.asarray(action_row, dtype=np.float64)
        d = self.spec.action_dim
        if a.shape == (D_MAX,):
            a = a[:d]
        if a.shape != (d,):
            raise ValueError(f"{self.spec.name}: action row must have length {d} or {D_MAX}, got {a.shape}")
        step_world(self.world, a, self.spec.mobile_base)
        self.actions.append(np.clip(a, -1.0, 1.0))
        self.tracker.update(self.world)
        self.trajectory.append(self.world.copy())
        return self.observe()

    @property
    def score(self) -> float:
        return self.tracker.score

    @property
    def success(self) -> bool:
        return self.tracker.score >= 1.0

    def command(self) -> str:
        """Next subcommand from the rule-based commander."""
        return high_level_command(self.world, self.task)


def high_level_command(world: World, task: Task) -> str:
    return task.subcommand(world)


def replay(embodiment: str, task: str, world: World, actions) -> World:
    """Re-run a logged action sequence from ``world``; returns the final state."""
    env = ToyEnv(embodiment, task, world=world)
    for a in actions:
        env.step(a)
    return env.world
