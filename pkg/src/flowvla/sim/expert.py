"""Scripted demonstrator built from the commander and per-subcommand skills."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .env import ToyEnv
from .tasks import SkillState, Task, phase_action
from .world import World, step_world


class ExpertStuck(RuntimeError):
    pass


class ScriptedExpert:
    """Closed-loop oracle: asks the commander for a subcommand, runs its skill, repeats."""

    def __init__(self, task: Task, rng: np.random.Generator):
        self.task = task
        self.rng = rng
        self.skill: SkillState | None = None
        self.sides: list[int] = []

    def act(self, world: World) -> tuple[np.ndarray, str] | None:
        """Next action and the subcommand it serves, or ``None`` once the task is done."""
        empty = 0
        while True:
            if self.skill is None:
                command = self.task.subcommand(world)
                if command == "done":
                    return None
                self.skill = self.task.skill(world, command, self.rng)
                if "side" in self.skill.info:
                    self.sides.append(self.skill.info["side"])
            skill = self.skill
            if skill.command.startswith("pick") and skill.index < len(skill.phases) \
                    and self.task.command_done(world, skill.command):
                skill.index = len(skill.phases)  # grasped early, e.g. on a noisy approach
            if skill.index >= len(skill.phases):
                self.skill = None
                empty += 1
                if empty > 3:
                    raise ExpertStuck(f"skill {skill.command!r} makes no progress")
                continue
            a = phase_action(world, self.task.spec, skill.phases[skill.index], skill.counter)
            if a is None:
                skill.index += 1
                skill.counter = 0
                continue
            skill.counter += 1
            return a, skill.command


@dataclass
class Demo:
    world: World  # initial state
    observations: list
    actions: np.ndarray  # (T, action_dim)
    segments: list[tuple[int, int, str]]
    sides: list[int] = field(default_factory=list)
    score: float = 0.0


def scripted_expert(env: ToyEnv, rng: np.random.Generator, max_steps: int | None = None,
                    noise: float = 0.0) -> Demo:
    """Drive ``env`` to completion with the scripted expert, recording the demonstration.

    Observations are taken before each action and carry the task prompt.
    Segments are ``(start, end, subcommand)`` half-open spans tiling the episode.
    With ``noise > 0`` the executed motion is perturbed by Gaussian noise of
    that scale on saturated channels while the clean expert action is recorded, so the data shows
    how to recover from drift. Gripper channels are never perturbed.
    """
    limit = max_steps or env.max_steps
    expert = ScriptedExpert(env.task, rng)
    world0 = env.world.copy()
    obs, actions, segments = [], [], []
    while True:
        step = expert.act(env.world)
        if step is None:
            break
        if len(actions) >= limit:
            raise ExpertStuck(f"expert exceeded {limit} steps on {env.task.name!r}")
        a, command = step
        if segments and segments[-1][2] == command and segments[-1][1] == len(actions):
            segments[-1] = (segments[-1][0], len(actions) + 1, command)
        else:
            segments.append((len(actions), len(actions) + 1, command))
        obs.append(env.observe())
        actions.append(a)
        env.step(a + _motion_noise(env, a, rng, noise) if noise > 0 else a)
    return Demo(world0, obs, np.array(actions).reshape(len(actions), env.spec.action_dim),
                segments, expert.sides, env.score)


def _motion_noise(env: ToyEnv, a: np.ndarray, rng: np.random.Generator, scale: float) -> np.ndarray:
    # only saturated (in-transit) channels are perturbed, so final approaches stay exact
    n = rng.normal(0.0, scale, env.spec.action_dim) * (np.abs(a) >= 1.0)
    n[2:3 * len(env.world.arms):3] = 0.0
    return n


class OraclePolicy:
    """Chunk-producing stand-in for a learned policy, planned on a copy of the world."""

    def __init__(self, task: Task, rng: np.random.Generator, horizon: int):
        self.expert = ScriptedExpert(task, rng)
        self.horizon = horizon
        self._plan: list[ScriptedExpert] = []
        self._t0 = 0

    def chunk(self, env: ToyEnv) -> np.ndarray:
        if self._plan:
            self.expert = self._plan[env.world.t - self._t0]
        world = env.world.copy()
        expert = copy.deepcopy(self.expert)
        self._t0 = world.t
        self._plan = [copy.deepcopy(expert)]
        rows = []
        for _ in range(self.horizon):
            step = expert.act(world)
            if step is None:
                a = np.zeros(env.spec.action_dim)
                for k, arm in enumerate(world.arms):
                    a[3 * k + 2] = 1.0 if arm.closed else -1.0
            else:
                a = step[0]
            step_world(world, a, env.spec.mobile_base)
            rows.append(a)
            self._plan.append(copy.deepcopy(expert))
        return np.array(rows)
