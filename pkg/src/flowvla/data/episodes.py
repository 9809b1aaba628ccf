"""Demonstration episodes from the scripted expert."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import vocab
from ..embodiment import EmbodimentSpec, get, pad_and_mask
from ..model.observation import Observation
from ..sim import ToyEnv, make_task, scripted_expert


@dataclass
class Segment:
    start: int
    end: int
    text: str

    @property
    def tokens(self) -> np.ndarray:
        return vocab.encode(self.text)


@dataclass
class Episode:
    """Unpadded per-step records, stored as float32 like the on-disk format."""

    embodiment: str
    task: str
    prompt: str
    images: np.ndarray  # (T, cams, S, S)
    state: np.ndarray  # (T, state_dim)
    actions: np.ndarray  # (T, action_dim)
    segments: list[Segment]

    def __post_init__(self):
        for name in ("images", "state", "actions"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype="<f4"))
        self.validate()

    def __len__(self) -> int:
        return self.actions.shape[0]

    @property
    def spec(self) -> EmbodimentSpec:
        return get(self.embodiment)

    def validate(self) -> None:
        T = len(self)
        if self.images.shape[0] != T or self.state.shape[0] != T:
            raise ValueError("episode arrays disagree on length")
        spec = self.spec
        if self.actions.shape[1] != spec.action_dim or self.state.shape[1] != spec.state_dim:
            raise ValueError(f"episode dims do not match embodiment {spec.name!r}")
        pos = 0
        for seg in self.segments:
            if seg.start != pos or seg.end <= seg.start:
                raise ValueError(f"segments must tile the episode; got {seg} at position {pos}")
            pos = seg.end
        if pos != T:
            raise ValueError(f"segments cover {pos} of {T} steps")

    def annotation(self, t: int) -> str:
        for seg in self.segments:
            if seg.start <= t < seg.end:
                return seg.text
        raise IndexError(t)

    def observation(self, t: int, language: str | None = None) -> Observation:
        tokens = vocab.encode(self.prompt if language is None else language)
        obs, _ = pad_and_mask(self.images[t], tokens, self.state[t])
        return obs

    @property
    def steps(self):
        return [(self.observation(t), self.actions[t]) for t in range(len(self))]


def _one_episode(spec: EmbodimentSpec, task: str, env_seed: int, expert_seed: int, noise: float = 0.0) -> Episode:
    env = ToyEnv(spec, task, seed=env_seed)
    demo = scripted_expert(env, np.random.default_rng(expert_seed), noise=noise)
    images = np.stack([o.images[o.image_present] for o in demo.observations])
    state = np.stack([o.state[o.state_mask] for o in demo.observations])
    segments = [Segment(s, e, text) for s, e, text in demo.segments]
    return Episode(spec.name, task, env.task.prompt(demo.world), images, state, demo.actions, segments)


def gen_episodes(embodiment: str, task: str, count: int, rng: np.random.Generator, workers: int = 1,
                 noise: float = 0.0) -> list[Episode]:
    """``count`` expert demonstrations; the result depends only on ``rng``, not ``workers``.

    ``noise`` perturbs executed motion (see ``scripted_expert``).
    """
    spec = get(embodiment)
    make_task(task, spec)  # fail fast on unsupported combinations
    seeds = rng.integers(0, 2**63 - 1, size=(count, 2))
    jobs = [(spec, task, int(a), int(b), noise) for a, b in seeds]
    if workers <= 1:
        return [_one_episode(*job) for job in jobs]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(lambda job: _one_episode(*job), jobs))
