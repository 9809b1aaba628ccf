"""Cached chunk sampling, open-loop chunked control and latency profiling."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .flow import FlowConfig, integrate
from .model import PolicyModel, PrefixCache
from .model.observation import ActionChunk, Observation, ObsBatch, as_batch
from .model.prefix import embed_prefix
from .sim import OraclePolicy, ToyEnv


def build_prefix_cache(model: PolicyModel, observation: Observation | ObsBatch) -> PrefixCache:
    return model.build_cache(as_batch(observation, model.dtype))


def sample_chunk(model: PolicyModel, observation: Observation, rng: np.random.Generator,
                 flow_config: FlowConfig = FlowConfig(), action_mask=None) -> ActionChunk:
    """One action chunk for one observation; padded columns are exactly zero."""
    mask = np.asarray(observation.state_mask if action_mask is None else action_mask, dtype=bool)
    actions = integrate(model, observation, rng, flow_config, action_mask=mask)[0]
    return ActionChunk(actions, mask)


@dataclass(frozen=True)
class ControllerConfig:
    horizon: int = 50
    execute_k: int = 25
    ensemble: bool = False  # temporal ensembling of overlapping chunks; off by default
    ensemble_decay: float = 0.01

    def __post_init__(self):
        if not 1 <= self.execute_k <= self.horizon:
            raise ValueError(f"execute_k must be in [1, {self.horizon}], got {self.execute_k}")


class RolloutAborted(RuntimeError):
    def __init__(self, message: str, rollout: "Rollout"):
        super().__init__(message)
        self.rollout = rollout


@dataclass
class Rollout:
    score: float = 0.0
    steps: int = 0
    inference_calls: int = 0
    success: bool = False
    commands: list[str] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)
    trajectory: list = field(default_factory=list)

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(row, sort_keys=True) + "\n" for row in self.trace)


class HumanCommands:
    """Scripted subcommand list; moves to the next line once the current subtask is finished."""

    def __init__(self, lines: list[str]):
        self.lines = [ln.strip() for ln in lines if ln.strip()]
        self.index = 0

    @classmethod
    def from_file(cls, path) -> "HumanCommands":
        with open(path) as f:
            return cls(f.read().splitlines())

    def next(self, env: ToyEnv) -> str:
        while self.index < len(self.lines) - 1 and env.task.command_done(env.world, self.lines[self.index]):
            self.index += 1
        return self.lines[self.index] if self.lines else env.language


def _language(env: ToyEnv, mode) -> str:
    if mode == "flat":
        return env.language
    if mode == "commander":
        return env.command()
    if isinstance(mode, HumanCommands):
        return mode.next(env)
    raise ValueError(f"unknown language mode {mode!r}")


def run_controller(env: ToyEnv, policy, config: ControllerConfig, rng: np.random.Generator,
                   max_steps: int | None = None, language="flat",
                   flow_config: FlowConfig = FlowConfig(), trace_path=None) -> Rollout:
    """Observe, sample a chunk, execute ``execute_k`` actions open-loop, repeat.

    ``policy`` is a ``PolicyModel`` or an ``OraclePolicy``. ``language`` is
    ``"flat"`` (task prompt), ``"commander"`` (subcommand re-planned at every
    chunk boundary) or a ``HumanCommands`` script. Stops on success or after
    ``max_steps`` environment steps.
    """
    if isinstance(policy, PolicyModel):
        if env.spec.action_dim > policy.config.action_dim:
            raise ValueError(f"embodiment {env.spec.name!r} needs {env.spec.action_dim} action dims, "
                             f"model has {policy.config.action_dim}")
        if config.horizon != policy.config.horizon:
            raise ValueError(f"controller horizon {config.horizon} != model horizon {policy.config.horizon}")
    limit = env.max_steps if max_steps is None else max_steps
    out = Rollout(trajectory=env.trajectory)
    pending: dict[int, list[tuple[float, np.ndarray]]] = {}
    d = env.spec.action_dim
    while out.steps < limit and not env.success:
        command = _language(env, language)
        obs = env.observe(command)
        if isinstance(policy, OraclePolicy):
            chunk = policy.chunk(env)[:, :d]
        else:
            chunk = sample_chunk(policy, obs, rng, flow_config).actions[:, :d]
        out.inference_calls += 1
        out.commands.append(command)
        out.trace.append({"step": out.steps, "event": "inference", "language": command,
                          "state": [round(float(x), 6) for x in obs.state[obs.state_mask]]})
        if config.ensemble:
            for j, row in enumerate(chunk):
                pending.setdefault(out.steps + j, []).append((out.steps, row))
        for j in range(config.execute_k):
            if out.steps >= limit or env.success:
                break
            action = chunk[j]
            if config.ensemble:
                rows = pending.pop(out.steps)
                w = np.array([math.exp(-config.ensemble_decay * (out.steps - t0)) for t0, _ in rows])
                action = np.average(np.stack([r for _, r in rows]), axis=0, weights=w)
            before = env.score
            try:
                env.step(action)
            except Exception as exc:
                out.score, out.success = env.score, env.success
                raise RolloutAborted(f"environment step {out.steps} failed: {exc}", out) from exc
            out.steps += 1
            row = {"step": out.steps, "event": "act", "action": [round(float(x), 6) for x in action]}
            if env.score != before:
                row["score"] = env.score
            out.trace.append(row)
    out.score, out.success = env.score, env.success
    if trace_path is not None:
        with open(trace_path, "w") as f:
            f.write(out.trace_jsonl())
    return out


def evaluate(make_env, policy_factory, episodes: int, config: ControllerConfig, seed: int = 0,
             language="flat", flow_config: FlowConfig = FlowConfig()) -> list[float]:
    """Scores of ``episodes`` rollouts; rollout ``i`` uses env seed and sampler seed derived from ``(seed, i)``."""
    scores = []
    for i in range(episodes):
        env = make_env(i)
        rng = np.random.default_rng([seed, i])
        mode = language() if callable(language) else language
        scores.append(run_controller(env, policy_factory(env, rng), config, rng, language=mode,
                                     flow_config=flow_config).score)
    return scores


# -- latency ------------------------------------------------------------------

def _median_ms(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(1000.0 * (time.perf_counter() - t0))
    return float(np.median(times))


def _encoders(model: PolicyModel, obs: ObsBatch):
    if hasattr(model, "embed_prefix"):
        return model.embed_prefix(obs)
    return embed_prefix(model.params, "encoder", model.config, obs)


def time_sampling(model: PolicyModel, observation, flow_config: FlowConfig = FlowConfig(),
                  repeats: int = 5, use_cache: bool = True) -> float:
    """Median wall time (ms) of one full sampling call."""
    obs = as_batch(observation, model.dtype)
    rng = np.random.default_rng(0)
    return _median_ms(lambda: integrate(model, obs, rng, flow_config, use_cache=use_cache), repeats)


def profile(model: PolicyModel, observation, flow_config: FlowConfig = FlowConfig(), repeats: int = 5) -> list[tuple[str, float]]:
    """Median milliseconds for each part of one cached sampling call.

    Rows: image/token encoders, the observation (prefix + state) forward
    excluding encoders, all action-token forwards, and the end-to-end total.
    """
    obs = as_batch(observation, model.dtype)
    c = model.config
    noisy = np.zeros((obs.size, c.horizon, c.action_dim), dtype=model.dtype)
    tau = np.zeros(obs.size)
    with nx.no_grad():
        _encoders(model, obs)  # warm-up
        cache = model.build_cache(obs)
        enc = _median_ms(lambda: _encoders(model, obs), repeats)
        prefix = _median_ms(lambda: model.build_cache(obs), repeats)
        step = _median_ms(lambda: model.velocity(obs, noisy, tau, cache=cache), repeats)
    total = time_sampling(model, obs, flow_config, repeats)
    return [
        ("encoders", enc),
        ("observation forward", max(0.0, prefix - enc)),
        (f"x{flow_config.steps} action forward", step * flow_config.steps),
        ("total", total),
    ]


def profile_csv(rows: list[tuple[str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["part", "ms"])
    for name, ms in rows:
        w.writerow([name, f"{ms:.3f}"])
    return buf.getvalue()
