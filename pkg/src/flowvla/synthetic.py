"""Synthetic chunk datasets for checking what the sampler can represent.

One fixed observation is paired with a small set of constant action chunks
drawn uniformly. A single chunk is a point mass; two well-separated chunks
give a two-mode target that a regression head can only average.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow import FlowBatch, FlowConfig, fm_loss, integrate, predict_regression, regression_loss, sample_tau
from .model import ModelConfig, ObsBatch
from .model.base import PolicyModel
from .training import AdamState, TrainConfig, adamw_step, clip_by_global_norm, learning_rate
from .verify import random_obs


@dataclass
class ChunkProblem:
    obs: ObsBatch  # batch of one
    chunks: np.ndarray  # (K, H, d_max)

    @property
    def mask(self) -> np.ndarray:
        return self.obs.state_mask[0]

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.chunks[rng.integers(0, len(self.chunks), n)]


def point_mass_problem(config: ModelConfig, seed: int = 0) -> ChunkProblem:
    rng = np.random.default_rng(seed)
    obs = random_obs(config, rng, batch=1)
    chunk = rng.uniform(-0.8, 0.8, (1, config.horizon, config.action_dim))
    return ChunkProblem(obs, chunk * obs.state_mask[:, None, :])


def two_mode_problem(config: ModelConfig, seed: int = 0, scale: float = 1.0) -> ChunkProblem:
    """Chunks +A and -A with a unit-magnitude A, so the mean is the zero chunk."""
    rng = np.random.default_rng(seed)
    obs = random_obs(config, rng, batch=1)
    a = np.sign(rng.standard_normal((config.horizon, config.action_dim))) * scale
    a = a * obs.state_mask[0]
    return ChunkProblem(obs, np.stack([a, -a]))


def fit(model: PolicyModel, problem: ChunkProblem, steps: int = 600, batch_size: int = 32,
        objective: str = "flow", seed: int = 0, lr: float = 3e-3,
        flow_config: FlowConfig = FlowConfig()) -> list[float]:
    """Train ``model`` in place on the problem; returns the per-step losses."""
    config = TrainConfig(steps=steps, batch_size=batch_size, learning_rate=lr,
                         warmup=min(50, steps // 10), min_learning_rate=lr / 30,
                         weight_decay=0.0, seed=seed, objective=objective)
    rng = np.random.default_rng(seed)
    obs = problem.obs.select(np.zeros(batch_size, dtype=int))
    mask = np.repeat(problem.obs.state_mask, batch_size, axis=0)
    state = AdamState()
    losses = []
    for i in range(steps):
        actions = problem.draw(rng, batch_size)
        tau = sample_tau(rng, flow_config, batch_size)
        eps = rng.standard_normal(actions.shape) * mask[:, None, :]
        batch = FlowBatch(obs, actions, mask, tau, eps)
        model.zero_grad()
        loss = fm_loss(model, batch) if objective == "flow" else regression_loss(model, batch)
        loss.backward()
        grads = {k: p.grad if p.grad is not None else np.zeros_like(p.data) for k, p in model.params.items()}
        grads, _ = clip_by_global_norm(grads, config.clip_norm)
        new = adamw_step({k: p.data for k, p in model.params.items()}, grads, state, config, i + 1,
                         learning_rate(config, i))
        for k, p in model.params.items():
            p.data = new[k]
        losses.append(loss.item())
    model.zero_grad()
    return losses


def draw_samples(model: PolicyModel, problem: ChunkProblem, n: int, seed: int = 0,
                 objective: str = "flow", flow_config: FlowConfig = FlowConfig()) -> np.ndarray:
    """``n`` chunks for the problem's observation, shape (n, H, d_max)."""
    obs = problem.obs.select(np.zeros(n, dtype=int))
    if objective == "regression":
        return predict_regression(model, obs, problem.mask)
    return integrate(model, obs, np.random.default_rng(seed), flow_config, problem.mask)


@dataclass
class ModeReport:
    frequencies: np.ndarray  # share of samples nearest each chunk
    near_mean: int  # samples within ``radius`` of the chunk mean
    radius: float

    def recovers(self, tol: float = 0.15) -> bool:
        k = len(self.frequencies)
        return bool(np.all(np.abs(self.frequencies - 1 / k) <= tol) and self.near_mean == 0)


def mode_report(samples: np.ndarray, chunks: np.ndarray, radius_fraction: float = 0.25) -> ModeReport:
    flat = samples.reshape(len(samples), -1)
    centers = chunks.reshape(len(chunks), -1)
    dist = np.linalg.norm(flat[:, None, :] - centers[None], axis=-1)
    nearest = dist.argmin(1)
    freq = np.bincount(nearest, minlength=len(centers)) / len(flat)
    radius = radius_fraction * float(np.linalg.norm(centers[0] - centers[-1]))
    near = int((np.linalg.norm(flat - centers.mean(0), axis=-1) < radius).sum())
    return ModeReport(freq, near, radius)
