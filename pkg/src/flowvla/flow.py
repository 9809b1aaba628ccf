"""Conditional flow matching over action chunks.

Path: ``A_tau = tau * A + (1 - tau) * eps`` with ``eps ~ N(0, I)``, so noise
sits at ``tau = 0`` and data at ``tau = 1``. The regression target is the path
derivative ``u = A - eps`` and sampling integrates forward Euler from 0 to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betaincinv

from . import numerics as nx
from .model.base import PolicyModel
from .model.observation import ActionChunk, Observation, ObsBatch, as_batch
from .numerics import NonFiniteError, Tensor


@dataclass(frozen=True)
class FlowConfig:
    s: float = 0.999
    beta_alpha: float = 1.5
    beta_beta: float = 1.0
    steps: int = 10
    delta: float | None = None

    def __post_init__(self):
        if self.delta is None:
            object.__setattr__(self, "delta", 1.0 / self.steps)
        if not 0.0 < self.s <= 1.0:
            raise ValueError(f"cutoff s={self.s} must lie in (0, 1]")
        if self.steps < 1 or abs(self.steps * self.delta - 1.0) > 1e-9:
            raise ValueError(f"steps * delta must equal 1 (steps={self.steps}, delta={self.delta})")
        if not self.delta > 1.0 - self.s:
            raise ValueError(f"step delta={self.delta} must exceed 1 - s = {1.0 - self.s}")

    def times(self) -> np.ndarray:
        """Integration start times 0, delta, ..., 1 - delta."""
        return np.arange(self.steps) * self.delta


def sample_tau(rng: np.random.Generator, config: FlowConfig = FlowConfig(), size=None):
    """tau = s * (1 - X) with X ~ Beta(alpha, beta) drawn by inverse CDF."""
    u = rng.random(size)
    if config.beta_beta == 1.0:
        x = u ** (1.0 / config.beta_alpha)
    else:
        x = betaincinv(config.beta_alpha, config.beta_beta, u)
    return config.s * (1.0 - x)


@dataclass
class FlowSample:
    tau: float | np.ndarray
    eps: np.ndarray
    noisy: np.ndarray
    target: np.ndarray


def make_flow_sample(chunk: ActionChunk | np.ndarray, rng: np.random.Generator, tau, action_mask=None) -> FlowSample:
    """Noise, noisy actions and velocity target for one chunk (or a stack of chunks).

    ``eps`` is zeroed on padded action columns after drawing, so every field
    is exactly zero there.
    """
    if isinstance(chunk, ActionChunk):
        actions, action_mask = chunk.actions, chunk.action_mask
    else:
        actions = np.asarray(chunk)
        if action_mask is None:
            action_mask = np.ones(actions.shape[-1], dtype=bool)
    mask = np.asarray(action_mask, dtype=bool)
    if mask.ndim == 2:
        mask = mask[:, None, :]
    eps = rng.standard_normal(actions.shape) * mask
    t = np.asarray(tau, dtype=actions.dtype)
    tb = t.reshape(t.shape + (1,) * (actions.ndim - t.ndim)) if t.ndim else t
    noisy = tb * actions + (1.0 - tb) * eps
    return FlowSample(tau=tau, eps=eps, noisy=noisy, target=actions - eps)


@dataclass
class FlowBatch:
    """Training examples with their flow draws attached."""

    obs: ObsBatch
    actions: np.ndarray  # (B, H, d_max)
    action_mask: np.ndarray  # (B, d_max)
    tau: np.ndarray  # (B,)
    eps: np.ndarray  # (B, H, d_max), zero on padded columns

    @property
    def noisy(self) -> np.ndarray:
        t = self.tau[:, None, None]
        return t * self.actions + (1.0 - t) * self.eps

    @property
    def target(self) -> np.ndarray:
        return self.actions - self.eps


def attach_flow(batch, rng: np.random.Generator, config: FlowConfig = FlowConfig()) -> FlowBatch:
    """Draw per-example tau and eps for a batch with ``obs``/``actions``/``action_mask``."""
    B = batch.actions.shape[0]
    tau = sample_tau(rng, config, B)
    eps = rng.standard_normal(batch.actions.shape) * batch.action_mask[:, None, :]
    return FlowBatch(batch.obs, batch.actions, batch.action_mask, tau, eps)


def masked_mse(pred: Tensor, target: np.ndarray, action_mask: np.ndarray) -> Tensor:
    """Mean squared error over batch, horizon and unmasked action dims only."""
    m = action_mask[:, None, :].astype(pred.dtype)
    denom = float(m.sum()) * pred.shape[1]
    if denom == 0:
        raise ValueError("masked_mse: every action dimension is masked")
    diff = (pred - target) * m
    return nx.sum(diff * diff) * (1.0 / denom)


def fm_loss(model: PolicyModel, batch: FlowBatch) -> Tensor:
    """Conditional flow-matching loss ||v_theta(A_tau, o) - (A - eps)||^2 over unmasked dims."""
    try:
        v = model.velocity(batch.obs, batch.noisy, batch.tau)
        loss = masked_mse(v, batch.target, batch.action_mask)
    except NonFiniteError as exc:
        raise NonFiniteError(f"flow-matching loss is not finite (tau range "
                             f"[{batch.tau.min():.4f}, {batch.tau.max():.4f}]): {exc}") from exc
    if not math.isfinite(loss.item()):
        raise NonFiniteError("flow-matching loss is NaN")
    return loss


def regression_loss(model: PolicyModel, batch) -> Tensor:
    """Baseline: same trunk regressing A directly from zero action inputs at tau = 0."""
    B, H, d = batch.actions.shape
    zeros = np.zeros((B, H, d), dtype=model.dtype)
    pred = model.velocity(batch.obs, zeros, np.zeros(B))
    return masked_mse(pred, batch.actions, batch.action_mask)


def predict_regression(model: PolicyModel, obs: Observation | ObsBatch, action_mask) -> np.ndarray:
    obs = as_batch(obs, model.dtype)
    c = model.config
    with nx.no_grad():
        pred = model.velocity(obs, np.zeros((obs.size, c.horizon, c.action_dim)), np.zeros(obs.size))
    return pred.data * _mask3(action_mask, obs.size)


def _mask3(action_mask, batch: int) -> np.ndarray:
    m = np.asarray(action_mask, dtype=bool)
    if m.ndim == 1:
        m = np.broadcast_to(m, (batch, m.shape[0]))
    return m[:, None, :]


def integrate(
    model: PolicyModel,
    observation: Observation | ObsBatch,
    rng: np.random.Generator,
    config: FlowConfig = FlowConfig(),
    action_mask=None,
    use_cache: bool = True,
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Forward Euler from A^0 ~ N(0, I) to A^1 with ``config.steps`` steps.

    The prefix cache is built once and only action tokens are recomputed per
    step. Returns the (B, H, d_max) chunk; padded columns stay exactly zero.
    """
    obs = as_batch(observation, model.dtype)
    c = model.config
    B = obs.size
    if action_mask is None:
        action_mask = obs.state_mask
    m = _mask3(action_mask, B)
    if noise is None:
        noise = rng.standard_normal((B, c.horizon, c.action_dim))
    a = np.asarray(noise, dtype=model.dtype) * m
    with nx.no_grad():
        cache = model.build_cache(obs) if use_cache else None
        for k, tau in enumerate(config.times()):
            try:
                v = model.velocity(obs, a, np.full(B, tau), cache=cache).data
            except NonFiniteError as exc:
                raise NonFiniteError(f"integration step {k} (tau={tau:.3f}): {exc}") from exc
            with np.errstate(over="ignore", invalid="ignore"):
                a = a + config.delta * (v * m)
            if not np.isfinite(a).all():
                raise NonFiniteError(f"integration step {k} (tau={tau:.3f}) produced non-finite actions")
    return a
