"""Building blocks shared by both policy architectures."""

from __future__ import annotations

import math

import numpy as np

from .. import numerics as nx
from ..numerics import Tensor

NEG_INF = -1e30


class ParamInit:
    """Creates named parameters from a seeded generator."""

    def __init__(self, rng: np.random.Generator, dtype=np.float64):
        self.rng = rng
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}

    def _add(self, name: str, arr: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(arr.astype(self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def normal(self, name: str, shape, std: float) -> Tensor:
        return self._add(name, self.rng.normal(0.0, std, size=shape))

    def linear(self, name: str, out_dim: int, in_dim: int, scale: float = 1.0) -> Tensor:
        return self.normal(name, (out_dim, in_dim), scale / math.sqrt(in_dim))

    def zeros(self, name: str, shape) -> Tensor:
        return self._add(name, np.zeros(shape))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T (+ b)`` with ``w`` stored as (out, in)."""
    y = nx.matmul(x, nx.transpose(w, (1, 0)))
    return y if b is None else y + b


def scaled_norm(x: Tensor, scale: Tensor) -> Tensor:
    return nx.rms_norm(x) * (scale + 1.0)


def gated_mlp(x: Tensor, p: dict[str, Tensor], prefix: str) -> Tensor:
    gate = nx.gelu(linear(x, p[prefix + "w_gate"]))
    return linear(gate * linear(x, p[prefix + "w_up"]), p[prefix + "w_down"])


def split_heads(x: Tensor, num_groups: int, per_group: int, head_dim: int) -> Tensor:
    """(B, T, G*g*hd) -> (B, G, g, T, hd)."""
    B, T, _ = x.shape
    return nx.transpose(nx.reshape(x, (B, T, num_groups, per_group, head_dim)), (0, 2, 3, 1, 4))


def merge_heads(x: Tensor) -> Tensor:
    """(B, G, g, T, hd) -> (B, T, G*g*hd)."""
    B, G, g, T, hd = x.shape
    return nx.reshape(nx.transpose(x, (0, 3, 1, 2, 4)), (B, T, G * g * hd))


def attend(q: Tensor, k: Tensor, v: Tensor, bias: np.ndarray | None) -> Tensor:
    """Scaled dot-product attention; ``k``/``v`` broadcast over query groups.

    ``q``: (B, G, g, Tq, hd); ``k``, ``v``: (B, G, 1, Tk, hd);
    ``bias``: additive, broadcastable to (B, G, g, Tq, Tk).
    """
    scores = nx.matmul(q, nx.transpose(k, (0, 1, 2, 4, 3))) * (1.0 / math.sqrt(q.shape[-1]))
    if bias is not None:
        scores = scores + bias
    return nx.matmul(nx.softmax(scores), v)


def rotary(x: Tensor, positions: np.ndarray, base: float) -> Tensor:
    """Apply rotary encoding to (B, G, g, T, hd) given (B, T) positions."""
    cos, sin = nx.rotary_tables(positions, x.shape[-1], base, dtype=x.dtype)
    return nx.rotary_apply(x, cos[:, None, None], sin[:, None, None])


def mask_bias(allowed: np.ndarray, dtype) -> np.ndarray:
    """Boolean (B, Tq, Tk) -> additive bias (B, 1, 1, Tq, Tk)."""
    return np.where(allowed, 0.0, NEG_INF).astype(dtype)[:, None, None]
