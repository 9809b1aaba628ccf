from __future__ import annotations

import collections

import numpy as np

from .. import numerics as nx
from ..numerics import Tensor
from .config import ModelConfig
from .layers import linear
from .observation import ObsBatch


class PolicyModel:
    """Common surface of both architectures.

    Subclasses provide ``build_cache`` and ``velocity``. Parameters live in a
    flat ``name -> Tensor`` registry; the leading name component is the
    parameter group used for per-expert counts.
    """

    variant: str = ""
    groups: tuple[str, ...] = ()

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        self.calls: collections.Counter = collections.Counter()

    # -- registry ---------------------------------------------------------
    def group_of(self, name: str) -> str:
        group = name.split(".", 1)[0]
        if group not in self.groups:
            raise KeyError(f"parameter {name!r} is outside groups {self.groups}")
        return group

    def param_counts(self) -> dict[str, int]:
        counts = {g: 0 for g in self.groups}
        for name, p in self.params.items():
            counts[self.group_of(name)] += p.data.size
        counts["total"] = sum(counts[g] for g in self.groups)
        return counts

    def group_params(self, group: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if self.group_of(k) == group}

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def clone(self, dtype=None) -> "PolicyModel":
        dtype = dtype or self.dtype
        params = {k: Tensor(v.data.astype(dtype, copy=True), requires_grad=True, name=k) for k, v in self.params.items()}
        return type(self)(self.config, params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -- shared heads -------------------------------------------------------
    def decode_actions(self, hidden: Tensor) -> Tensor:
        """Linear map of action-token outputs (B, H, w) to velocities (B, H, d_max)."""
        if hidden.shape[-2] != self.config.horizon:
            raise ValueError(f"decode_actions expects {self.config.horizon} tokens, got {hidden.shape[-2]}")
        return linear(hidden, self.params[self._decode_name + ".w"], self.params[self._decode_name + ".b"])

    _decode_name = ""

    # -- interface ------------------------------------------------------------
    def build_cache(self, obs: ObsBatch):
        raise NotImplementedError

    def velocity(self, obs: ObsBatch, noisy_actions, tau, cache=None) -> Tensor:
        raise NotImplementedError

    def _tau_tensor(self, tau, batch: int) -> Tensor:
        tau = np.broadcast_to(np.asarray(tau, dtype=self.dtype), (batch,))
        return Tensor(np.array(tau))

    def _as_actions(self, noisy_actions) -> Tensor:
        if isinstance(noisy_actions, Tensor):
            return noisy_actions
        return Tensor(np.asarray(noisy_actions, dtype=self.dtype))


def time_features(tau: Tensor, width: int) -> Tensor:
    return nx.sinusoidal_encode(tau, width)
