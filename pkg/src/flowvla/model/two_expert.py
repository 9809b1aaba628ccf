"""Two-expert transformer: a wide expert for image/language tokens and a
narrow action expert for state/action tokens, mixed only inside attention."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import numerics as nx
from ..numerics import Tensor
from .base import PolicyModel, time_features
from .config import ModelConfig
from .layers import ParamInit, attend, gated_mlp, linear, mask_bias, merge_heads, rotary, scaled_norm, split_heads
from .mask import build_block_mask
from .observation import ObsBatch
from .prefix import PrefixTokens, embed_prefix, init_prefix_params


@dataclass
class PrefixCache:
    """Per-layer keys/values (after rotary) of the cached tokens.

    For the two-expert model these are the prefix and state tokens; for the
    small variant they are cross-attention keys/values of the encoder output.
    """

    keys: list[np.ndarray]  # each (B, G, 1, Tc, hd)
    values: list[np.ndarray]
    key_valid: np.ndarray  # (B, Tc)
    next_position: np.ndarray  # (B,)
    fingerprint: bytes

    @property
    def prefix_len(self) -> np.ndarray:
        """Cached tokens per example (prefix tokens + 1 state token)."""
        return self.key_valid.sum(axis=1)

    @property
    def batch_size(self) -> int:
        return self.key_valid.shape[0]


def check_cache(cache: PrefixCache, obs: ObsBatch | None) -> None:
    """A cache may only serve the observation batch it was built from."""
    if obs is not None and cache.fingerprint != obs.fingerprint():
        raise ValueError("prefix cache was built from a different observation")


class TwoExpertPolicy(PolicyModel):
    variant = "two-expert"
    groups = ("prefix", "action", "proj")
    _decode_name = "proj.action_out"

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator | int = 0, dtype=np.float64) -> "TwoExpertPolicy":
        rng = np.random.default_rng(rng)
        ini = ParamInit(rng, dtype)
        c = config
        out_scale = 1.0 / math.sqrt(2 * c.depth)
        init_prefix_params(ini, c, "prefix", c.prefix_width)
        for group, width, mlp in (("prefix", c.prefix_width, c.prefix_mlp_dim), ("action", c.expert_width, c.expert_mlp_dim)):
            for i in range(c.depth):
                p = f"{group}.layers.{i}."
                ini.zeros(p + "attn_norm", (width,))
                ini.linear(p + "wq", c.attn_dim, width)
                ini.linear(p + "wk", c.num_kv_heads * c.head_dim, width)
                ini.linear(p + "wv", c.num_kv_heads * c.head_dim, width)
                ini.linear(p + "wo", width, c.attn_dim, out_scale)
                ini.zeros(p + "mlp_norm", (width,))
                ini.linear(p + "w_gate", mlp, width)
                ini.linear(p + "w_up", mlp, width)
                ini.linear(p + "w_down", width, mlp, out_scale)
        ini.zeros("action.final_norm", (c.expert_width,))
        w, d = c.expert_width, c.action_dim
        ini.linear("proj.state.w", w, d)
        ini.zeros("proj.state.b", (w,))
        ini.linear("proj.action_in.w1", w, d)
        ini.linear("proj.action_in.w2", w, 2 * w)
        ini.linear("proj.action_in.w3", w, w)
        ini.linear("proj.action_out.w", d, w)
        ini.zeros("proj.action_out.b", (d,))
        return cls(config, ini.params)

    # -- embeddings ---------------------------------------------------------
    def embed_prefix(self, obs: ObsBatch) -> PrefixTokens:
        return embed_prefix(self.params, "prefix", self.config, obs)

    def embed_state(self, state) -> Tensor:
        """One width-w token per example from the padded state vector (B, d_max)."""
        q = Tensor(np.asarray(state, dtype=self.dtype))
        if q.shape[-1] != self.config.action_dim:
            raise ValueError(f"state length {q.shape[-1]} != d_max {self.config.action_dim}")
        tok = linear(q, self.params["proj.state.w"], self.params["proj.state.b"])
        return nx.reshape(tok, (q.shape[0], 1, -1))

    def embed_action(self, noisy_actions, tau) -> Tensor:
        """W3 . swish(W2 . concat(W1 . a, phi(tau))) for every action row."""
        a = self._as_actions(noisy_actions)
        B, H, _ = a.shape
        p = self.params
        phi = time_features(self._tau_tensor(tau, B), self.config.expert_width)
        phi = nx.reshape(phi, (B, 1, -1)) * np.ones((1, H, 1), dtype=self.dtype)
        h = nx.concat([linear(a, p["proj.action_in.w1"]), phi], axis=-1)
        return linear(nx.swish(linear(h, p["proj.action_in.w2"])), p["proj.action_in.w3"])

    # -- transformer ----------------------------------------------------------
    def _qkv(self, h: Tensor, prefix: str, positions: np.ndarray):
        c = self.config
        p = self.params
        x = scaled_norm(h, p[prefix + "attn_norm"])
        G, g = c.num_kv_heads, c.num_heads // c.num_kv_heads
        q = split_heads(linear(x, p[prefix + "wq"]), G, g, c.head_dim)
        k = split_heads(linear(x, p[prefix + "wk"]), G, 1, c.head_dim)
        v = split_heads(linear(x, p[prefix + "wv"]), G, 1, c.head_dim)
        return rotary(q, positions, c.rope_base), rotary(k, positions, c.rope_base), v

    def _post(self, h: Tensor, attn_out: Tensor, prefix: str) -> Tensor:
        p = self.params
        h = h + linear(attn_out, p[prefix + "wo"])
        return h + gated_mlp(scaled_norm(h, p[prefix + "mlp_norm"]), p, prefix)

    def forward(
        self,
        prefix: PrefixTokens | None,
        state_token: Tensor | None,
        action_tokens: Tensor | None,
        mask: np.ndarray | None = None,
        cache: PrefixCache | None = None,
        collect_cache: bool = False,
    ):
        """Run every layer over ``[prefix | state | actions]``.

        Returns ``(prefix_out, suffix_out, kv)`` where ``suffix_out`` covers the
        state and action tokens actually supplied (final-normed) and ``kv`` is
        the per-layer key/value list when ``collect_cache`` is set.

        With ``cache``, only ``action_tokens`` are computed and the cached
        prefix/state keys and values are read instead.
        """
        c = self.config
        if cache is not None:
            if prefix is not None or state_token is not None or action_tokens is None:
                raise ValueError("cached forward takes action tokens only")
            return self._forward_cached(action_tokens, cache)
        if prefix is None or state_token is None:
            raise ValueError("uncached forward needs prefix and state tokens")
        suffix = state_token if action_tokens is None else nx.concat([state_token, action_tokens], axis=1)
        B, P = prefix.valid.shape
        S = suffix.shape[1]
        H = S - 1
        if mask is None:
            mask = build_block_mask(P, 1, H)
        elif mask.shape != (P + S, P + S):
            raise ValueError(f"mask shape {mask.shape} != ({P + S}, {P + S})")
        key_valid = np.concatenate([prefix.valid, np.ones((B, S), dtype=bool)], axis=1)
        bias = mask_bias(mask[None] & key_valid[:, None, :], self.dtype)
        counts = prefix.counts
        p_pos = np.broadcast_to(np.arange(P), (B, P))
        s_pos = counts[:, None] + np.arange(S)[None]

        ph, sh = prefix.x, suffix
        kv = []
        for i in range(c.depth):
            lp, la = f"prefix.layers.{i}.", f"action.layers.{i}."
            qp, kp, vp = self._qkv(ph, lp, p_pos)
            qs, ks, vs = self._qkv(sh, la, s_pos)
            k = nx.concat([kp, ks], axis=3)
            v = nx.concat([vp, vs], axis=3)
            if collect_cache:
                kv.append((k.data, v.data))
            o = merge_heads(attend(nx.concat([qp, qs], axis=3), k, v, bias))
            ph = self._post(ph, o[:, :P], lp)
            sh = self._post(sh, o[:, P:], la)
        sh = scaled_norm(sh, self.params["action.final_norm"])
        return ph, sh, kv

    def _forward_cached(self, action_tokens: Tensor, cache: PrefixCache):
        c = self.config
        B, H, _ = action_tokens.shape
        if cache.batch_size != B or len(cache.keys) != c.depth:
            raise ValueError(
                f"cache shape mismatch: cache batch {cache.batch_size} x {len(cache.keys)} layers, "
                f"got batch {B} x {c.depth} layers"
            )
        key_valid = np.concatenate([cache.key_valid, np.ones((B, H), dtype=bool)], axis=1)
        bias = mask_bias(np.broadcast_to(key_valid[:, None, :], (B, H, key_valid.shape[1])), self.dtype)
        pos = cache.next_position[:, None] + np.arange(H)[None]
        sh = action_tokens
        for i in range(c.depth):
            la = f"action.layers.{i}."
            qs, ks, vs = self._qkv(sh, la, pos)
            k = nx.concat([Tensor(cache.keys[i]), ks], axis=3)
            v = nx.concat([Tensor(cache.values[i]), vs], axis=3)
            sh = self._post(sh, merge_heads(attend(qs, k, v, bias)), la)
        return None, scaled_norm(sh, self.params["action.final_norm"]), []

    # -- policy interface -------------------------------------------------------
    def build_cache(self, obs: ObsBatch, prefix: PrefixTokens | None = None) -> PrefixCache:
        """Keys/values of the prefix and state blocks at every layer."""
        with nx.no_grad():
            prefix = self.embed_prefix(obs) if prefix is None else prefix
            _, _, kv = self.forward(prefix, self.embed_state(obs.state), None, collect_cache=True)
        self.calls["prefix_forward"] += 1
        key_valid = np.concatenate([prefix.valid, np.ones((obs.size, 1), dtype=bool)], axis=1)
        return PrefixCache(
            keys=[k for k, _ in kv],
            values=[v for _, v in kv],
            key_valid=key_valid,
            next_position=prefix.counts + 1,
            fingerprint=obs.fingerprint(),
        )

    def velocity(self, obs: ObsBatch, noisy_actions, tau, cache: PrefixCache | None = None) -> Tensor:
        """v_theta(A^tau, o) of shape (B, H, d_max)."""
        acts = self.embed_action(noisy_actions, tau)
        if cache is None:
            self.calls["full_forward"] += 1
            _, suffix, _ = self.forward(self.embed_prefix(obs), self.embed_state(obs.state), acts)
            hidden = suffix[:, 1:]
        else:
            check_cache(cache, obs)
            self.calls["suffix_forward"] += 1
            _, hidden, _ = self.forward(None, None, acts, cache=cache)
        return self.decode_actions(hidden)
