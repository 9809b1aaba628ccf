"""Encoder-decoder variant without a shared-attention backbone.

The observation encoder self-attends over prefix and state tokens. The action
decoder self-attends bidirectionally over action tokens, cross-attends to the
encoder output, and is conditioned on the flow time through AdaLN-Zero
modulation whose projections start at zero.
"""

from __future__ import annotations

import math

import numpy as np

from .. import numerics as nx
from ..numerics import Tensor
from .base import PolicyModel, time_features
from .config import ModelConfig
from .layers import ParamInit, attend, gated_mlp, linear, mask_bias, merge_heads, rotary, scaled_norm, split_heads
from .observation import ObsBatch
from .prefix import embed_prefix, init_prefix_params
from .two_expert import PrefixCache, check_cache

# shift/scale/gate for self-attention, cross-attention and MLP
_MODS_PER_BLOCK = 9


def _modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    return nx.rms_norm(x) * (scale + 1.0) + shift


class SmallPolicy(PolicyModel):
    variant = "small"
    groups = ("encoder", "decoder")
    _decode_name = "decoder.action_out"

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator | int = 0, dtype=np.float64) -> "SmallPolicy":
        rng = np.random.default_rng(rng)
        ini = ParamInit(rng, dtype)
        c = config
        D, w = c.prefix_width, c.expert_width
        kvd = c.num_kv_heads * c.head_dim
        out_scale = 1.0 / math.sqrt(2 * c.depth)
        init_prefix_params(ini, c, "encoder", D)
        ini.linear("encoder.state.w", D, c.action_dim)
        ini.zeros("encoder.state.b", (D,))
        for i in range(c.depth):
            p = f"encoder.layers.{i}."
            ini.zeros(p + "attn_norm", (D,))
            ini.linear(p + "wq", c.attn_dim, D)
            ini.linear(p + "wk", kvd, D)
            ini.linear(p + "wv", kvd, D)
            ini.linear(p + "wo", D, c.attn_dim, out_scale)
            ini.zeros(p + "mlp_norm", (D,))
            ini.linear(p + "w_gate", c.prefix_mlp_dim, D)
            ini.linear(p + "w_up", c.prefix_mlp_dim, D)
            ini.linear(p + "w_down", D, c.prefix_mlp_dim, out_scale)
        ini.zeros("encoder.final_norm", (D,))

        ini.linear("decoder.action_in.w", w, c.action_dim)
        ini.zeros("decoder.action_in.b", (w,))
        # rotary alone only gives relative offsets; chunks need absolute timesteps
        ini.normal("decoder.pos", (c.horizon, w), 0.02)
        ini.linear("decoder.time.w1", w, w)
        ini.zeros("decoder.time.b1", (w,))
        ini.linear("decoder.time.w2", w, w)
        ini.zeros("decoder.time.b2", (w,))
        for i in range(c.depth):
            p = f"decoder.blocks.{i}."
            ini.zeros(p + "mod.w", (_MODS_PER_BLOCK * w, w))
            ini.zeros(p + "mod.b", (_MODS_PER_BLOCK * w,))
            ini.linear(p + "self.wq", c.attn_dim, w)
            ini.linear(p + "self.wk", kvd, w)
            ini.linear(p + "self.wv", kvd, w)
            ini.linear(p + "self.wo", w, c.attn_dim)
            ini.linear(p + "cross.wq", c.attn_dim, w)
            ini.linear(p + "cross.wk", kvd, D)
            ini.linear(p + "cross.wv", kvd, D)
            ini.linear(p + "cross.wo", w, c.attn_dim)
            ini.linear(p + "w_gate", c.expert_mlp_dim, w)
            ini.linear(p + "w_up", c.expert_mlp_dim, w)
            ini.linear(p + "w_down", w, c.expert_mlp_dim)
        ini.zeros("decoder.final_mod.w", (2 * w, w))
        ini.zeros("decoder.final_mod.b", (2 * w,))
        ini.linear("decoder.action_out.w", c.action_dim, w)
        ini.zeros("decoder.action_out.b", (c.action_dim,))
        return cls(config, ini.params)

    # -- observation encoder -------------------------------------------------
    def encode(self, obs: ObsBatch) -> tuple[Tensor, np.ndarray]:
        """Encoder outputs (B, P+1, D) over prefix and state tokens, and key validity."""
        c, p = self.config, self.params
        prefix = embed_prefix(p, "encoder", c, obs)
        B, P = prefix.valid.shape
        q = Tensor(np.asarray(obs.state, dtype=self.dtype))
        state = nx.reshape(linear(q, p["encoder.state.w"], p["encoder.state.b"]), (B, 1, -1))
        h = nx.concat([prefix.x, state], axis=1)
        valid = np.concatenate([prefix.valid, np.ones((B, 1), dtype=bool)], axis=1)
        # state sits right after the last valid prefix token
        pos = np.concatenate([np.broadcast_to(np.arange(P), (B, P)), prefix.counts[:, None]], axis=1)
        bias = mask_bias(np.broadcast_to(valid[:, None, :], (B, P + 1, P + 1)), self.dtype)
        G, g = c.num_kv_heads, c.num_heads // c.num_kv_heads
        for i in range(c.depth):
            lp = f"encoder.layers.{i}."
            x = scaled_norm(h, p[lp + "attn_norm"])
            qh = rotary(split_heads(linear(x, p[lp + "wq"]), G, g, c.head_dim), pos, c.rope_base)
            kh = rotary(split_heads(linear(x, p[lp + "wk"]), G, 1, c.head_dim), pos, c.rope_base)
            vh = split_heads(linear(x, p[lp + "wv"]), G, 1, c.head_dim)
            h = h + linear(merge_heads(attend(qh, kh, vh, bias)), p[lp + "wo"])
            h = h + gated_mlp(scaled_norm(h, p[lp + "mlp_norm"]), p, lp)
        return scaled_norm(h, p["encoder.final_norm"]), valid

    def _cross_kv(self, enc: Tensor) -> list[tuple[Tensor, Tensor]]:
        c, p = self.config, self.params
        G = c.num_kv_heads
        out = []
        for i in range(c.depth):
            bp = f"decoder.blocks.{i}.cross."
            out.append((split_heads(linear(enc, p[bp + "wk"]), G, 1, c.head_dim),
                        split_heads(linear(enc, p[bp + "wv"]), G, 1, c.head_dim)))
        return out

    # -- action decoder --------------------------------------------------------
    def time_condition(self, tau, batch: int) -> Tensor:
        p = self.params
        phi = time_features(self._tau_tensor(tau, batch), self.config.expert_width)
        h = nx.swish(linear(phi, p["decoder.time.w1"], p["decoder.time.b1"]))
        return linear(h, p["decoder.time.w2"], p["decoder.time.b2"])

    def decode(self, noisy_actions, tau, cross_kv, enc_valid: np.ndarray) -> Tensor:
        """Decoder hidden states (B, H, w) before the output projection."""
        c, p = self.config, self.params
        a = self._as_actions(noisy_actions)
        B, H, _ = a.shape
        w = c.expert_width
        G, g = c.num_kv_heads, c.num_heads // c.num_kv_heads
        x = linear(a, p["decoder.action_in.w"], p["decoder.action_in.b"]) + p["decoder.pos"]
        cond = nx.reshape(nx.swish(self.time_condition(tau, B)), (B, 1, w))
        pos = np.broadcast_to(np.arange(H), (B, H))
        cross_bias = mask_bias(np.broadcast_to(enc_valid[:, None, :], (B, H, enc_valid.shape[1])), self.dtype)
        for i in range(c.depth):
            bp = f"decoder.blocks.{i}."
            mods = linear(cond, p[bp + "mod.w"], p[bp + "mod.b"])
            m = [mods[:, :, j * w:(j + 1) * w] for j in range(_MODS_PER_BLOCK)]

            h = _modulate(x, m[0], m[1])
            qh = rotary(split_heads(linear(h, p[bp + "self.wq"]), G, g, c.head_dim), pos, c.rope_base)
            kh = rotary(split_heads(linear(h, p[bp + "self.wk"]), G, 1, c.head_dim), pos, c.rope_base)
            vh = split_heads(linear(h, p[bp + "self.wv"]), G, 1, c.head_dim)
            x = x + m[2] * linear(merge_heads(attend(qh, kh, vh, None)), p[bp + "self.wo"])

            h = _modulate(x, m[3], m[4])
            qh = split_heads(linear(h, p[bp + "cross.wq"]), G, g, c.head_dim)
            kc, vc = cross_kv[i]
            x = x + m[5] * linear(merge_heads(attend(qh, kc, vc, cross_bias)), p[bp + "cross.wo"])

            h = _modulate(x, m[6], m[7])
            x = x + m[8] * gated_mlp(h, p, bp)
        fm = linear(cond, p["decoder.final_mod.w"], p["decoder.final_mod.b"])
        return _modulate(x, fm[:, :, :w], fm[:, :, w:])

    # -- policy interface --------------------------------------------------------
    def build_cache(self, obs: ObsBatch) -> PrefixCache:
        """Encoder output projected to every block's cross-attention keys/values."""
        with nx.no_grad():
            enc, valid = self.encode(obs)
            kv = self._cross_kv(enc)
        self.calls["prefix_forward"] += 1
        return PrefixCache(
            keys=[k.data for k, _ in kv],
            values=[v.data for _, v in kv],
            key_valid=valid,
            next_position=np.zeros(obs.size, dtype=np.int64),
            fingerprint=obs.fingerprint(),
        )

    def forward_small(self, obs: ObsBatch, noisy_actions, tau, cache: PrefixCache | None = None) -> Tensor:
        B = obs.size if cache is None else cache.batch_size
        if cache is None:
            self.calls["full_forward"] += 1
            enc, valid = self.encode(obs)
            kv = self._cross_kv(enc)
        else:
            if len(cache.keys) != self.config.depth:
                raise ValueError(f"cache has {len(cache.keys)} layers, model has {self.config.depth}")
            check_cache(cache, obs)
            self.calls["suffix_forward"] += 1
            kv = [(Tensor(k), Tensor(v)) for k, v in zip(cache.keys, cache.values)]
            valid = cache.key_valid
        a = self._as_actions(noisy_actions)
        if a.shape[0] != B:
            raise ValueError(f"cache shape mismatch: batch {B} vs actions {a.shape[0]}")
        return self.decode_actions(self.decode(a, tau, kv, valid))

    velocity = forward_small
