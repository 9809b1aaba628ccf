"""Image-patch and language embedding for the observation prefix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numerics as nx
from ..numerics import Tensor
from .config import ModelConfig
from .layers import ParamInit, linear
from .observation import ObsBatch


@dataclass
class PrefixTokens:
    """Left-aligned prefix embeddings; ``valid[b, i]`` is false for padding rows."""

    x: Tensor  # (B, P, D)
    valid: np.ndarray  # (B, P)

    @property
    def counts(self) -> np.ndarray:
        return self.valid.sum(axis=1)


def init_prefix_params(init: ParamInit, cfg: ModelConfig, name: str, width: int) -> None:
    pp = cfg.patch_size ** 2
    init.linear(f"{name}.patch_proj.w", width, pp)
    init.zeros(f"{name}.patch_proj.b", (width,))
    init.normal(f"{name}.patch_pos", (cfg.patches_per_image, width), 0.5)
    init.normal(f"{name}.slot_emb", (cfg.max_images, width), 0.5)
    init.normal(f"{name}.tok_emb", (cfg.vocab_size, width), 1.0)


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, n, S, S) -> (B, n, (S/p)^2, p*p), patches in row-major grid order."""
    B, n, S, _ = images.shape
    g = S // patch
    x = images.reshape(B, n, g, patch, g, patch).transpose(0, 1, 2, 4, 3, 5)
    return x.reshape(B, n, g * g, patch * patch)


def embed_prefix(params: dict[str, Tensor], name: str, cfg: ModelConfig, obs: ObsBatch) -> PrefixTokens:
    """Patch tokens of every present image followed by the language tokens.

    Absent image slots and language padding are dropped and the remaining
    tokens packed to the left, so an example with two cameras and three words
    yields exactly ``2 * patches_per_image + 3`` valid rows.
    """
    if obs.images.shape[1] != cfg.max_images or obs.images.shape[2] != cfg.image_size:
        raise ValueError(
            f"expected images (B, {cfg.max_images}, {cfg.image_size}, {cfg.image_size}), got {obs.images.shape}"
        )
    if obs.tokens.size and obs.tokens[obs.token_valid].max(initial=0) >= cfg.vocab_size:
        raise ValueError(f"token id >= vocab_size={cfg.vocab_size}")
    B, n = obs.images.shape[:2]
    Np = cfg.patches_per_image
    dtype = params[f"{name}.patch_proj.w"].dtype
    patches = Tensor(patchify(obs.images, cfg.patch_size).astype(dtype))
    img = linear(patches, params[f"{name}.patch_proj.w"], params[f"{name}.patch_proj.b"])
    img = img + params[f"{name}.patch_pos"]
    img = img + nx.reshape(params[f"{name}.slot_emb"], (n, 1, -1))
    width = img.shape[-1]
    img = nx.reshape(img, (B, n * Np, width))
    lang = nx.embedding_gather(params[f"{name}.tok_emb"], obs.tokens)
    full = nx.concat([img, lang], axis=1)
    full_valid = np.concatenate([np.repeat(obs.image_present, Np, axis=1), obs.token_valid], axis=1)

    T0 = full_valid.shape[1]
    counts = full_valid.sum(axis=1)
    P = int(counts.max())
    idx = np.zeros((B, P), dtype=np.int64)
    valid = np.zeros((B, P), dtype=bool)
    for b in range(B):
        keep = np.flatnonzero(full_valid[b])
        idx[b, : keep.size] = b * T0 + keep
        idx[b, keep.size:] = b * T0 + keep[0]
        valid[b, : keep.size] = True
    packed = nx.embedding_gather(nx.reshape(full, (B * T0, width)), idx)
    return PrefixTokens(packed, valid)
