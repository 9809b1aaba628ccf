from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from ..vocab import VOCAB_SIZE


@dataclass(frozen=True)
class ModelConfig:
    """Sizes for both architectures.

    ``prefix_width`` is the width of the image/language expert (or of the
    observation encoder in the small variant); ``expert_width`` is the width of
    the action expert. Both experts project into the same
    ``num_heads * head_dim`` attention space.
    """

    prefix_width: int = 128
    expert_width: int = 64
    depth: int = 4
    num_heads: int = 4
    num_kv_heads: int = 1
    head_dim: int = 32
    prefix_mlp_dim: int = 512
    expert_mlp_dim: int = 256
    action_dim: int = 8
    horizon: int = 50
    max_images: int = 3
    vocab_size: int = VOCAB_SIZE
    image_size: int = 16
    patch_size: int = 4
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.num_heads % self.num_kv_heads:
            raise ValueError(f"num_heads={self.num_heads} not divisible by num_kv_heads={self.num_kv_heads}")
        if self.horizon < 1 or self.action_dim < 1:
            raise ValueError("horizon and action_dim must be >= 1")
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size={self.image_size} not divisible by patch_size={self.patch_size}")
        if self.head_dim % 2 or self.expert_width % 2:
            raise ValueError("head_dim and expert_width must be even (rotary / sinusoidal layouts)")
        for f in ("prefix_width", "expert_width", "depth", "num_heads", "num_kv_heads", "head_dim",
                  "prefix_mlp_dim", "expert_mlp_dim", "max_images", "vocab_size"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be positive")

    @property
    def patches_per_image(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def attn_dim(self) -> int:
        return self.num_heads * self.head_dim

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in types:
                raise ValueError(f"unknown ModelConfig field {k!r}")
            kw[k] = float(v) if types[k] == "float" else int(v)
        return cls(**kw)


DESK = ModelConfig()

# Config used for closed-loop experiments on one CPU core.
COMPACT = ModelConfig(
    prefix_width=64, expert_width=32, depth=2, num_heads=4, num_kv_heads=1, head_dim=16,
    prefix_mlp_dim=128, expert_mlp_dim=64,
)

# Gradient-check scale: 8x8 images with a single patch, so one image + one
# word gives two prefix tokens.
TINY = ModelConfig(
    prefix_width=16, expert_width=16, depth=1, num_heads=2, num_kv_heads=1, head_dim=8,
    prefix_mlp_dim=16, expert_mlp_dim=16, action_dim=3, horizon=4, max_images=1,
    image_size=8, patch_size=8,
)
