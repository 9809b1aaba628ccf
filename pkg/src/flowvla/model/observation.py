"""Observation and action-chunk containers, and batch collation."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..vocab import PAD_ID


@dataclass
class Observation:
    """One policy input: camera slots, command tokens and padded proprioception.

    ``images`` has shape ``(max_images, S, S)``; slots whose ``image_present``
    flag is false are ignored by the model regardless of their pixels.
    """

    images: np.ndarray
    image_present: np.ndarray
    tokens: np.ndarray
    state: np.ndarray
    state_mask: np.ndarray

    def validate(self) -> None:
        if self.images.ndim != 3 or self.images.shape[1] != self.images.shape[2]:
            raise ValueError(f"images must be (slots, S, S), got {self.images.shape}")
        if self.image_present.shape != (self.images.shape[0],):
            raise ValueError("image_present must have one flag per slot")
        if not self.image_present.any():
            raise ValueError("observation needs at least one present image slot")
        if self.state.shape != self.state_mask.shape:
            raise ValueError("state and state_mask lengths differ")
        if np.any(self.state[~self.state_mask] != 0):
            raise ValueError("padded state entries must be exactly 0")

    @property
    def d_max(self) -> int:
        return self.state.shape[0]


@dataclass
class ActionChunk:
    actions: np.ndarray  # (H, d_max)
    action_mask: np.ndarray  # (d_max,) bool, true for real dims

    def validate(self) -> None:
        if self.actions.ndim != 2 or self.actions.shape[1] != self.action_mask.shape[0]:
            raise ValueError(f"actions shape {self.actions.shape} vs mask {self.action_mask.shape}")
        if np.any(self.actions[:, ~self.action_mask] != 0):
            raise ValueError("padded action columns must be exactly 0")

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def unpadded(self) -> np.ndarray:
        return self.actions[:, self.action_mask]


@dataclass
class ObsBatch:
    """Stacked observations; language is right-padded with ``token_valid`` false."""

    images: np.ndarray  # (B, n, S, S)
    image_present: np.ndarray  # (B, n) bool
    tokens: np.ndarray  # (B, L) int
    token_valid: np.ndarray  # (B, L) bool
    state: np.ndarray  # (B, d_max)
    state_mask: np.ndarray  # (B, d_max) bool

    @property
    def size(self) -> int:
        return self.images.shape[0]

    def select(self, idx) -> "ObsBatch":
        idx = np.atleast_1d(idx)
        return ObsBatch(*(getattr(self, f)[idx] for f in
                          ("images", "image_present", "tokens", "token_valid", "state", "state_mask")))

    def fingerprint(self) -> bytes:
        h = hashlib.sha256()
        for arr in (self.images, self.image_present, self.tokens, self.token_valid, self.state, self.state_mask):
            h.update(np.ascontiguousarray(arr).tobytes())
            h.update(str(arr.shape).encode())
        return h.digest()


def collate(observations: list[Observation], dtype=np.float64) -> ObsBatch:
    if not observations:
        raise ValueError("cannot collate an empty observation list")
    L = max(1, max(len(o.tokens) for o in observations))
    tokens = np.full((len(observations), L), PAD_ID, dtype=np.int64)
    valid = np.zeros((len(observations), L), dtype=bool)
    for i, o in enumerate(observations):
        tokens[i, : len(o.tokens)] = o.tokens
        valid[i, : len(o.tokens)] = True
    return ObsBatch(
        images=np.stack([o.images for o in observations]).astype(dtype),
        image_present=np.stack([o.image_present for o in observations]).astype(bool),
        tokens=tokens,
        token_valid=valid,
        state=np.stack([o.state for o in observations]).astype(dtype),
        state_mask=np.stack([o.state_mask for o in observations]).astype(bool),
    )


def as_batch(obs: Observation | ObsBatch, dtype=np.float64) -> ObsBatch:
    if isinstance(obs, ObsBatch):
        return obs
    obs.validate()
    return collate([obs], dtype=dtype)
