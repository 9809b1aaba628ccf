"""Synthetic demonstrations, episode files, mixture weighting and batching."""

from .episodes import Episode, Segment, gen_episodes
from .mixture import (
    DEFAULT_ALPHA,
    Batch,
    MixtureSpec,
    Source,
    batch_rng,
    chunk_at,
    dataset_mixture,
    draw_keys,
    mixture_weights,
    ordered_batches,
    sample_batch,
)
from .storage import read_dataset, read_episode, write_episode, write_episodes

__all__ = [
    "DEFAULT_ALPHA", "Batch", "Episode", "MixtureSpec", "Segment", "Source", "batch_rng", "chunk_at",
    "dataset_mixture", "draw_keys", "gen_episodes", "mixture_weights", "ordered_batches", "read_dataset",
    "read_episode", "sample_batch", "write_episode", "write_episodes",
]
