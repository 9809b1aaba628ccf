"""Task-robot mixture weighting and training batch assembly."""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Hashable, Iterator, Mapping

import numpy as np

from ..embodiment import D_MAX, N_IMAGE_SLOTS, dim_mask, pad_images, pad_vector
from ..model.observation import ObsBatch
from ..vocab import PAD_ID, encode
from .episodes import Episode

DEFAULT_ALPHA = 0.43


@dataclass(frozen=True)
class MixtureSpec:
    keys: tuple
    counts: tuple
    alpha: float
    weights: np.ndarray

    def weight(self, key) -> float:
        return float(self.weights[self.keys.index(key)])


def mixture_weights(counts: Mapping[Hashable, int], alpha: float = DEFAULT_ALPHA) -> MixtureSpec:
    """weight_i = n_i^alpha / sum_j n_j^alpha."""
    if not counts:
        raise ValueError("mixture needs at least one dataset")
    keys = tuple(counts)
    n = np.array([counts[k] for k in keys], dtype=np.float64)
    if np.any(n <= 0):
        raise ValueError(f"mixture counts must be positive, got {dict(counts)}")
    w = n**alpha
    return MixtureSpec(keys, tuple(int(c) for c in n), alpha, w / w.sum())


def dataset_mixture(datasets: Mapping[Hashable, list[Episode]], alpha: float = DEFAULT_ALPHA) -> MixtureSpec:
    """Mixture over datasets counted in control steps."""
    return mixture_weights({k: sum(len(ep) for ep in eps) for k, eps in datasets.items()}, alpha)


def draw_keys(mixture: MixtureSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(len(mixture.keys), size=n, p=mixture.weights)


@dataclass
class Source:
    key: Hashable
    episode: int
    t: int
    language: str


@dataclass
class Batch:
    obs: ObsBatch
    actions: np.ndarray  # (B, H, d_max)
    action_mask: np.ndarray  # (B, d_max)
    source: list[Source]

    @property
    def size(self) -> int:
        return self.actions.shape[0]


def chunk_at(ep: Episode, t: int, horizon: int) -> np.ndarray:
    """Actions t..t+H-1, repeating the final action past the episode end."""
    idx = np.minimum(np.arange(t, t + horizon), len(ep) - 1)
    return ep.actions[idx]


def sample_batch(
    datasets: Mapping[Hashable, list[Episode]],
    mixture: MixtureSpec,
    batch_size: int,
    rng: np.random.Generator,
    horizon: int = 50,
    annotation_prob: float = 0.5,
    d_max: int = D_MAX,
    n_images: int = N_IMAGE_SLOTS,
    dtype=np.float64,
) -> Batch:
    """Pick a dataset by mixture weight, then a step uniformly within it, per example.

    With probability ``annotation_prob`` the language slot carries the segment
    annotation covering that step instead of the task prompt.
    """
    missing = set(datasets) - set(mixture.keys)
    if missing:
        raise ValueError(f"mixture does not cover datasets {sorted(map(str, missing))}")
    lengths = {k: np.cumsum([len(ep) for ep in datasets[k]]) for k in mixture.keys if k in datasets}
    images, present, tokens, state, smask, actions, amask, source = [], [], [], [], [], [], [], []
    for j in draw_keys(mixture, batch_size, rng):
        key = mixture.keys[j]
        cum = lengths[key]
        flat = int(rng.integers(cum[-1]))
        e = int(np.searchsorted(cum, flat, side="right"))
        t = flat - (int(cum[e - 1]) if e else 0)
        ep = datasets[key][e]
        language = ep.annotation(t) if rng.random() < annotation_prob else ep.prompt
        slots, flags = pad_images(ep.images[t], n_images)
        images.append(slots)
        present.append(flags)
        tokens.append(encode(language))
        state.append(pad_vector(ep.state[t], d_max))
        smask.append(dim_mask(ep.state.shape[1], d_max))
        actions.append(pad_vector(chunk_at(ep, t, horizon), d_max))
        amask.append(dim_mask(ep.actions.shape[1], d_max))
        source.append(Source(key, e, t, language))
    L = max(len(x) for x in tokens)
    tok = np.full((batch_size, L), PAD_ID, dtype=np.int64)
    valid = np.zeros((batch_size, L), dtype=bool)
    for i, x in enumerate(tokens):
        tok[i, : len(x)] = x
        valid[i, : len(x)] = True
    obs = ObsBatch(np.stack(images).astype(dtype), np.stack(present), tok, valid,
                   np.stack(state).astype(dtype), np.stack(smask))
    return Batch(obs, np.stack(actions).astype(dtype), np.stack(amask), source)


def batch_rng(seed: int, index: int) -> np.random.Generator:
    """Generator owned by one batch, so batch contents do not depend on worker scheduling."""
    return np.random.default_rng([seed, index])


def ordered_batches(make: Callable[[int], object], start: int, stop: int, workers: int = 0) -> Iterator:
    """``make(i)`` for i in [start, stop), yielded in index order.

    With ``workers > 0`` batches are built ahead on a thread pool through a
    bounded window of ``2 * workers`` pending jobs.
    """
    if workers <= 0:
        for i in range(start, stop):
            yield make(i)
        return
    with ThreadPoolExecutor(workers) as pool:
        pending: deque = deque()
        nxt = start
        while nxt < stop or pending:
            while nxt < stop and len(pending) < 2 * workers:
                pending.append(pool.submit(make, nxt))
                nxt += 1
            yield pending.popleft().result()
