from __future__ import annotations

import numpy as np


def block_ids(prefix_len: int, state_len: int, action_len: int) -> np.ndarray:
    if min(prefix_len, state_len, action_len) < 0 or state_len > 1:
        raise ValueError(f"invalid block lengths ({prefix_len}, {state_len}, {action_len})")
    return np.repeat([0, 1, 2], [prefix_len, state_len, action_len])


def build_block_mask(prefix_len: int, state_len: int, action_len: int) -> np.ndarray:
    """Blockwise-causal mask: ``allowed[i, j]`` iff block(j) <= block(i).

    Blocks are [images + language], [state], [noisy actions]; attention is
    bidirectional inside a block.
    """
    b = block_ids(prefix_len, state_len, action_len)
    return b[None, :] <= b[:, None]
