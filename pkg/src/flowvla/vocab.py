"""Toy command vocabulary shared by the data pipeline, the simulator and the model."""

from __future__ import annotations

import numpy as np

WORDS = (
    "<pad>", "reach", "pick", "place", "sort", "fold", "stack", "towel", "target",
    "object", "block", "red", "green", "blue", "yellow", "bin_a", "bin_b", "left",
    "right", "corner", "middle", "end", "on", "top", "drive", "done", "half", "again",
    "grasp", "release", "move", "to", "the", "and", "base", "arm",
)
VOCAB_SIZE = 64
TOKEN_IDS = {w: i for i, w in enumerate(WORDS)}
PAD_ID = 0

assert len(WORDS) <= VOCAB_SIZE


def encode(text: str) -> np.ndarray:
    """Whitespace tokenizer; unknown words raise ``KeyError``."""
    try:
        return np.array([TOKEN_IDS[w] for w in text.split()], dtype=np.int64)
    except KeyError as exc:
        raise KeyError(f"word {exc.args[0]!r} not in the toy vocabulary") from None


def decode(ids) -> str:
    return " ".join(WORDS[int(i)] for i in ids if int(i) != PAD_ID)
