"""Episode files: ``<root>/<embodiment>/<task>/<episode_id>/{manifest.txt, steps.bin}``.

``steps.bin`` holds one record per control step: images, then state, then
action, as little-endian float32 in row-major order.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .episodes import Episode, Segment

MAGIC = "flowvla-episode 1"


def manifest_text(ep: Episode) -> str:
    T, cams, S, _ = ep.images.shape
    lines = [
        MAGIC,
        f"embodiment: {ep.embodiment}",
        f"task: {ep.task}",
        f"prompt: {ep.prompt}",
        f"steps: {T}",
        f"cameras: {cams}",
        f"image_size: {S}",
        f"state_dim: {ep.state.shape[1]}",
        f"action_dim: {ep.actions.shape[1]}",
    ]
    lines += [f"segment: {s.start} {s.end} {s.text}" for s in ep.segments]
    return "\n".join(lines) + "\n"


def records(ep: Episode) -> bytes:
    T = len(ep)
    rows = np.concatenate([ep.images.reshape(T, -1), ep.state, ep.actions], axis=1)
    return rows.astype("<f4").tobytes()


def episode_dir(root, ep: Episode, episode_id: int | str) -> Path:
    eid = f"{episode_id:05d}" if isinstance(episode_id, int) else episode_id
    return Path(root) / ep.embodiment / ep.task / eid


def write_episode(root, ep: Episode, episode_id: int | str) -> Path:
    d = episode_dir(root, ep, episode_id)
    d.mkdir(parents=True, exist_ok=True)
    (d / "manifest.txt").write_text(manifest_text(ep))
    (d / "steps.bin").write_bytes(records(ep))
    return d


def read_episode(path) -> Episode:
    path = Path(path)
    lines = (path / "manifest.txt").read_text().splitlines()
    if not lines or lines[0] != MAGIC:
        raise ValueError(f"{path}: not an episode manifest")
    meta: dict[str, str] = {}
    segments = []
    for line in lines[1:]:
        key, _, value = line.partition(": ")
        if key == "segment":
            s, e, text = value.split(" ", 2)
            segments.append(Segment(int(s), int(e), text))
        else:
            meta[key] = value
    T, cams, S = int(meta["steps"]), int(meta["cameras"]), int(meta["image_size"])
    sd, ad = int(meta["state_dim"]), int(meta["action_dim"])
    width = cams * S * S + sd + ad
    flat = np.frombuffer((path / "steps.bin").read_bytes(), dtype="<f4")
    if flat.size != T * width:
        raise ValueError(f"{path}: steps.bin has {flat.size} floats, expected {T * width}")
    rows = flat.reshape(T, width)
    n_img = cams * S * S
    return Episode(meta["embodiment"], meta["task"], meta["prompt"],
                   rows[:, :n_img].reshape(T, cams, S, S), rows[:, n_img:n_img + sd], rows[:, n_img + sd:], segments)


def write_episodes(root, episodes: list[Episode]) -> list[Path]:
    return [write_episode(root, ep, i) for i, ep in enumerate(episodes)]


def read_dataset(root) -> dict[tuple[str, str], list[Episode]]:
    """All episodes under ``root`` keyed by (task, embodiment), in sorted directory order."""
    out: dict[tuple[str, str], list[Episode]] = {}
    for manifest in sorted(Path(root).glob("*/*/*/manifest.txt")):
        ep = read_episode(manifest.parent)
        out.setdefault((ep.task, ep.embodiment), []).append(ep)
    if not out:
        raise FileNotFoundError(f"no episodes under {root}")
    return out
