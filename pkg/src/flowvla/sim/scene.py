"""Text key-value scene files.

One entry per line, ``key: values``. Floats are written with ``repr`` so a
save/load round trip is exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .world import Arm, Bin, Item, World


def _floats(v) -> str:
    return " ".join(repr(float(x)) for x in v)


def dumps(world: World, embodiment: str, task: str) -> str:
    lines = [f"embodiment: {embodiment}", f"task: {task}", f"t: {world.t}", f"base: {_floats(world.base)}"]
    for k, arm in enumerate(world.arms):
        held = " ".join(str(i) for i in arm.held)
        lines += [
            f"arm.{k}.mount: {_floats(arm.mount)}",
            f"arm.{k}.angles: {_floats(arm.angles)}",
            f"arm.{k}.closed: {int(arm.closed)}",
            f"arm.{k}.held: {held}",
        ]
    for i, it in enumerate(world.items):
        lines.append(f"item.{i}: {it.name} {it.kind} {int(it.graspable)} {_floats(it.pos)}")
    for b in world.bins:
        lines.append(f"bin.{b.name}: {_floats(b.center)} {b.half!r}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> tuple[World, str, str]:
    kv: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise ValueError(f"scene line {n}: expected 'key: value', got {line!r}")
        kv[key.strip()] = value.strip()
    try:
        arms = []
        k = 0
        while f"arm.{k}.mount" in kv:
            held = [int(x) for x in kv[f"arm.{k}.held"].split()]
            arms.append(Arm(np.array(kv[f"arm.{k}.mount"].split(), float),
                            np.array(kv[f"arm.{k}.angles"].split(), float),
                            bool(int(kv[f"arm.{k}.closed"])), held))
            k += 1
        items = []
        i = 0
        while f"item.{i}" in kv:
            name, kind, graspable, x, y = kv[f"item.{i}"].split()
            items.append(Item(name, kind, np.array([float(x), float(y)]), bool(int(graspable))))
            i += 1
        bins = []
        for key, value in kv.items():
            if key.startswith("bin."):
                x, y, half = (float(v) for v in value.split())
                bins.append(Bin(key[4:], np.array([x, y]), half))
        world = World(np.array(kv["base"].split(), float), arms, items, bins, int(kv.get("t", 0)))
        return world, kv["embodiment"], kv["task"]
    except KeyError as exc:
        raise ValueError(f"scene file is missing key {exc.args[0]!r}") from None


def save(path, world: World, embodiment: str, task: str) -> None:
    Path(path).write_text(dumps(world, embodiment, task))


def load(path) -> tuple[World, str, str]:
    return loads(Path(path).read_text())
