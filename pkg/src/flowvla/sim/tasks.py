"""Tasks: scene sampling, rubrics, subcommand grammar and scripted skills."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..embodiment import EmbodimentSpec
from .world import (
    BASE_STEP,
    JOINT_STEP,
    Arm,
    Bin,
    Item,
    World,
    forward_kinematics,
    inverse_kinematics,
    reachable,
)

COLORS = ("red", "green", "blue", "yellow")
BIN_OF = {"red": "bin_a", "yellow": "bin_a", "green": "bin_b", "blue": "bin_b"}
BIN_CENTERS = {"bin_a": (-0.7, 0.2), "bin_b": (0.7, 0.2)}
APPROACH_OFFSET = 0.15
AT_TOL = 0.05
MOBILE_START = (0.0, -0.3)


# -- rubric -------------------------------------------------------------------

@dataclass
class Checkpoint:
    name: str
    predicate: Callable[[World], bool]
    points: float = 1.0


@dataclass
class Rubric:
    """Ordered checkpoints; a checkpoint counts once it has held at any step."""

    checkpoints: list[Checkpoint]

    @property
    def max_points(self) -> float:
        return sum(c.points for c in self.checkpoints)

    def tracker(self) -> "RubricTracker":
        return RubricTracker(self)


class RubricTracker:
    def __init__(self, rubric: Rubric):
        self.rubric = rubric
        self.attained = [False] * len(rubric.checkpoints)

    def update(self, world: World) -> float:
        for i, c in enumerate(self.rubric.checkpoints):
            if not self.attained[i] and c.predicate(world):
                self.attained[i] = True
        return self.score

    @property
    def score(self) -> float:
        got = sum(c.points for c, a in zip(self.rubric.checkpoints, self.attained) if a)
        return got / self.rubric.max_points


def score(trajectory: list[World], rubric: Rubric) -> float:
    """Fraction of rubric points attained over a trajectory of world states."""
    if not trajectory:
        return 0.0
    tracker = rubric.tracker()
    for world in trajectory:
        tracker.update(world)
    return tracker.score


def _held(world: World, name: str) -> bool:
    return world.holder(world.item_index(name)) is not None


def _in_bin(world: World, name: str, bin_name: str) -> bool:
    return not _held(world, name) and world.bin(bin_name).contains(world.item(name).pos)


def _near(world: World, a: str, b: str, tol: float = AT_TOL) -> bool:
    return float(np.linalg.norm(world.item(a).pos - world.item(b).pos)) <= tol


# -- scripted skills ---------------------------------------------------------

@dataclass
class Phase:
    kind: str  # move | grip | drive
    arm: int = 0
    target: Callable[[World], np.ndarray] | None = None
    close: bool = False
    steps: int = 0


@dataclass
class SkillState:
    command: str
    phases: list[Phase]
    index: int = 0
    counter: int = 0
    info: dict = field(default_factory=dict)


def _desired_grip(world: World) -> list[float]:
    # an empty closed gripper means a missed grasp: reopen
    return [1.0 if arm.closed and arm.held else -1.0 for arm in world.arms]


def _action(world: World, spec: EmbodimentSpec, grips: list[float]) -> np.ndarray:
    a = np.zeros(spec.action_dim)
    for k, g in enumerate(grips):
        a[3 * k + 2] = g
    return a


def phase_action(world: World, spec: EmbodimentSpec, phase: Phase, counter: int) -> np.ndarray | None:
    """Action for ``phase`` at the current world, or ``None`` if the phase is complete."""
    grips = _desired_grip(world)
    if phase.kind == "move":
        arm = world.arms[phase.arm]
        goal = inverse_kinematics(world.shoulder(phase.arm), phase.target(world), arm.angles)
        delta = goal - arm.angles
        if np.max(np.abs(delta)) < 1e-9:
            return None
        a = _action(world, spec, grips)
        a[3 * phase.arm: 3 * phase.arm + 2] = np.clip(delta / JOINT_STEP, -1.0, 1.0)
        return a
    if phase.kind == "grip":
        if counter >= phase.steps:
            return None
        grips[phase.arm] = 1.0 if phase.close else -1.0
        return _action(world, spec, grips)
    if phase.kind == "drive":
        delta = phase.target(world) - world.base
        if np.max(np.abs(delta)) < 1e-9:
            return None
        a = _action(world, spec, grips)
        a[-2:] = np.clip(delta / BASE_STEP, -1.0, 1.0)
        return a
    raise ValueError(f"unknown phase kind {phase.kind!r}")


def _fixed(p) -> Callable[[World], np.ndarray]:
    p = np.array(p, dtype=np.float64)
    return lambda w: p


def _item_pos(name: str) -> Callable[[World], np.ndarray]:
    return lambda w: w.item(name).pos.copy()


# -- task definitions ----------------------------------------------------------

class Task:
    name = ""
    embodiments: tuple[str, ...] = ()
    max_steps = 200

    def __init__(self, spec: EmbodimentSpec):
        if spec.name not in self.embodiments:
            raise ValueError(f"task {self.name!r} is not implemented for embodiment {spec.name!r}")
        self.spec = spec

    # scene
    def make_world(self, rng: np.random.Generator) -> World:
        raise NotImplementedError

    def prompt(self, world: World) -> str:
        raise NotImplementedError

    def rubric(self, world: World) -> Rubric:
        raise NotImplementedError

    # high-level grammar
    def subcommand(self, world: World) -> str:
        raise NotImplementedError

    # low-level skill for a subcommand
    def skill(self, world: World, command: str, rng: np.random.Generator) -> SkillState:
        raise NotImplementedError

    def command_done(self, world: World, command: str) -> bool:
        """Whether the subtask named by ``command`` is finished in ``world``."""
        verb, _, arg = command.partition(" ")
        if command == "done":
            return True
        if verb == "pick":
            return _held(world, arg)
        if verb == "place":
            return self._holding(world) is None
        return self.subcommand(world) != command

    # helpers ------------------------------------------------------------------
    def _base_world(self, rng: np.random.Generator, bins: bool = True) -> World:
        spec = self.spec
        base = np.array(MOBILE_START) if spec.mobile_base else np.zeros(2)
        mounts = [np.array([-0.45, 0.0]), np.array([0.45, 0.0])] if spec.num_arms == 2 else [np.zeros(2)]
        arms = []
        for m in mounts:
            home = base + m + np.array([rng.uniform(-0.1, 0.1), rng.uniform(0.4, 0.5)])
            arms.append(Arm(mount=m, angles=inverse_kinematics(base + m, home, np.array([math.pi / 2, 0.0]))))
        bin_list = [Bin(n, np.array(c)) for n, c in BIN_CENTERS.items()] if bins else []
        return World(base=base, arms=arms, items=[], bins=bin_list)

    def working_base(self, world: World) -> np.ndarray:
        return np.zeros(2)

    def arm_for(self, world: World, p: np.ndarray) -> int:
        """Arm whose shoulder (at the working base position) is nearest to ``p``."""
        base = self.working_base(world)
        d = [np.linalg.norm(base + arm.mount - p) for arm in world.arms]
        return int(np.argmin(d))

    def _reachable_from_work(self, world: World, p: np.ndarray, margin: float = 0.05) -> bool:
        k = self.arm_for(world, p)
        return reachable(self.working_base(world) + world.arms[k].mount, p, margin)

    def _sample_points(self, rng, world, n, xlim, ylim, min_sep=0.22, approach=True, tries=2000):
        pts: list[np.ndarray] = []
        for _ in range(tries):
            if len(pts) == n:
                break
            p = np.array([rng.uniform(*xlim), rng.uniform(*ylim)])
            ok = self._reachable_from_work(world, p)
            if approach:
                for s in (-1, 1):
                    q = p + np.array([s * APPROACH_OFFSET, 0.0])
                    ok = ok and reachable(self.working_base(world) + world.arms[self.arm_for(world, p)].mount, q, 0.03)
            if ok and all(np.linalg.norm(p - q) >= min_sep for q in pts):
                pts.append(p)
        if len(pts) < n:
            raise RuntimeError(f"could not place {n} reachable items for task {self.name!r}")
        return pts

    def _drive_phases(self, world: World) -> list[Phase]:
        return [Phase("drive", target=_fixed(self.working_base(world)))]

    def _pick_phases(self, world: World, name: str, side: int) -> list[Phase]:
        p = world.item(name).pos
        k = self.arm_for(world, p)
        waypoint = lambda w, n=name: w.item(n).pos + np.array([side * APPROACH_OFFSET, 0.0])  # noqa: E731
        return [Phase("move", k, waypoint), Phase("move", k, _item_pos(name)), Phase("grip", k, close=True, steps=2)]

    def _place_phases(self, k: int, target) -> list[Phase]:
        return [Phase("move", k, target), Phase("grip", k, close=False, steps=2)]

    def _holding(self, world: World) -> tuple[int, str] | None:
        for k, arm in enumerate(world.arms):
            if arm.held:
                return k, world.items[arm.held[0]].name
        return None

    def _needs_drive(self, world: World) -> bool:
        return self.spec.mobile_base and float(np.max(np.abs(world.base - self.working_base(world)))) > 1e-9


class Reach(Task):
    name = "reach"
    embodiments = ("arm", "arm_1cam", "dual", "mobile")
    max_steps = 200

    def make_world(self, rng):
        w = self._base_world(rng, bins=False)
        ylim = (0.75, 0.95) if self.spec.mobile_base else (0.35, 0.85)
        while True:
            p = self._sample_points(rng, w, 1, (-0.6, 0.6), ylim, approach=False)[0]
            # a target under the resting gripper would give an empty demonstration
            if min(np.linalg.norm(w.ee(k) - p) for k in range(len(w.arms))) > 2 * AT_TOL:
                break
        w.items.append(Item("target", "target", p, graspable=False))
        return w

    def prompt(self, world):
        return "reach target"

    def _reached(self, world):
        p = world.item("target").pos
        return any(np.linalg.norm(world.ee(k) - p) <= AT_TOL for k in range(len(world.arms)))

    def rubric(self, world):
        return Rubric([Checkpoint("at target", self._reached)])

    def subcommand(self, world):
        if self._needs_drive(world):
            return "drive base"
        return "done" if self._reached(world) else "reach target"

    def skill(self, world, command, rng):
        if command == "drive base":
            return SkillState(command, self._drive_phases(world))
        k = self.arm_for(world, world.item("target").pos)
        return SkillState(command, [Phase("move", k, _item_pos("target"))])


class PickPlace(Task):
    name = "pick_place"
    embodiments = ("arm", "arm_1cam", "dual", "mobile")
    max_steps = 300

    def make_world(self, rng):
        w = self._base_world(rng)
        ylim = (0.75, 0.95) if self.spec.mobile_base else (0.45, 0.85)
        p = self._sample_points(rng, w, 1, (-0.5, 0.5), ylim)[0]
        if self.spec.num_arms == 2:
            color = rng.choice(["red", "yellow"] if p[0] < 0 else ["green", "blue"])
        else:
            color = rng.choice(COLORS)
        w.items.append(Item(str(color), "object", p))
        return w

    def _obj(self, world):
        return world.items[0].name

    def prompt(self, world):
        return f"pick place {self._obj(world)}"

    def rubric(self, world):
        o = self._obj(world)
        return Rubric([
            Checkpoint(f"grasp {o}", lambda w: _held(w, o)),
            Checkpoint(f"{o} in {BIN_OF[o]}", lambda w: _in_bin(w, o, BIN_OF[o])),
        ])

    def subcommand(self, world):
        o = self._obj(world)
        if self._needs_drive(world):
            return "drive base"
        if _held(world, o):
            return f"place {BIN_OF[o]}"
        if _in_bin(world, o, BIN_OF[o]):
            return "done"
        return f"pick {o}"

    def skill(self, world, command, rng):
        verb, _, arg = command.partition(" ")
        if command == "drive base":
            return SkillState(command, self._drive_phases(world))
        if verb == "pick":
            side = int(rng.choice([-1, 1]))
            return SkillState(command, self._pick_phases(world, arg, side), info={"side": side})
        if verb == "place":
            k, _ = self._holding(world)
            return SkillState(command, self._place_phases(k, _fixed(BIN_CENTERS[arg])))
        raise ValueError(f"{self.name}: unsupported subcommand {command!r}")


class Sort(PickPlace):
    name = "sort"
    embodiments = ("arm", "arm_1cam")
    max_steps = 600
    num_objects = 2

    def make_world(self, rng):
        w = self._base_world(rng)
        pts = self._sample_points(rng, w, self.num_objects, (-0.5, 0.5), (0.45, 0.9))
        if self.num_objects == 4:
            colors = list(COLORS)
        else:
            colors = [str(rng.choice(["red", "yellow"])), str(rng.choice(["green", "blue"]))]
        order = rng.permutation(len(colors))
        for p, i in zip(pts, order):
            w.items.append(Item(colors[i], "object", p))
        return w

    def _objects(self, world):
        return [c for c in COLORS if any(it.name == c for it in world.items)]

    def prompt(self, world):
        return "sort"

    def rubric(self, world):
        return Rubric([Checkpoint(f"{o} in {BIN_OF[o]}", lambda w, o=o: _in_bin(w, o, BIN_OF[o]))
                       for o in self._objects(world)])

    def subcommand(self, world):
        held = self._holding(world)
        if held is not None:
            return f"place {BIN_OF[held[1]]}"
        for o in self._objects(world):
            if not _in_bin(world, o, BIN_OF[o]):
                return f"pick {o}"
        return "done"


class Sort4(Sort):
    name = "sort4"
    max_steps = 1200
    num_objects = 4


class Stack(PickPlace):
    name = "stack"
    embodiments = ("arm", "arm_1cam")
    max_steps = 300

    def make_world(self, rng):
        w = self._base_world(rng, bins=False)
        pts = self._sample_points(rng, w, 2, (-0.5, 0.5), (0.45, 0.85), min_sep=0.3)
        top, bottom = rng.choice(COLORS, size=2, replace=False)
        w.items += [Item(str(top), "block", pts[0]), Item(str(bottom), "block", pts[1], graspable=False)]
        return w

    def prompt(self, world):
        return f"stack {world.items[0].name} on {world.items[1].name}"

    def _stacked(self, world):
        top, bottom = world.items[0].name, world.items[1].name
        return not _held(world, top) and _near(world, top, bottom)

    def rubric(self, world):
        top = world.items[0].name
        return Rubric([Checkpoint(f"grasp {top}", lambda w: _held(w, top)), Checkpoint("stacked", self._stacked)])

    def subcommand(self, world):
        top, bottom = world.items[0].name, world.items[1].name
        if _held(world, top):
            return f"place on {bottom}"
        return "done" if self._stacked(world) else f"pick {top}"

    def skill(self, world, command, rng):
        if command.startswith("place on "):
            k, _ = self._holding(world)
            return SkillState(command, self._place_phases(k, _item_pos(command.split()[-1])))
        return super().skill(world, command, rng)


class Fold(Task):
    """Towel as a 4-point chain; fold the right end onto the left end, then fold again."""

    name = "fold"
    embodiments = ("arm", "arm_1cam", "dual")
    max_steps = 400
    spacing = 0.22

    def make_world(self, rng):
        w = self._base_world(rng, bins=False)
        for _ in range(1000):
            c = np.array([rng.uniform(-0.05, 0.05), rng.uniform(0.45, 0.6)])
            pts = [c + np.array([(i - 1.5) * self.spacing, 0.0]) for i in range(4)]
            if all(reachable(w.shoulder(k), p, 0.05) for p in pts[::3] for k in self._fold_arms(w)):
                break
        else:
            raise RuntimeError("could not place a reachable towel")
        w.items += [Item(f"p{i}", "towel", p) for i, p in enumerate(pts)]
        return w

    def _fold_arms(self, world):
        return (1, 0) if len(world.arms) == 2 else (0, 0)

    def prompt(self, world):
        return "fold towel"

    def _fold1(self, world):
        return not _held(world, "p3") and _near(world, "p3", "p0")

    def _fold2(self, world):
        return not _held(world, "p0") and _near(world, "p0", "p1") and _near(world, "p3", "p1")

    def rubric(self, world):
        return Rubric([Checkpoint("first fold", self._fold1), Checkpoint("second fold", self._fold2)])

    def subcommand(self, world):
        # progress is read from the chain geometry, which persists after release
        if self._fold2(world):
            return "done"
        if self._fold1(world) or _held(world, "p0"):
            return "fold again"
        return "fold half"

    def skill(self, world, command, rng):
        first, second = self._fold_arms(world)
        if command == "fold half":
            p0, p3 = world.item("p0").pos.copy(), world.item("p3").pos.copy()
            lift = (p0 + p3) / 2 + np.array([0.0, 0.2])
            side = int(rng.choice([-1, 1]))
            phases = self._pick_phases(world, "p3", side)
            for ph in phases:
                ph.arm = first
            phases += [Phase("move", first, _fixed(lift))] + self._place_phases(first, _fixed(p0))
            return SkillState(command, phases, info={"side": side})
        if command == "fold again":
            phases = [Phase("move", second, _item_pos("p0")), Phase("grip", second, close=True, steps=2)]
            phases += self._place_phases(second, _fixed(world.item("p1").pos.copy()))
            return SkillState(command, phases)
        raise ValueError(f"{self.name}: unsupported subcommand {command!r}")


TASKS: dict[str, type[Task]] = {t.name: t for t in (Reach, PickPlace, Sort, Sort4, Stack, Fold)}


def make_task(name: str, spec: EmbodimentSpec) -> Task:
    try:
        cls = TASKS[name]
    except KeyError:
        raise KeyError(f"unknown task {name!r}; known: {sorted(TASKS)}") from None
    return cls(spec)
