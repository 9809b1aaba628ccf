"""2-D tabletop worlds with planar two-link arms, snap-attach grasping and a
16x16 grayscale renderer."""

from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from ..embodiment import IMAGE_SIZE

LINKS = (0.55, 0.45)
JOINT_STEP = 0.025  # rad per unit action per control step; one 25-step chunk sweeps ~0.6 units
BASE_STEP = 0.02  # world units per unit action per control step
GRASP_RADIUS = 0.15
STACK_RADIUS = 0.05
GRIP_CLOSE = 0.5  # grip command above this closes, below -this opens

INTENSITY = {"red": 1.0, "green": 0.85, "blue": 0.7, "yellow": 0.55, "target": 0.9, "towel": 0.7}

ITEM_SIGMA = 0.12

OVERHEAD_WINDOW = ((-1.2, 1.2), (-0.45, 1.25))
WRIST_HALF = 0.4


@dataclass
class Arm:
    mount: np.ndarray  # shoulder offset from the base
    angles: np.ndarray
    closed: bool = False
    held: list[int] = field(default_factory=list)


@dataclass
class Item:
    name: str
    kind: str  # object | block | target | towel
    pos: np.ndarray
    graspable: bool = True

    @property
    def intensity(self) -> float:
        return INTENSITY["towel"] if self.kind == "towel" else INTENSITY[self.name]


@dataclass
class Bin:
    name: str
    center: np.ndarray
    half: float = 0.16

    def contains(self, p: np.ndarray) -> bool:
        return bool(np.all(np.abs(p - self.center) <= self.half))


@dataclass
class World:
    base: np.ndarray
    arms: list[Arm]
    items: list[Item]
    bins: list[Bin]
    t: int = 0

    def copy(self) -> "World":
        return copy.deepcopy(self)

    def item(self, name: str) -> Item:
        for it in self.items:
            if it.name == name:
                return it
        raise KeyError(f"no item named {name!r}")

    def item_index(self, name: str) -> int:
        for i, it in enumerate(self.items):
            if it.name == name:
                return i
        raise KeyError(f"no item named {name!r}")

    def bin(self, name: str) -> Bin:
        for b in self.bins:
            if b.name == name:
                return b
        raise KeyError(f"no bin named {name!r}")

    def holder(self, index: int) -> int | None:
        for k, arm in enumerate(self.arms):
            if index in arm.held:
                return k
        return None

    def shoulder(self, k: int) -> np.ndarray:
        return self.base + self.arms[k].mount

    def ee(self, k: int) -> np.ndarray:
        return forward_kinematics(self.shoulder(k), self.arms[k].angles)

    def state_vector(self, mobile_base: bool) -> np.ndarray:
        parts = []
        for arm in self.arms:
            parts += [arm.angles[0], arm.angles[1], 1.0 if arm.closed else -1.0]
        if mobile_base:
            parts += list(self.base)
        return np.array(parts, dtype=np.float64)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.base, dtype=np.float64).tobytes())
        for arm in self.arms:
            h.update(np.asarray(arm.angles, dtype=np.float64).tobytes())
            h.update(bytes([arm.closed]) + str(arm.held).encode())
        for it in self.items:
            h.update(it.name.encode() + np.asarray(it.pos, dtype=np.float64).tobytes())
        return h.hexdigest()


# -- kinematics ----------------------------------------------------------

def forward_kinematics(shoulder: np.ndarray, angles: np.ndarray, links=LINKS) -> np.ndarray:
    t1, t2 = angles
    l1, l2 = links
    return shoulder + np.array([
        l1 * math.cos(t1) + l2 * math.cos(t1 + t2),
        l1 * math.sin(t1) + l2 * math.sin(t1 + t2),
    ])


def elbow(shoulder: np.ndarray, angles: np.ndarray, links=LINKS) -> np.ndarray:
    return shoulder + links[0] * np.array([math.cos(angles[0]), math.sin(angles[0])])


class UnreachableError(ValueError):
    pass


def inverse_kinematics(shoulder: np.ndarray, target: np.ndarray, reference: np.ndarray | None = None,
                       links=LINKS) -> np.ndarray:
    """Elbow-up joint angles placing the end effector at ``target``.

    ``reference`` (current angles) picks the 2*pi branch of the shoulder angle
    closest to the current pose.
    """
    l1, l2 = links
    d = np.asarray(target, dtype=np.float64) - shoulder
    r2 = float(d @ d)
    c = (r2 - l1 * l1 - l2 * l2) / (2 * l1 * l2)
    if c < -1.0 - 1e-9 or c > 1.0 + 1e-9:
        raise UnreachableError(f"target {np.round(target, 3)} is out of reach from {np.round(shoulder, 3)}")
    t2 = -math.acos(min(1.0, max(-1.0, c)))
    t1 = math.atan2(d[1], d[0]) - math.atan2(l2 * math.sin(t2), l1 + l2 * math.cos(t2))
    if reference is not None:
        t1 += 2 * math.pi * round((reference[0] - t1) / (2 * math.pi))
    return np.array([t1, t2])


def reachable(shoulder: np.ndarray, target: np.ndarray, margin: float = 0.03, links=LINKS) -> bool:
    r = float(np.linalg.norm(np.asarray(target) - shoulder))
    return abs(links[0] - links[1]) + margin <= r <= links[0] + links[1] - margin


# -- dynamics ----------------------------------------------------------------

def step_world(world: World, action: np.ndarray, mobile_base: bool) -> World:
    """Integrate one control step in place and return ``world``.

    Per arm the action is ``[d_theta1, d_theta2, grip]``; a mobile base
    appends ``[dx, dy]``. Entries are clamped to [-1, 1].
    """
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    expected = 3 * len(world.arms) + (2 if mobile_base else 0)
    if a.shape != (expected,):
        raise ValueError(f"action must have shape ({expected},), got {a.shape}")
    if mobile_base:
        world.base = world.base + BASE_STEP * a[-2:]
    for k, arm in enumerate(world.arms):
        da = a[3 * k: 3 * k + 2]
        if np.any(da):
            arm.angles = arm.angles + JOINT_STEP * da
        grip = a[3 * k + 2]
        if grip > GRIP_CLOSE and not arm.closed:
            arm.closed = True
            arm.held = _grasp(world, k)
        elif grip < -GRIP_CLOSE and arm.closed:
            arm.closed = False
            arm.held = []
    for k, arm in enumerate(world.arms):
        if arm.held:
            p = world.ee(k)
            for i in arm.held:
                world.items[i].pos = p.copy()
    world.t += 1
    return world


def _grasp(world: World, k: int) -> list[int]:
    p = world.ee(k)
    best, best_d = None, GRASP_RADIUS
    for i, it in enumerate(world.items):
        if not it.graspable or world.holder(i) is not None:
            continue
        dist = float(np.linalg.norm(it.pos - p))
        if dist <= best_d:
            best, best_d = i, dist
    if best is None:
        return []
    anchor = world.items[best].pos
    return [i for i, it in enumerate(world.items)
            if it.graspable and world.holder(i) is None and np.linalg.norm(it.pos - anchor) <= STACK_RADIUS]


# -- rendering ---------------------------------------------------------------

def _pixel_grid(window, size: int = IMAGE_SIZE):
    (x0, x1), (y0, y1) = window
    xs = x0 + (np.arange(size) + 0.5) * (x1 - x0) / size
    ys = y1 - (np.arange(size) + 0.5) * (y1 - y0) / size  # row 0 is the top
    return np.meshgrid(xs, ys)


def _blobs(gx, gy, points: np.ndarray, values: np.ndarray, sigma: float) -> np.ndarray:
    if len(points) == 0:
        return np.zeros_like(gx)
    dx = gx[None] - points[:, 0, None, None]
    dy = gy[None] - points[:, 1, None, None]
    return (values[:, None, None] * np.exp(-(dx * dx + dy * dy) / (2 * sigma * sigma))).max(axis=0)


def render(world: World, window) -> np.ndarray:
    """Grayscale raster in [0, 1]; a pure function of the world state."""
    gx, gy = _pixel_grid(window)
    img = np.zeros_like(gx)
    for b, level in zip(world.bins, (0.1, 0.15, 0.12)):
        inside = (np.abs(gx - b.center[0]) <= b.half) & (np.abs(gy - b.center[1]) <= b.half)
        img = np.maximum(img, np.where(inside, level, 0.0))
    link_pts, link_vals = [], []
    for k, arm in enumerate(world.arms):
        s, e, p = world.shoulder(k), elbow(world.shoulder(k), arm.angles), world.ee(k)
        for u in np.linspace(0.0, 1.0, 6):
            link_pts += [s + u * (e - s), e + u * (p - e)]
        link_vals += [0.15] * 12
    img = np.maximum(img, _blobs(gx, gy, np.array(link_pts), np.array(link_vals), 0.05))
    towel = [it.pos for it in world.items if it.kind == "towel"]
    if len(towel) > 1:
        seg = [towel[i] + u * (towel[i + 1] - towel[i]) for i in range(len(towel) - 1) for u in np.linspace(0, 1, 5)]
        img = np.maximum(img, _blobs(gx, gy, np.array(seg), np.full(len(seg), 0.45), 0.05))
    items = [it for it in world.items]
    if items:
        img = np.maximum(img, _blobs(gx, gy, np.array([it.pos for it in items]),
                                     np.array([it.intensity for it in items]), ITEM_SIGMA))
    ees = np.array([world.ee(k) for k in range(len(world.arms))])
    grip = np.array([0.35 if arm.closed else 0.25 for arm in world.arms])
    img = np.maximum(img, _blobs(gx, gy, ees, grip, 0.06))
    return img


def camera_windows(world: World, num_cameras: int):
    """Overhead view first, then one wrist view per arm."""
    windows = [OVERHEAD_WINDOW]
    for k in range(num_cameras - 1):
        c = world.ee(k % len(world.arms))
        windows.append(((c[0] - WRIST_HALF, c[0] + WRIST_HALF), (c[1] - WRIST_HALF, c[1] + WRIST_HALF)))
    return windows


def render_cameras(world: World, num_cameras: int) -> np.ndarray:
    return np.stack([render(world, w) for w in camera_windows(world, num_cameras)])
