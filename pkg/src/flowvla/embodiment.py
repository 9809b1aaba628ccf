"""Embodiment registry and the cross-embodiment padding schema."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model.observation import ActionChunk, Observation

D_MAX = 8
N_IMAGE_SLOTS = 3
IMAGE_SIZE = 16


@dataclass(frozen=True)
class EmbodimentSpec:
    name: str
    action_dim: int
    state_dim: int
    num_cameras: int
    control_hz: int
    num_arms: int = 1
    mobile_base: bool = False

    def __post_init__(self):
        if self.action_dim < 1 or self.state_dim < 1:
            raise ValueError(f"{self.name}: dims must be positive")
        if self.action_dim > D_MAX or self.state_dim > D_MAX:
            raise ValueError(f"{self.name}: dims must not exceed d_max={D_MAX}")
        if not 1 <= self.num_cameras <= N_IMAGE_SLOTS:
            raise ValueError(f"{self.name}: num_cameras must be in 1..{N_IMAGE_SLOTS}")


REGISTRY: dict[str, EmbodimentSpec] = {}


def register(spec: EmbodimentSpec) -> EmbodimentSpec:
    if spec.name in REGISTRY:
        raise ValueError(f"embodiment {spec.name!r} already registered")
    REGISTRY[spec.name] = spec
    return spec


ARM = register(EmbodimentSpec("arm", action_dim=3, state_dim=3, num_cameras=2, control_hz=50))
DUAL = register(EmbodimentSpec("dual", action_dim=6, state_dim=6, num_cameras=3, control_hz=50, num_arms=2))
MOBILE = register(EmbodimentSpec("mobile", action_dim=8, state_dim=8, num_cameras=3, control_hz=50,
                                 num_arms=2, mobile_base=True))
ARM_1CAM = register(EmbodimentSpec("arm_1cam", action_dim=3, state_dim=3, num_cameras=1, control_hz=20))


def get(name: str) -> EmbodimentSpec:
    try:
        return REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown embodiment {name!r}; known: {sorted(REGISTRY)}") from None


def dim_mask(dim: int, d_max: int = D_MAX) -> np.ndarray:
    if dim > d_max:
        raise ValueError(f"dimension {dim} exceeds d_max={d_max}")
    m = np.zeros(d_max, dtype=bool)
    m[:dim] = True
    return m


def pad_vector(x: np.ndarray, d_max: int = D_MAX) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] > d_max:
        raise ValueError(f"vector of length {x.shape[-1]} exceeds d_max={d_max}")
    out = np.zeros(x.shape[:-1] + (d_max,), dtype=np.float64)
    out[..., : x.shape[-1]] = x
    return out


def pad_images(images: np.ndarray, n_slots: int = N_IMAGE_SLOTS) -> tuple[np.ndarray, np.ndarray]:
    """(cams, S, S) -> (n_slots, S, S) plus present flags; missing slots are zero and flagged false."""
    cams = images.shape[0]
    if cams > n_slots:
        raise ValueError(f"{cams} cameras exceed {n_slots} image slots")
    out = np.zeros((n_slots,) + images.shape[1:], dtype=np.float64)
    out[:cams] = images
    present = np.zeros(n_slots, dtype=bool)
    present[:cams] = True
    return out, present


def pad_and_mask(
    images: np.ndarray,
    tokens: np.ndarray,
    state: np.ndarray,
    actions: np.ndarray | None = None,
    d_max: int = D_MAX,
    n_images: int = N_IMAGE_SLOTS,
) -> tuple[Observation, ActionChunk | None]:
    """Zero-pad state/action to ``d_max`` and images to ``n_images`` slots."""
    if actions is not None and actions.shape[-1] > d_max:
        raise ValueError(f"action dim {actions.shape[-1]} exceeds d_max={d_max}")
    slots, present = pad_images(np.asarray(images), n_images)
    obs = Observation(
        images=slots,
        image_present=present,
        tokens=np.asarray(tokens, dtype=np.int64),
        state=pad_vector(state, d_max),
        state_mask=dim_mask(len(state), d_max),
    )
    chunk = None
    if actions is not None:
        actions = np.atleast_2d(actions)
        chunk = ActionChunk(pad_vector(actions, d_max), dim_mask(actions.shape[-1], d_max))
    return obs, chunk


def unpad(padded: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.asarray(padded)[..., np.asarray(mask, dtype=bool)]
