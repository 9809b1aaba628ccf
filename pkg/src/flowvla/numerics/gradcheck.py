"""Finite-difference gradient oracle."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import ShapeError, Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise.

    ``floor`` keeps coordinates whose true gradient is ~0 from dominating
    through finite-difference rounding noise.
    """
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def numeric_grad(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn()`` with respect to every entry of ``param``."""
    flat = param.data.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _scalar(fn())
        flat[i] = orig - h
        fm = _scalar(fn())
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(param.shape)


def grad_check(
    fn: Callable[[], Tensor],
    params: Tensor | dict[str, Tensor],
    h: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Worst relative error between backward-pass and central-difference gradients.

    ``fn`` rebuilds the scalar graph from the current parameter values; it is
    called once for the analytic pass and twice per coordinate. Parameters are
    perturbed in place and restored.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"grad_check: step h={h} outside [1e-7, 1e-3]")
    named = params if isinstance(params, dict) else {"param": params}
    for name, p in named.items():
        if p.dtype != np.float64:
            raise TypeError(f"grad_check: parameter {name!r} must be float64, got {p.dtype}")
        p.requires_grad = True
        p.zero_grad()
    out = fn()
    if out.data.size != 1:
        raise ShapeError(f"grad_check: output must be scalar, got shape {out.shape}")
    out.backward()
    worst = 0.0
    for name, p in named.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = numeric_grad(fn, p, h)
        if analytic.size:
            worst = max(worst, float(relative_error(analytic, numeric, floor).max()))
    return worst


def _scalar(t: Tensor) -> float:
    if t.data.size != 1:
        raise ShapeError(f"grad_check: output must be scalar, got shape {t.shape}")
    return float(t.data.reshape(()))
