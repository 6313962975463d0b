"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(
    f: Callable[[], Tensor],
    leaf: Tensor,
    step: float = 1e-5,
    coords: Sequence[int] | None = None,
) -> np.ndarray:
    """d f() / d leaf at flat ``coords`` (all coordinates by default)."""
    flat = leaf.data.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    out = np.zeros(len(idx))
    for n, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + step
        up = f().item()
        flat[i] = orig - step
        down = f().item()
        flat[i] = orig
        out[n] = (up - down) / (2.0 * step)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(
    f: Callable[[], Tensor],
    leaves: Sequence[Tensor],
    step: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst relative error between autodiff and finite differences over ``leaves``."""
    for leaf in leaves:
        leaf.grad = None
    f().backward()
    worst = 0.0
    for leaf in leaves:
        analytic = np.zeros(leaf.size) if leaf.grad is None else leaf.grad.reshape(-1)
        coords = None
        if max_coords is not None and leaf.size > max_coords:
            gen = rng if rng is not None else np.random.default_rng(0)
            coords = np.sort(gen.choice(leaf.size, max_coords, replace=False))
        num = numeric_grad(f, leaf, step, coords)
        ana = analytic if coords is None else analytic[coords]
        worst = max(worst, relative_error(ana, num))
    return worst
