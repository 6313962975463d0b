"""Adam with per-group learning rates and serializable state."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class ParamGroup:
    params: list[Tensor]
    lr: float
    names: list[str] = field(default_factory=list)


class Adam:
    """Bias-corrected Adam. Parameters whose ``grad`` is None are skipped.

    ``mask_rows`` restricts one group's update of a parameter to selected
    rows, so a single tensor can be split across groups with different
    learning rates (one embedding row fast, the rest slow).
    """

    def __init__(
        self,
        groups: list[ParamGroup],
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.groups = groups
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m: list[list[np.ndarray]] = [[np.zeros_like(p.data) for p in g.params] for g in groups]
        self.v: list[list[np.ndarray]] = [[np.zeros_like(p.data) for p in g.params] for g in groups]
        self.row_masks: dict[tuple[int, int], np.ndarray] = {}

    def mask_rows(self, group: int, param: Tensor, rows) -> None:
        pi = next(i for i, p in enumerate(self.groups[group].params) if p is param)
        mask = np.zeros((param.shape[0],) + (1,) * (param.ndim - 1))
        mask[list(rows)] = 1.0
        self.row_masks[(group, pi)] = mask

    def zero_grad(self) -> None:
        for g in self.groups:
            for p in g.params:
                p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.b1**t
        c2 = 1.0 - self.b2**t
        for gi, g in enumerate(self.groups):
            for pi, p in enumerate(g.params):
                if p.grad is None:
                    continue
                grad = p.grad
                mask = self.row_masks.get((gi, pi))
                if mask is not None:
                    grad = grad * mask
                m = self.m[gi][pi]
                v = self.v[gi][pi]
                m *= self.b1
                m += (1.0 - self.b1) * grad
                v *= self.b2
                v += (1.0 - self.b2) * grad * grad
                upd = g.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
                if mask is not None:
                    upd = upd * mask
                p.data = p.data - upd

    def state_dict(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"step": np.array([float(self.step_count)])}
        for gi, g in enumerate(self.groups):
            for pi in range(len(g.params)):
                out[f"m.{gi}.{pi}"] = self.m[gi][pi]
                out[f"v.{gi}.{pi}"] = self.v[gi][pi]
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.step_count = int(state["step"][0])
        for gi, g in enumerate(self.groups):
            for pi in range(len(g.params)):
                self.m[gi][pi] = np.array(state[f"m.{gi}.{pi}"], dtype=np.float64)
                self.v[gi][pi] = np.array(state[f"v.{gi}.{pi}"], dtype=np.float64)
