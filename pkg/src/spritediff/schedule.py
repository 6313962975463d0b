"""Linear beta schedule, forward noising and the DDIM / ancestral reverse steps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numeric import Rng, ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray
    beta_start: float = 0.0
    beta_end: float = 0.0

    def check_t(self, t: int) -> None:
        if not 0 <= t < self.T:
            raise IndexError(f"timestep {t} outside [0, {self.T})")

    def to_dict(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end}

    @classmethod
    def from_dict(cls, d: dict) -> NoiseSchedule:
        return make_schedule(int(d["T"]), float(d["beta_start"]), float(d["beta_end"]))


# the common 1e-4..0.02 endpoints are tuned for 1000 steps; scaled by 1000 / T
# they keep the same terminal noise level (alpha_bar[-1] ~ 2e-5) at T = 100
DEFAULT_T = 100
DEFAULT_BETA_START = 1e-3
DEFAULT_BETA_END = 0.2


def make_schedule(
    T: int = DEFAULT_T, beta_start: float = DEFAULT_BETA_START, beta_end: float = DEFAULT_BETA_END
) -> NoiseSchedule:
    """Betas linearly spaced from ``beta_start`` to ``beta_end`` over ``T`` steps."""
    if T <= 0:
        raise ConfigError(f"T must be positive, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.full(1, beta_start) if T == 1 else np.linspace(beta_start, beta_end, T)
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(T, beta, alpha_bar, float(beta_start), float(beta_end))


def _ab(sched: NoiseSchedule, t: int) -> float:
    """Cumulative signal coefficient; ``t == -1`` denotes clean data (1.0)."""
    if t == -1:
        return 1.0
    sched.check_t(t)
    return float(sched.alpha_bar[t])


def q_sample(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Draw from q(x_t | x_0) given the noise explicitly."""
    if np.shape(x0) != np.shape(eps):
        raise ShapeError(f"q_sample: x0 {np.shape(x0)} vs eps {np.shape(eps)}")
    ab = _ab(sched, t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def predict_x0(x_t: np.ndarray, eps_hat: np.ndarray, ab: float) -> np.ndarray:
    return (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def ddim_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    t_prev: int,
    sched: NoiseSchedule,
    clip: bool = True,
) -> np.ndarray:
    """Deterministic (eta = 0) DDIM update from ``t`` to ``t_prev``.

    ``t_prev = -1`` lands on clean data. The predicted x0 is clamped to
    [-1, 1] when ``clip`` is set.
    """
    ab_t = _ab(sched, t)
    if t_prev == t:
        return np.array(x_t, copy=True)
    if t_prev > t:
        raise IndexError(f"t_prev {t_prev} must not exceed t {t}")
    ab_prev = _ab(sched, t_prev)
    x0 = predict_x0(x_t, eps_hat, ab_t)
    if clip:
        x0 = np.clip(x0, -1.0, 1.0)
        eps_hat = (x_t - np.sqrt(ab_t) * x0) / np.sqrt(1.0 - ab_t) if ab_t < 1.0 else eps_hat
    return np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps_hat


def posterior_mean_var(
    x_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule, clip: bool = True
) -> tuple[np.ndarray, float]:
    """Mean and variance of q(x_{t-1} | x_t, x0_pred) with beta-tilde variance."""
    ab_t = _ab(sched, t)
    ab_prev = _ab(sched, t - 1)
    beta_t = float(sched.beta[t])
    x0 = predict_x0(x_t, eps_hat, ab_t)
    if clip:
        x0 = np.clip(x0, -1.0, 1.0)
    c0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    ct = np.sqrt(1.0 - beta_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    var = beta_t * (1.0 - ab_prev) / (1.0 - ab_t)
    return c0 * x0 + ct * x_t, var


def ddpm_step(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    sched: NoiseSchedule,
    rng: Rng,
    clip: bool = True,
) -> np.ndarray:
    """Ancestral step t -> t-1; no noise is injected at ``t == 0``."""
    mean, var = posterior_mean_var(x_t, eps_hat, t, sched, clip)
    if t == 0:
        return mean
    return mean + np.sqrt(var) * rng.normal(np.shape(x_t))


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """Descending, evenly spaced timesteps ending at 0."""
    if steps <= 0:
        raise ConfigError("need at least one sampling step")
    steps = min(steps, T)
    ts = np.round(np.linspace(T - 1, 0, steps)).astype(int)
    return sorted(set(int(t) for t in ts), reverse=True)
