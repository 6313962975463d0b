"""Interleaved two-condition classifier-free guidance and the sampling loop.

At every timestep one uniform draw picks the branch for the whole batch:

* reference branch: ``w_r * eps(x, c, ref[t - dt]) - (w_r - 1) * eps(x, c, none)``
* text branch:      ``w_c * eps(x, c, ref[t - dt]) - (w_c - 1) * eps(x, uc, ref[t + dt'])``

The draw and the reference noise are pure functions of ``(seed, step index)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import numpy as np

from .errors import ConfigError
from .numeric import Rng, no_grad
from .schedule import NoiseSchedule, ddim_step, ddim_timesteps, q_sample
from .sprites import MAX_LEN, uncond_ids
from .subject_encoder import remove_background

# stream tags under the guidance seed
_BRANCH_TAG = 0xB7
_REF_NOISE_TAG = 0x4E
_INIT_TAG = 0x17


@dataclass(frozen=True)
class GuidanceConfig:
    omega_r: float = 2.0
    omega_c: float = 3.0
    p_r: float = 0.9
    dt_minus: int = 0
    dt_plus: int = 0
    uncond: tuple[int, ...] = tuple(int(i) for i in uncond_ids())

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_r <= 1.0:
            raise ConfigError(f"p_r must lie in [0, 1], got {self.p_r}")
        if self.omega_r < 1.0 or self.omega_c < 1.0:
            raise ConfigError("guidance scales must be >= 1")
        if self.dt_minus < 0 or self.dt_plus < 0:
            raise ConfigError("reference time offsets must be >= 0")
        if len(self.uncond) != MAX_LEN:
            raise ConfigError(f"uncond must have {MAX_LEN} token ids")

    def uncond_ids(self) -> np.ndarray:
        return np.asarray(self.uncond, dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "omega_r": self.omega_r,
            "omega_c": self.omega_c,
            "p_r": self.p_r,
            "dt_minus": self.dt_minus,
            "dt_plus": self.dt_plus,
            "uncond": list(self.uncond),
        }

    @classmethod
    def from_dict(cls, d: dict) -> GuidanceConfig:
        return cls(
            float(d["omega_r"]),
            float(d["omega_c"]),
            float(d["p_r"]),
            int(d["dt_minus"]),
            int(d["dt_plus"]),
            tuple(int(i) for i in d["uncond"]),
        )


class EpsModel(Protocol):
    """``model(x, t, ids, ref_noised, t_ref)``; ``ref_noised=None`` means no reference context."""

    def __call__(self, x: np.ndarray, t: int, ids: np.ndarray, ref_noised: np.ndarray | None, t_ref: int | None) -> np.ndarray: ...


def clamp_t(t: int, sched: NoiseSchedule) -> int:
    return int(min(max(t, 0), sched.T - 1))


def noise_reference(ref_clean: np.ndarray, t: int, offset: int, sched: NoiseSchedule, rng: Rng | None = None, eps=None):
    """Forward-diffuse the clean reference to ``clamp(t + offset)``.

    Returns ``(noised, t_used)``. ``eps`` may be passed to share one noise draw
    between several offsets; otherwise it is drawn from ``rng``.
    """
    t_used = clamp_t(t + offset, sched)
    if eps is None:
        if rng is None:
            raise ConfigError("noise_reference needs an rng or explicit eps")
        eps = rng.normal(np.shape(ref_clean))
    return q_sample(ref_clean, t_used, eps, sched), t_used


def branch_draw(seed: int, step: int) -> float:
    """The uniform draw deciding the branch at sampling step ``step``."""
    return Rng(seed).fork(_BRANCH_TAG, step).uniform()


def guided_eps(
    x_t: np.ndarray,
    t: int,
    cond: np.ndarray,
    ref_clean: np.ndarray | None,
    cfg: GuidanceConfig,
    model: EpsModel,
    sched: NoiseSchedule,
    seed: int,
    step: int,
) -> tuple[np.ndarray, str]:
    """Guided noise prediction for one timestep; returns (eps, branch name).

    Model evaluations whose coefficient is zero are skipped, so the unit
    guidance scales cost a single call. With ``ref_clean=None`` every step
    takes the text branch (plain classifier-free guidance).
    """
    lam = branch_draw(seed, step)
    ref_eps = Rng(seed).fork(_REF_NOISE_TAG, step).normal(np.shape(ref_clean)) if ref_clean is not None else None

    def with_ref(ids, offset):
        if ref_clean is None:
            return model(x_t, t, ids, None, None)
        noised, t_ref = noise_reference(ref_clean, t, offset, sched, eps=ref_eps)
        return model(x_t, t, ids, noised, t_ref)

    main = with_ref(cond, -cfg.dt_minus)
    # without a reference image only the text branch is defined
    if lam <= cfg.p_r and ref_clean is not None:
        if cfg.omega_r == 1.0:
            return main, "reference"
        other = model(x_t, t, cond, None, None)
        return cfg.omega_r * main - (cfg.omega_r - 1.0) * other, "reference"
    if cfg.omega_c == 1.0:
        return main, "text"
    other = with_ref(cfg.uncond_ids(), cfg.dt_plus)
    return cfg.omega_c * main - (cfg.omega_c - 1.0) * other, "text"


# -- sampling ------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplerConfig:
    """Inference switches layered on top of the guidance scales."""

    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    steps: int = 25
    beta: float = 0.2
    omega_ref: float = 2.5
    use_subject_encoder: bool = True
    use_reference_attention: bool = True
    use_mask: bool = True

    def __post_init__(self) -> None:
        if self.steps <= 0:
            raise ConfigError("steps must be positive")
        if self.beta < 0 or self.omega_ref < 0:
            raise ConfigError("beta and omega_ref must be >= 0")

    def replace(self, **kw) -> SamplerConfig:
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "guidance": self.guidance.to_dict(),
            "steps": self.steps,
            "beta": self.beta,
            "omega_ref": self.omega_ref,
            "use_subject_encoder": self.use_subject_encoder,
            "use_reference_attention": self.use_reference_attention,
            "use_mask": self.use_mask,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SamplerConfig:
        return cls(
            GuidanceConfig.from_dict(d["guidance"]),
            int(d["steps"]),
            float(d["beta"]),
            float(d["omega_ref"]),
            bool(d["use_subject_encoder"]),
            bool(d["use_reference_attention"]),
            bool(d["use_mask"]),
        )


PRESETS = {
    "natural": {"beta": 0.2, "omega_ref": 3.0},
    "anime": {"beta": 0.2, "omega_ref": 2.5},
}


@dataclass(frozen=True)
class Reference:
    """A subject reference: image, exact foreground mask and its own caption ids."""

    image: np.ndarray  # [3, 32, 32]
    mask: np.ndarray  # [1, 32, 32]
    ids: np.ndarray  # [MAX_LEN]

    @property
    def clean(self) -> np.ndarray:
        return remove_background(self.image, self.mask)


def make_eps_model(model, reference: Reference | None, cfg: SamplerConfig) -> EpsModel:
    """Bind a SpriteDiffusion, subject features and reference settings into an ``EpsModel``."""
    subject = None
    if reference is not None and cfg.use_subject_encoder:
        with no_grad():
            subject = model.subject_features(reference.clean[None], cfg.beta)
    mask = reference.mask[None] if (reference is not None and cfg.use_mask) else None
    ref_ids = reference.ids[None] if reference is not None else None

    def eps(x, t, ids, ref_noised, t_ref):
        with no_grad():
            ctx = None
            if ref_noised is not None:
                ctx = model.reference_context(ref_noised[None], t_ref, ref_ids, subject, mask, cfg.omega_ref)
            ids = np.broadcast_to(np.asarray(ids), (x.shape[0], MAX_LEN))
            return model.eps(x, t, ids, subject, ctx).data

    return eps


def initial_noise(seeds) -> np.ndarray:
    return np.stack([Rng(int(s)).fork(_INIT_TAG).normal((3, 32, 32)) for s in seeds])


def sample(
    model,
    prompt_ids: np.ndarray,
    seeds,
    cfg: SamplerConfig,
    reference: Reference | None = None,
    eps_model: EpsModel | None = None,
    progress: Callable[[int, str], None] | None = None,
) -> np.ndarray:
    """DDIM sampling (eta = 0) of one image per seed; returns [len(seeds), 3, 32, 32].

    The batch shares its branch sequence, which is driven by the first seed.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigError("need at least one seed")
    sched = model.schedule
    use_ref = reference is not None and cfg.use_reference_attention
    ref_clean = reference.clean if use_ref else None
    eps_model = eps_model or make_eps_model(model, reference, cfg)
    x = initial_noise(seeds)
    ts = ddim_timesteps(sched.T, cfg.steps)
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else -1
        e, branch = guided_eps(x, t, prompt_ids, ref_clean, cfg.guidance, eps_model, sched, seeds[0], i)
        x = ddim_step(x, e, t, t_prev, sched)
        if progress is not None:
            progress(i, branch)
    return x
