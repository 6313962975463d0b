"""The full generator: schedule, text encoder, U-Net and subject encoder."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .attention import SubjectFeatures
from .denoiser import DenoiserConfig, ReferenceContext, TextEncoder, UNet, denoise, extract_reference_features
from .errors import ConfigError
from .numeric import Module, Rng, Tensor, no_grad
from .schedule import DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_T, NoiseSchedule, make_schedule
from .subject_encoder import EncoderConfig, SubjectEncoder, encode_subject

# parameter groups, by name prefix
FIXED_PREFIXES = ("unet.layout_proj.",)
ENCODER_BACKBONE = "encoder.backbone."
ENCODER_ADAPTER = "encoder.adapter."


def _sea_prefix(name: str) -> bool:
    return name.startswith("unet.") and ".sea." in name


@dataclass
class ModelConfig:
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    T: int = DEFAULT_T
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    seed: int = 0

    def __post_init__(self) -> None:
        if self.encoder.out_dim != self.denoiser.se_dim:
            raise ConfigError("encoder.out_dim must equal denoiser.se_dim")

    def to_dict(self) -> dict:
        return {
            "denoiser": self.denoiser.to_dict(),
            "encoder": self.encoder.to_dict(),
            "T": self.T,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(
            DenoiserConfig.from_dict(d["denoiser"]),
            EncoderConfig.from_dict(d["encoder"]),
            int(d["T"]),
            float(d["beta_start"]),
            float(d["beta_end"]),
            int(d["seed"]),
        )


class SpriteDiffusion(Module):
    """Everything a checkpoint holds besides optimizer state."""

    def __init__(self, cfg: ModelConfig):
        rng = Rng(cfg.seed)
        dc = cfg.denoiser
        self.unet = UNet(dc, rng.fork(1))
        self.text = TextEncoder(dc.text_dim, dc.heads, rng.fork(2))
        self.encoder = SubjectEncoder(cfg.encoder, rng.fork(3))
        self._cfg = cfg
        self._schedule = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)

    @property
    def cfg(self) -> ModelConfig:
        return self._cfg

    @property
    def schedule(self) -> NoiseSchedule:
        return self._schedule

    def encode_text(self, ids) -> Tensor:
        return self.text(ids)

    def subject_features(self, ref_clean, beta: float) -> SubjectFeatures:
        return encode_subject(ref_clean, self.encoder, beta)

    def eps(self, x, t, ids, subject=None, ref: ReferenceContext | None = None, layout=None) -> Tensor:
        return denoise(self.unet, x, t, self.encode_text(ids), subject, ref, layout)

    def reference_context(self, x_ref_noised, t, ref_ids, subject=None, mask=None, omega_ref: float = 1.0):
        with no_grad():
            text = self.encode_text(ref_ids)
        return extract_reference_features(self.unet, x_ref_noised, t, text, subject, mask, omega_ref)

    # -- parameter groups -------------------------------------------------------------
    def param_names(self, group: str) -> list[str]:
        """Names for one of: base, encoder_backbone, adapter, sea, fixed, finetune."""
        names = [n for n, _ in self.named_parameters()]
        fixed = [n for n in names if n.startswith(FIXED_PREFIXES)]
        if group == "fixed":
            return fixed
        if group == "encoder_backbone":
            return [n for n in names if n.startswith(ENCODER_BACKBONE)]
        if group == "adapter":
            return [n for n in names if n.startswith(ENCODER_ADAPTER)]
        if group == "sea":
            return [n for n in names if _sea_prefix(n)]
        if group == "base":
            return [
                n
                for n in names
                if (n.startswith("unet.") or n.startswith("text.")) and not _sea_prefix(n) and n not in fixed
            ]
        if group == "finetune":
            return [n for n in names if not n.startswith(ENCODER_BACKBONE) and n not in fixed]
        raise KeyError(group)

    def params_by_name(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def freeze_all(self) -> None:
        self.set_trainable(False)

    def unfreeze(self, names) -> list[Tensor]:
        table = self.params_by_name()
        out = []
        for n in names:
            table[n].requires_grad = True
            out.append(table[n])
        return out


def params_digest(model: Module, names) -> str:
    """SHA-256 over the raw bytes of the named parameters (freeze checks)."""
    h = hashlib.sha256()
    table = dict(model.named_parameters())
    for n in sorted(names):
        h.update(n.encode())
        h.update(np.ascontiguousarray(table[n].data).tobytes())
    return h.hexdigest()
