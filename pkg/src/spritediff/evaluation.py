"""Scoring protocols shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .guidance import PRESETS, Reference, SamplerConfig, sample
from .metrics import identity_score, prompt_score
from .sprites import Caption, parse_caption

ABLATION_BETAS = (0.0, 0.1, 0.2, 0.5)
ABLATION_OMEGAS = (0.0, 1.0, 2.5, 10.0)


@dataclass(frozen=True)
class Scores:
    identity: float
    prompt: float

    def to_dict(self) -> dict:
        return {"identity": self.identity, "prompt": self.prompt}


def score_images(images: np.ndarray, caption: Caption | str, reference: Reference | None, encoder) -> Scores:
    """Mean identity to the reference (nan without one) and mean prompt fidelity."""
    cap = caption if isinstance(caption, Caption) else parse_caption(caption)
    ident = float("nan")
    if reference is not None:
        ident = identity_score(images, reference.image, encoder, ref_mask=reference.mask)
    return Scores(ident, prompt_score(images, cap))


def generate_and_score(model, prompt: Caption, seeds, cfg: SamplerConfig, reference: Reference | None) -> Scores:
    images = sample(model, prompt.ids(), seeds, cfg, reference)
    return score_images(images, prompt, reference, model.encoder.backbone)


def preset_sampler(name: str = "anime", **kw) -> SamplerConfig:
    return SamplerConfig(**{**PRESETS[name], **kw})


def ablation_grid(
    model,
    reference: Reference,
    prompt: Caption,
    seeds,
    base: SamplerConfig,
    betas=ABLATION_BETAS,
    omegas=ABLATION_OMEGAS,
    progress=None,
) -> list[dict]:
    """Scores for every (beta, omega_ref) cell plus the mask-off variant at ``base``."""
    rows = []
    for beta in betas:
        for omega in omegas:
            s = generate_and_score(model, prompt, seeds, base.replace(beta=beta, omega_ref=omega), reference)
            rows.append({"variant": "grid", "beta": beta, "omega_ref": omega, **s.to_dict()})
            if progress is not None:
                progress(rows[-1])
    s = generate_and_score(model, prompt, seeds, base.replace(use_mask=False), reference)
    rows.append({"variant": "mask-off", "beta": base.beta, "omega_ref": base.omega_ref, **s.to_dict()})
    if progress is not None:
        progress(rows[-1])
    return rows


def format_table(rows: list[dict]) -> str:
    lines = ["variant\tbeta\tomega_ref\tidentity\tprompt"]
    for r in rows:
        lines.append(f"{r['variant']}\t{r['beta']:g}\t{r['omega_ref']:g}\t{r['identity']:.4f}\t{r['prompt']:.4f}")
    return "\n".join(lines)
