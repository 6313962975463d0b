"""Subject-driven image generation on a desk-scale diffusion model over synthetic sprites."""

from .checkpoint import Checkpoint, load_model, model_checkpoint
from .guidance import GuidanceConfig, Reference, SamplerConfig, sample
from .metrics import identity_score, prompt_score
from .model import ModelConfig, SpriteDiffusion
from .presets import HELD_OUT, MODEL_PRESETS
from .sprites import Caption, gen_dataset, parse_caption, render

__all__ = [
    "Caption",
    "Checkpoint",
    "GuidanceConfig",
    "HELD_OUT",
    "MODEL_PRESETS",
    "ModelConfig",
    "Reference",
    "SamplerConfig",
    "SpriteDiffusion",
    "gen_dataset",
    "identity_score",
    "load_model",
    "model_checkpoint",
    "parse_caption",
    "prompt_score",
    "render",
    "sample",
]
