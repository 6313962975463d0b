"""Named model sizes, held-out subjects and the training recipe used by the CLI and tests."""

from __future__ import annotations

from .denoiser import DenoiserConfig
from .model import ModelConfig
from .subject_encoder import EncoderConfig

MODEL_PRESETS = {
    # small enough to train on one CPU core in about an hour
    "ci": ModelConfig(
        DenoiserConfig(base_channels=16, channel_mult=(1, 2, 2), text_dim=32, time_dim=64, se_dim=32),
        EncoderConfig(out_dim=32),
    ),
    "default": ModelConfig(),
}

# identities never shown during pretraining; used as personalization subjects
HELD_OUT = (
    ("star", "purple", "dots"),
    ("triangle", "yellow", "glyph"),
    ("circle", "blue", "stripes"),
    ("square", "red", "dots"),
)

DATASET_SIZE = 2000
DATASET_SEED = 0
