import numpy as np

from spritediff.denoiser import DenoiserConfig
from spritediff.model import ModelConfig, SpriteDiffusion
from spritediff.numeric import Rng
from spritediff.sprites import gen_dataset
from spritediff.subject_encoder import EncoderConfig, remove_background

TINY = ModelConfig(
    DenoiserConfig(base_channels=8, channel_mult=(1, 2), attn_resolutions=(16,), heads=2, text_dim=8, time_dim=16, se_dim=8),
    EncoderConfig(out_dim=8, widths=(4, 8, 8, 8), n_resblocks=1),
)


def tiny_model(seed=0):
    return SpriteDiffusion(ModelConfig(TINY.denoiser, TINY.encoder, seed=seed))


def batch(n=2, seed=0):
    data = gen_dataset(n, seed)
    img = np.stack([d.image for d in data])
    mask = np.stack([d.mask for d in data])
    ids = np.stack([d.caption.ids() for d in data])
    return img, mask, ids


def randomize(module, names=None, scale=0.2, seed=0):
    """Give zero-initialized parameters random values (simulates training)."""
    rng = Rng(seed)
    for n, p in module.named_parameters():
        if names is None or any(n.startswith(k) for k in names):
            p.data = p.data + rng.normal(p.shape, scale)


def clean_batch(n=2, seed=0):
    img, mask, ids = batch(n, seed)
    return remove_background(img, mask), mask, ids
