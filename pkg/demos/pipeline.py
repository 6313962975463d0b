"""Walk through the whole personalization pipeline at a size that finishes in minutes.

    python3 demos/pipeline.py --out /tmp/demo --scale 1

The numbers printed at this scale are not meaningful; the point is to show
each stage and what it hands to the next. Raise ``--scale`` for better images.
"""

import argparse
from pathlib import Path

from spritediff.denoiser import DenoiserConfig
from spritediff.evaluation import generate_and_score, preset_sampler
from spritediff.guidance import Reference
from spritediff.model import ModelConfig
from spritediff.ppm import write_ppm
from spritediff.presets import HELD_OUT
from spritediff.sprites import Caption, gen_dataset, render, subject_sprite
from spritediff.subject_encoder import EncoderConfig
from spritediff.trainer import (
    TRAIN_PRESETS,
    TrainConfig,
    TrainLog,
    finetune_subject,
    generate_regular_set,
    pretrain_base,
    pretrain_subject_encoder,
)

SMALL = ModelConfig(
    DenoiserConfig(base_channels=8, channel_mult=(1, 2), attn_resolutions=(16,), heads=2, text_dim=16, time_dim=32, se_dim=16),
    EncoderConfig(out_dim=16, widths=(8, 16, 16, 16), n_resblocks=1),
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("demo-out"))
    ap.add_argument("--scale", type=int, default=1, help="multiplies every step count")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    k = args.scale
    quiet = TrainLog(sink=lambda line: None)

    data = gen_dataset(200, 0, exclude=HELD_OUT)
    print(f"dataset: {len(data)} sprites, e.g. {data[0].caption.text()!r}")

    base = pretrain_base(data, TrainConfig("base", steps=60 * k, batch=8, lr_main=2e-3), model_cfg=SMALL, log=quiet)
    print(f"base pretraining: loss {base.log.losses()[0]:.3f} -> {base.log.losses()[-1]:.3f}")

    se_cfg = TRAIN_PRESETS["se_pretrain"].replace(steps=30 * k, batch=8)
    se = pretrain_subject_encoder(data, base.model, se_cfg, log=quiet)
    print(f"subject-encoder pretraining: loss {se.log.losses()[-1]:.3f}")

    # a subject the model never saw
    sprite = subject_sprite(HELD_OUT[0], seed=1)
    image, mask = render(sprite)
    reference = Reference(image, mask, Caption.of(sprite).ids())
    write_ppm(args.out / "reference.ppm", image)

    sampler = preset_sampler("anime", steps=10)
    regulars = generate_regular_set(reference, sprite.shape, se.model, n=4, sampler=sampler)
    print(f"regular set: {len(regulars)} images of 'a {sprite.shape}'")

    ft_cfg = TRAIN_PRESETS["finetune"].replace(steps=20 * k)
    tuned = finetune_subject(reference, sprite.shape, regulars, se.model, ft_cfg, log=quiet)
    print(f"fine-tuning: loss {tuned.log.losses()[-1]:.3f}")

    prompt = Caption(sprite.shape, None, None, "sand", "solid", subject=True)
    seeds = range(4)
    for name, cfg in [("se-only", sampler.replace(use_reference_attention=False)), ("full", sampler)]:
        scores = generate_and_score(tuned.model, prompt, seeds, cfg, reference)
        print(f"{name:8s} {prompt.text()!r}: identity {scores.identity:.3f}, prompt {scores.prompt:.3f}")


if __name__ == "__main__":
    main()
