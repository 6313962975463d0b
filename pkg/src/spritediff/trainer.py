"""The three training stages plus regular-set generation.

* ``pretrain_base``: text-to-image epsilon-MSE, with auxiliary attribute
  classification training the encoder pyramid.
* ``pretrain_subject_encoder``: only the adapter and subject-attention
  layers learn; the fixed layout channel carries the target silhouette.
* ``finetune_subject``: one reference + one regular image per step, with a
  fast learning rate on the subject token row.

Every step's randomness is ``Rng(seed).fork(tag, step)``, so a run resumed
from a checkpoint (weights + optimizer state) continues bit-identically.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import numeric as nx
from .checkpoint import Checkpoint, model_checkpoint
from .errors import ConfigError, InvalidValueError
from .guidance import Reference, SamplerConfig, sample
from .model import ModelConfig, SpriteDiffusion, params_digest
from .numeric import Adam, ParamGroup, Rng, Tensor, no_grad
from .sprites import DETAILS, SHAPES, COLORS, SUBJECT_TOKEN, TOKEN_ID, Caption, Sample, uncond_ids
from .subject_encoder import augment, remove_background

STAGES = ("base", "se_pretrain", "finetune")

_TAG_BATCH, _TAG_TIME, _TAG_NOISE, _TAG_DROP, _TAG_AUG, _TAG_FLIP = range(1, 7)


@dataclass(frozen=True)
class TrainConfig:
    stage: str
    steps: int
    batch: int
    lr_main: float
    lr_token: float = 0.0
    seed: int = 0
    caption_dropout: float = 0.1
    use_layout: bool = True
    train_beta: float = 1.0
    use_subject_encoder: bool = True
    flip_prob: float = 0.5
    aux_weight: float = 1.0
    aug_strength: float = 1.0

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ConfigError(f"unknown stage {self.stage!r}; expected one of {STAGES}")
        if self.steps <= 0 or self.batch <= 0:
            raise ConfigError("steps and batch must be positive")
        if self.lr_main <= 0 or self.lr_token < 0:
            raise ConfigError("learning rates must be positive")
        if self.stage == "finetune" and self.batch != 2:
            raise ConfigError("fine-tuning batches are one reference plus one regular image (batch 2)")
        if self.stage == "finetune" and self.lr_token <= 0:
            raise ConfigError("fine-tuning needs a positive token learning rate")

    def replace(self, **kw) -> TrainConfig:
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        return cls(**d)


TRAIN_PRESETS = {
    "base": TrainConfig("base", steps=20000, batch=16, lr_main=1e-3),
    "se_pretrain": TrainConfig("se_pretrain", steps=4000, batch=16, lr_main=5e-4),
    "finetune": TrainConfig("finetune", steps=800, batch=2, lr_main=1e-6, lr_token=5e-3),
    "finetune_long": TrainConfig("finetune", steps=1200, batch=2, lr_main=1e-6, lr_token=5e-3),
}


@dataclass
class TrainLog:
    """Line-delimited records ``{step, stage, loss, lr}``; optionally streamed to a file."""

    records: list[dict] = field(default_factory=list)
    sink: Callable[[str], None] | None = None

    def add(self, **rec) -> None:
        self.records.append(rec)
        if self.sink is not None:
            self.sink(json.dumps(rec, sort_keys=True))

    def losses(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.records])


@dataclass
class TrainResult:
    model: SpriteDiffusion
    optimizer: Adam
    log: TrainLog
    frozen_digest: tuple[str, str] | None = None

    def checkpoint(self, cfg: TrainConfig, meta: dict | None = None, extra: dict | None = None) -> Checkpoint:
        """Weights, optimizer state and the resolved training config."""
        info = {"train": cfg.to_dict()}
        info.update(meta or {})
        return model_checkpoint(self.model, cfg.stage, info, self.optimizer, extra)


def _step_rng(seed: int, tag: int, step: int) -> Rng:
    return Rng(seed).fork(tag, step)


def _check_finite(loss: float, step: int, log: TrainLog) -> None:
    if not math.isfinite(loss):
        recent = [round(r["loss"], 6) for r in log.records[-5:]]
        raise InvalidValueError(f"training diverged at step {step}: loss={loss}; recent losses {recent}")


def _noised(x0: np.ndarray, model: SpriteDiffusion, seed: int, step: int):
    B = x0.shape[0]
    t = _step_rng(seed, _TAG_TIME, step).integers(0, model.schedule.T, (B,))
    eps = _step_rng(seed, _TAG_NOISE, step).normal(x0.shape)
    ab = model.schedule.alpha_bar[t][:, None, None, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps, t, eps


def _apply_dropout(ids: np.ndarray, p: float, seed: int, step: int) -> np.ndarray:
    if p <= 0:
        return ids
    drop = _step_rng(seed, _TAG_DROP, step).uniform((ids.shape[0],)) < p
    out = ids.copy()
    out[drop] = uncond_ids()
    return out


def _stack(samples: list[Sample]):
    img = np.stack([s.image for s in samples])
    mask = np.stack([s.mask for s in samples])
    ids = np.stack([s.caption.ids() for s in samples])
    return img, mask, ids


def _augmented_clean(img, mask, seed: int, step: int, strength: float):
    clean = remove_background(img, mask)
    out_img, out_mask = [], []
    for i in range(img.shape[0]):
        a, m = augment(clean[i], mask[i], _step_rng(seed, _TAG_AUG, step).fork(i), strength)
        out_img.append(a)
        out_mask.append(m)
    return np.stack(out_img), np.stack(out_mask)


def _make_optimizer(model: SpriteDiffusion, names: list[str], lr: float) -> Adam:
    table = model.params_by_name()
    return Adam([ParamGroup([table[n] for n in names], lr, names)])


def _resume(opt: Adam, resume: dict | None) -> int:
    if not resume:
        return 0
    opt.load_state_dict(resume)
    return opt.step_count


def _attribute_labels(samples: list[Sample]) -> dict[str, np.ndarray]:
    return {
        "shape": np.array([SHAPES.index(s.sprite.shape) for s in samples]),
        "color": np.array([list(COLORS).index(s.sprite.color) for s in samples]),
        "detail": np.array([DETAILS.index(s.sprite.detail) for s in samples]),
    }


# -- stage 0: base text-to-image + encoder pyramid ------------------------------------


def pretrain_base(
    dataset: list[Sample],
    cfg: TrainConfig,
    model: SpriteDiffusion | None = None,
    model_cfg: ModelConfig | None = None,
    resume: dict | None = None,
    log: TrainLog | None = None,
) -> TrainResult:
    """Epsilon-MSE training of U-Net and text encoder, plus the encoder's attribute heads."""
    if not dataset:
        raise ConfigError("empty dataset")
    if cfg.stage != "base":
        raise ConfigError(f"pretrain_base needs a 'base' config, got {cfg.stage!r}")
    model = model or SpriteDiffusion(model_cfg or ModelConfig())
    log = log or TrainLog()
    model.freeze_all()
    names = model.param_names("base") + model.param_names("encoder_backbone")
    model.unfreeze(names)
    opt = _make_optimizer(model, names, cfg.lr_main)
    start = _resume(opt, resume)
    n = len(dataset)
    for step in range(start, cfg.steps):
        idx = _step_rng(cfg.seed, _TAG_BATCH, step).integers(0, n, (cfg.batch,))
        batch = [dataset[i] for i in idx]
        img, mask, ids = _stack(batch)
        x_t, t, eps = _noised(img, model, cfg.seed, step)
        ids = _apply_dropout(ids, cfg.caption_dropout, cfg.seed, step)
        opt.zero_grad()
        loss = nx.mse_loss(model.eps(x_t, t, ids), eps)
        aug, _ = _augmented_clean(img, mask, cfg.seed, step, cfg.aug_strength)
        logits = model.encoder.backbone.logits(Tensor(aug))
        labels = _attribute_labels(batch)
        aux = sum((nx.cross_entropy(logits[k], labels[k]) for k in ("shape", "color", "detail")), Tensor(0.0))
        (loss + aux * cfg.aux_weight).backward()
        opt.step()
        lv = loss.item()
        _check_finite(lv, step, log)
        log.add(step=step, stage="base", loss=lv, aux=aux.item(), lr=cfg.lr_main)
    set_embed_mean(model, dataset)
    model.freeze_all()
    return TrainResult(model, opt, log)


def set_embed_mean(model: SpriteDiffusion, dataset: list[Sample], limit: int = 256) -> None:
    """Center identity embeddings on the training distribution of clean subjects."""
    bb = model.encoder.backbone
    bb.embed_mean.data = np.zeros_like(bb.embed_mean.data)
    img, mask, _ = _stack(dataset[:limit])
    bb.embed_mean.data = bb.embed(remove_background(img, mask)).mean(axis=0)


# -- stage 1: subject-encoder pretraining ---------------------------------------------


def pretrain_subject_encoder(
    dataset: list[Sample],
    model: SpriteDiffusion,
    cfg: TrainConfig,
    resume: dict | None = None,
    log: TrainLog | None = None,
) -> TrainResult:
    """Train adapter + subject attention only; everything else stays bit-identical."""
    if not dataset:
        raise ConfigError("empty dataset")
    if cfg.stage != "se_pretrain":
        raise ConfigError(f"pretrain_subject_encoder needs an 'se_pretrain' config, got {cfg.stage!r}")
    log = log or TrainLog()
    trainable = model.param_names("adapter") + model.param_names("sea")
    frozen = sorted(set(model.params_by_name()) - set(trainable))
    before = params_digest(model, frozen)
    model.freeze_all()
    model.unfreeze(trainable)
    opt = _make_optimizer(model, trainable, cfg.lr_main)
    start = _resume(opt, resume)
    n = len(dataset)
    for step in range(start, cfg.steps):
        idx = _step_rng(cfg.seed, _TAG_BATCH, step).integers(0, n, (cfg.batch,))
        img, mask, ids = _stack([dataset[i] for i in idx])
        ref, _ = _augmented_clean(img, mask, cfg.seed, step, cfg.aug_strength)
        x_t, t, eps = _noised(img, model, cfg.seed, step)
        ids = _apply_dropout(ids, cfg.caption_dropout, cfg.seed, step)
        opt.zero_grad()
        subject = model.subject_features(ref, cfg.train_beta)
        layout = mask if cfg.use_layout else None
        loss = nx.mse_loss(model.eps(x_t, t, ids, subject, layout=layout), eps)
        loss.backward()
        opt.step()
        lv = loss.item()
        _check_finite(lv, step, log)
        log.add(step=step, stage="se_pretrain", loss=lv, lr=cfg.lr_main)
    model.freeze_all()
    return TrainResult(model, opt, log, (before, params_digest(model, frozen)))


# -- regular images -------------------------------------------------------------------


@dataclass
class RegularSet:
    images: np.ndarray  # [n, 3, 32, 32]
    ids: np.ndarray  # [n, MAX_LEN]

    def __len__(self) -> int:
        return self.images.shape[0]

    def to_tensors(self) -> dict[str, np.ndarray]:
        return {"regular.images": self.images, "regular.ids": self.ids.astype(np.float64)}

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> RegularSet:
        if "regular.images" not in tensors:
            raise ConfigError("checkpoint holds no regular set")
        return cls(tensors["regular.images"], tensors["regular.ids"].astype(np.int64))


def generate_regular_set(
    reference: Reference,
    class_word: str,
    model: SpriteDiffusion,
    n: int = 32,
    sampler: SamplerConfig | None = None,
    seed: int = 1000,
    chunk: int = 16,
) -> RegularSet:
    """``n`` class images generated with SE and unmasked self-subject-attention."""
    if n <= 0:
        raise ConfigError("regular set size must be positive")
    sampler = (sampler or SamplerConfig()).replace(
        use_subject_encoder=True, use_reference_attention=True, use_mask=False
    )
    ids = Caption.class_only(class_word).ids()
    seeds = [seed + i for i in range(n)]
    images = np.concatenate(
        [sample(model, ids, seeds[i : i + chunk], sampler, reference) for i in range(0, n, chunk)]
    )
    return RegularSet(images, np.tile(ids, (n, 1)))


# -- stage 2: subject fine-tuning -----------------------------------------------------


def subject_token_id() -> int:
    return TOKEN_ID[SUBJECT_TOKEN]


def init_subject_token(model: SpriteDiffusion, class_word: str) -> None:
    w = model.text.tok.weight.data
    w[subject_token_id()] = w[TOKEN_ID[class_word]]


def _finetune_batch(reference: Reference, regulars: RegularSet, class_word: str, step: int, cfg: TrainConfig):
    ref_img = reference.clean
    reg_img = regulars.images[step % len(regulars)]
    imgs = np.stack([ref_img, reg_img])
    flips = _step_rng(cfg.seed, _TAG_FLIP, step).uniform((2,)) < cfg.flip_prob
    imgs[flips] = imgs[flips][..., ::-1]
    ids = np.stack([Caption.class_only(class_word, subject=True).ids(), regulars.ids[step % len(regulars)]])
    return imgs, ids


def finetune_subject(
    reference: Reference,
    class_word: str,
    regulars: RegularSet | None,
    model: SpriteDiffusion,
    cfg: TrainConfig,
    resume: dict | None = None,
    log: TrainLog | None = None,
    callback: Callable[[int, SpriteDiffusion], None] | None = None,
) -> TrainResult:
    """Fine-tune everything except the encoder pyramid on (reference, regular) pairs.

    ``callback(step, model)`` runs after each completed step.
    """
    if regulars is None or len(regulars) == 0:
        raise ConfigError("fine-tuning needs a regular image set")
    if cfg.stage != "finetune":
        raise ConfigError(f"finetune_subject needs a 'finetune' config, got {cfg.stage!r}")
    log = log or TrainLog()
    if not resume:
        init_subject_token(model, class_word)
    names = model.param_names("finetune")
    if not cfg.use_subject_encoder:
        names = [n for n in names if n not in set(model.param_names("adapter") + model.param_names("sea"))]
    frozen = sorted(set(model.params_by_name()) - set(names))
    before = params_digest(model, frozen)
    model.freeze_all()
    model.unfreeze(names)
    table = model.params_by_name()
    tok = model.text.tok.weight
    opt = Adam(
        [
            ParamGroup([table[n] for n in names], cfg.lr_main, names),
            ParamGroup([tok], cfg.lr_token, ["text.tok.weight"]),
        ]
    )
    sid = subject_token_id()
    opt.mask_rows(0, tok, [r for r in range(tok.shape[0]) if r != sid])
    opt.mask_rows(1, tok, [sid])
    start = _resume(opt, resume)
    ref_clean = reference.clean[None]
    for step in range(start, cfg.steps):
        imgs, ids = _finetune_batch(reference, regulars, class_word, step, cfg)
        x_t, t, eps = _noised(imgs, model, cfg.seed, step)
        opt.zero_grad()
        subject = model.subject_features(ref_clean, cfg.train_beta) if cfg.use_subject_encoder else None
        loss = nx.mse_loss(model.eps(x_t, t, ids, subject), eps)
        loss.backward()
        opt.step()
        lv = loss.item()
        _check_finite(lv, step, log)
        log.add(step=step, stage="finetune", loss=lv, lr=cfg.lr_main, lr_token=cfg.lr_token)
        if callback is not None:
            callback(step, model)
    model.freeze_all()
    return TrainResult(model, opt, log, (before, params_digest(model, frozen)))


def finetune_eval_loss(
    model: SpriteDiffusion,
    reference: Reference,
    class_word: str,
    regulars: RegularSet,
    use_subject_encoder: bool,
    beta: float = 1.0,
    draws: int = 8,
    seed: int = 4242,
) -> float:
    """Fine-tuning objective on fixed (image, t, noise) draws, for comparing runs."""
    n_reg = min(len(regulars), draws)
    imgs = np.concatenate([np.repeat(reference.clean[None], draws, axis=0), regulars.images[:n_reg]])
    ids = np.concatenate(
        [
            np.tile(Caption.class_only(class_word, subject=True).ids(), (draws, 1)),
            regulars.ids[:n_reg],
        ]
    )
    rng = Rng(seed)
    t = rng.integers(0, model.schedule.T, (imgs.shape[0],))
    eps = rng.normal(imgs.shape)
    ab = model.schedule.alpha_bar[t][:, None, None, None]
    x_t = np.sqrt(ab) * imgs + np.sqrt(1.0 - ab) * eps
    with no_grad():
        subject = model.subject_features(reference.clean[None], beta) if use_subject_encoder else None
        pred = model.eps(x_t, t, ids, subject).data
    return float(np.mean((pred - eps) ** 2))


def frozen_unchanged(result: TrainResult) -> bool:
    return result.frozen_digest is not None and result.frozen_digest[0] == result.frozen_digest[1]


__all__ = [
    "RegularSet",
    "TRAIN_PRESETS",
    "TrainConfig",
    "TrainLog",
    "TrainResult",
    "finetune_eval_loss",
    "finetune_subject",
    "frozen_unchanged",
    "generate_regular_set",
    "init_subject_token",
    "pretrain_base",
    "pretrain_subject_encoder",
    "set_embed_mean",
]
