"""Tiny pixel-space U-Net noise predictor with pluggable attention sites.

Every attention block runs, in order: the self-attention site (plain or
self-subject-attention when a reference context is supplied), the
subject-encoder attention (when subject features are supplied), the
text cross-attention and a feed-forward layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numeric as nx
from .attention import (
    AttentionBias,
    AttentionParams,
    SubjectFeatures,
    attend,
    build_attention_bias,
    self_attention,
    self_subject_attention,
    subject_encoder_attention,
)
from .errors import ConfigError, ContractError
from .numeric import Conv2d, Embedding, GroupNorm, LayerNorm, Linear, Module, Rng, Tensor, num_groups
from .sprites import MAX_LEN, VOCAB
from .subject_encoder import downsample_mask

IMAGE_SIZE = 32
LAYOUT_RES = 8


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 32
    channel_mult: tuple[int, ...] = (1, 2, 4)
    attn_resolutions: tuple[int, ...] = (16, 8)
    heads: int = 2
    text_dim: int = 64
    time_dim: int = 128
    se_dim: int = 64

    def __post_init__(self) -> None:
        vals = [self.base_channels, self.heads, self.text_dim, self.time_dim, self.se_dim, *self.channel_mult]
        if any(v <= 0 for v in vals) or not self.channel_mult:
            raise ConfigError("denoiser config values must be positive")
        reachable = {IMAGE_SIZE >> i for i in range(len(self.channel_mult))}
        bad = set(self.attn_resolutions) - reachable
        if bad:
            raise ConfigError(f"attention resolutions {sorted(bad)} not reachable; have {sorted(reachable)}")
        for m in self.channel_mult:
            if (self.base_channels * m) % self.heads:
                raise ConfigError("channel widths must divide evenly into heads")

    def resolution(self, level: int) -> int:
        return IMAGE_SIZE >> level

    def width(self, level: int) -> int:
        return self.base_channels * self.channel_mult[level]

    def to_dict(self) -> dict:
        return {
            "base_channels": self.base_channels,
            "channel_mult": list(self.channel_mult),
            "attn_resolutions": list(self.attn_resolutions),
            "heads": self.heads,
            "text_dim": self.text_dim,
            "time_dim": self.time_dim,
            "se_dim": self.se_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> DenoiserConfig:
        return cls(
            int(d["base_channels"]),
            tuple(d["channel_mult"]),
            tuple(d["attn_resolutions"]),
            int(d["heads"]),
            int(d["text_dim"]),
            int(d["time_dim"]),
            int(d["se_dim"]),
        )


@dataclass
class ReferenceContext:
    """Pre-self-attention reference hidden states per site, masks per resolution.

    ``layer_features[site]`` is [B, N_ref, C]; ``masks[res]`` is [B, res*res]
    with entries in {0, 1}. Tensors here never carry gradients.
    """

    layer_features: dict[str, Tensor]
    masks: dict[int, np.ndarray]
    omega_ref: float
    _bias_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        for res, m in self.masks.items():
            if not np.all((m == 0) | (m == 1)):
                raise ContractError(f"reference mask at resolution {res} is not binary")

    def bias(self, site: str, n_gen: int, heads: int) -> AttentionBias:
        key = (site, n_gen, heads)
        if key not in self._bias_cache:
            feats = self.layer_features[site]
            res = int(round(math.sqrt(feats.shape[1])))
            self._bias_cache[key] = build_attention_bias(self.masks[res], self.omega_ref, n_gen, heads)
        return self._bias_cache[key]

    def with_omega(self, omega_ref: float) -> ReferenceContext:
        return ReferenceContext(self.layer_features, self.masks, omega_ref)

    def with_masks(self, masks: dict[int, np.ndarray]) -> ReferenceContext:
        return ReferenceContext(self.layer_features, masks, self.omega_ref)


# -- building blocks ------------------------------------------------------------------


def timestep_embedding(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None] * (1000.0 / 100.0)
    return np.concatenate([np.cos(args), np.sin(args)], axis=1)


class ResBlock(Module):
    def __init__(self, c_in: int, c_out: int, time_dim: int, rng: Rng):
        self.gn1 = GroupNorm(num_groups(c_in), c_in)
        self.conv1 = Conv2d(c_in, c_out, 3, rng.fork(1))
        self.temb = Linear(time_dim, c_out, rng.fork(2))
        self.gn2 = GroupNorm(num_groups(c_out), c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, rng.fork(3), zero=True)
        self.skip = Conv2d(c_in, c_out, 1, rng.fork(4)) if c_in != c_out else None

    def __call__(self, x: Tensor, temb: Tensor) -> Tensor:
        h = self.conv1(nx.silu(self.gn1(x)))
        tb = self.temb(temb)
        h = h + tb.reshape(tb.shape + (1, 1))
        h = self.conv2(nx.silu(self.gn2(h)))
        return (self.skip(x) if self.skip is not None else x) + h


class FeedForward(Module):
    def __init__(self, c: int, rng: Rng, mult: int = 2):
        self.fc1 = Linear(c, c * mult, rng.fork(1))
        self.fc2 = Linear(c * mult, c, rng.fork(2))

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(nx.silu(self.fc1(x)))


class SubjectAttention(Module):
    """Subject-encoder attention layer: its own norm and a zero-output cross-attention."""

    def __init__(self, c: int, se_dim: int, heads: int, rng: Rng):
        self.norm = LayerNorm(c)
        self.attn = AttentionParams(c, heads, rng, context_dim=se_dim, zero_out=True)

    def __call__(self, z: Tensor, subject: SubjectFeatures) -> Tensor:
        return subject_encoder_attention(self.norm(z), subject, self.attn)


class AttnBlock(Module):
    def __init__(self, c: int, cfg: DenoiserConfig, rng: Rng):
        self.gn = GroupNorm(num_groups(c), c)
        self.proj_in = Linear(c, c, rng.fork(1))
        self.norm1 = LayerNorm(c)
        self.attn1 = AttentionParams(c, cfg.heads, rng.fork(2))
        self.sea = SubjectAttention(c, cfg.se_dim, cfg.heads, rng.fork(3))
        self.norm2 = LayerNorm(c)
        self.attn2 = AttentionParams(c, cfg.heads, rng.fork(4), context_dim=cfg.text_dim)
        self.norm3 = LayerNorm(c)
        self.ff = FeedForward(c, rng.fork(5))
        self.proj_out = Linear(c, c, rng.fork(6), zero=True)

    def __call__(
        self,
        h: Tensor,
        text: Tensor,
        site: str,
        subject: SubjectFeatures | None,
        ref: ReferenceContext | None,
        record: dict | None,
    ) -> Tensor:
        B, C, H, W = h.shape
        z = self.proj_in(self.gn(h).reshape(B, C, H * W).transpose(0, 2, 1))
        n1 = self.norm1(z)
        if record is not None:
            record[site] = Tensor(n1.data)  # stop-gradient copy
        if ref is None:
            z = z + self_attention(n1, self.attn1)
        else:
            if site not in ref.layer_features:
                raise ContractError(f"reference context missing attention site {site!r}")
            bias = ref.bias(site, H * W, self.attn1.heads)
            z = z + self_subject_attention(n1, ref.layer_features[site], bias, self.attn1)
        if subject is not None:
            z = z + self.sea(z, subject)
        z = z + attend(self.norm2(z), text, self.attn2)
        z = z + self.ff(self.norm3(z))
        out = self.proj_out(z).transpose(0, 2, 1).reshape(B, C, H, W)
        return h + out


class TextEncoder(Module):
    """Token + position embeddings followed by one pre-norm transformer layer."""

    def __init__(self, dim: int, heads: int, rng: Rng, vocab: int = len(VOCAB), max_len: int = MAX_LEN):
        self.tok = Embedding(vocab, dim, rng.fork(1), scale=0.5)
        self.pos = nx.param(rng.fork(2).normal((max_len, dim), 0.1))
        self.norm1 = LayerNorm(dim)
        self.attn = AttentionParams(dim, heads, rng.fork(3))
        self.norm2 = LayerNorm(dim)
        self.ff = FeedForward(dim, rng.fork(4))
        self.norm_out = LayerNorm(dim)

    def __call__(self, ids) -> Tensor:
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        x = self.tok(ids) + self.pos[: ids.shape[1]]
        x = x + self_attention(self.norm1(x), self.attn)
        x = x + self.ff(self.norm2(x))
        return self.norm_out(x)


class UNet(Module):
    def __init__(self, cfg: DenoiserConfig, rng: Rng):
        self._cfg = cfg
        td = cfg.time_dim
        self.time_fc1 = Linear(td, td, rng.fork(1))
        self.time_fc2 = Linear(td, td, rng.fork(2))
        c0 = cfg.width(0)
        self.conv_in = Conv2d(3, c0, 3, rng.fork(3))
        # fixed (never trained) layout pathway: coarse silhouette -> feature residual
        self.layout_proj = Conv2d(1, c0, 3, rng.fork(4))
        self.layout_proj.weight.data *= 2.0
        self.down_res, self.down_attn, self.downsample = [], [], []
        c_prev = c0
        n = len(cfg.channel_mult)
        for lvl in range(n):
            c = cfg.width(lvl)
            self.down_res.append(ResBlock(c_prev, c, td, rng.fork(100 + lvl)))
            self.down_attn.append(self._maybe_attn(lvl, c, rng.fork(200 + lvl)))
            self.downsample.append(Conv2d(c, c, 3, rng.fork(300 + lvl), stride=2) if lvl < n - 1 else None)
            c_prev = c
        self.mid_res = ResBlock(c_prev, c_prev, td, rng.fork(400))
        self.mid_attn = AttnBlock(c_prev, cfg, rng.fork(401))
        self.up_res, self.up_attn, self.upsample = [], [], []
        for lvl in reversed(range(n)):
            c = cfg.width(lvl)
            self.up_res.append(ResBlock(c_prev + c, c, td, rng.fork(500 + lvl)))
            self.up_attn.append(self._maybe_attn(lvl, c, rng.fork(600 + lvl)))
            self.upsample.append(Conv2d(c, c, 3, rng.fork(700 + lvl)) if lvl > 0 else None)
            c_prev = c
        self.gn_out = GroupNorm(num_groups(c0), c0)
        self.conv_out = Conv2d(c0, 3, 3, rng.fork(800))

    @property
    def cfg(self) -> DenoiserConfig:
        return self._cfg

    def _maybe_attn(self, lvl: int, c: int, rng: Rng):
        return AttnBlock(c, self._cfg, rng) if self._cfg.resolution(lvl) in self._cfg.attn_resolutions else None

    def site_ids(self) -> list[str]:
        n = len(self._cfg.channel_mult)
        down = [f"down.{l}.attn" for l in range(n) if self.down_attn[l] is not None]
        up = [f"up.{l}.attn" for i, l in enumerate(reversed(range(n))) if self.up_attn[i] is not None]
        return down + ["mid.attn"] + up

    def site_resolutions(self) -> dict[str, int]:
        n = len(self._cfg.channel_mult)
        out = {f"down.{l}.attn": self._cfg.resolution(l) for l in range(n) if self.down_attn[l] is not None}
        out["mid.attn"] = self._cfg.resolution(n - 1)
        for i, l in enumerate(reversed(range(n))):
            if self.up_attn[i] is not None:
                out[f"up.{l}.attn"] = self._cfg.resolution(l)
        return out

    def sea_modules(self) -> list[SubjectAttention]:
        blocks = [b for b in self.down_attn + [self.mid_attn] + self.up_attn if b is not None]
        return [b.sea for b in blocks]

    def __call__(
        self,
        x: Tensor,
        t,
        text: Tensor,
        subject: SubjectFeatures | None = None,
        ref: ReferenceContext | None = None,
        layout: np.ndarray | None = None,
        record: dict | None = None,
    ) -> Tensor:
        cfg = self._cfg
        B = x.shape[0]
        t_arr = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.float64)), (B,))
        temb = Tensor(timestep_embedding(t_arr, cfg.time_dim))
        temb = self.time_fc2(nx.silu(self.time_fc1(temb)))
        if text.shape[0] != B:
            text = nx.broadcast_to(text, (B,) + text.shape[1:])
        h = self.conv_in(x)
        if layout is not None:
            h = h + self.layout_proj(Tensor(coarse_layout(layout)))
        skips = []
        n = len(cfg.channel_mult)
        for lvl in range(n):
            h = self.down_res[lvl](h, temb)
            if self.down_attn[lvl] is not None:
                h = self.down_attn[lvl](h, text, f"down.{lvl}.attn", subject, ref, record)
            skips.append(h)
            if self.downsample[lvl] is not None:
                h = self.downsample[lvl](h)
        h = self.mid_res(h, temb)
        h = self.mid_attn(h, text, "mid.attn", subject, ref, record)
        for i, lvl in enumerate(reversed(range(n))):
            h = self.up_res[i](nx.concat([h, skips.pop()], axis=1), temb)
            if self.up_attn[i] is not None:
                h = self.up_attn[i](h, text, f"up.{lvl}.attn", subject, ref, record)
            if self.upsample[i] is not None:
                h = self.upsample[i](nx.upsample_nearest(h))
        return self.conv_out(nx.silu(self.gn_out(h)))


def coarse_layout(silhouette: np.ndarray) -> np.ndarray:
    """[B, 1, 32, 32] silhouette -> 8x8 average -> nearest-upsampled back to 32x32."""
    s = np.asarray(silhouette, dtype=np.float64)
    B = s.shape[0]
    k = IMAGE_SIZE // LAYOUT_RES
    coarse = s.reshape(B, 1, LAYOUT_RES, k, LAYOUT_RES, k).mean(axis=(3, 5))
    return coarse.repeat(k, axis=2).repeat(k, axis=3)


def denoise(
    unet: UNet,
    x_t,
    t,
    text: Tensor,
    subject: SubjectFeatures | None = None,
    ref: ReferenceContext | None = None,
    layout: np.ndarray | None = None,
) -> Tensor:
    """Predicted noise for ``x_t`` [B, 3, 32, 32] at timestep(s) ``t``."""
    x = x_t if isinstance(x_t, Tensor) else Tensor(x_t)
    if x.ndim != 4 or x.shape[1:] != (3, IMAGE_SIZE, IMAGE_SIZE):
        raise nx.ShapeError(f"denoise expects [B, 3, 32, 32], got {x.shape}")
    return unet(x, t, text, subject=subject, ref=ref, layout=layout)


def extract_reference_features(
    unet: UNet,
    x_ref_noised,
    t,
    ref_text: Tensor,
    subject: SubjectFeatures | None = None,
    mask=None,
    omega_ref: float = 1.0,
) -> ReferenceContext:
    """Run the denoiser on the noised reference and record every self-attention input.

    ``mask`` is the reference foreground [B, 1, 32, 32]; None means all ones
    (no masking). Recorded features are detached copies.
    """
    x = x_ref_noised if isinstance(x_ref_noised, Tensor) else Tensor(x_ref_noised)
    record: dict[str, Tensor] = {}
    with nx.no_grad():
        unet(Tensor(x.data), t, Tensor(ref_text.data), subject=_detach_subject(subject), record=record)
    B = x.shape[0]
    if mask is None:
        mask = np.ones((B, 1, IMAGE_SIZE, IMAGE_SIZE))
    masks = {res: downsample_mask(mask, res) for res in set(unet.site_resolutions().values())}
    return ReferenceContext(record, masks, omega_ref)


def _detach_subject(subject: SubjectFeatures | None) -> SubjectFeatures | None:
    if subject is None:
        return None
    return SubjectFeatures(Tensor(subject.tokens.data), subject.beta)
