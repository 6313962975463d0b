"""Subject encoder: frozen conv pyramid + trainable residual adapter.

The pyramid plays the role of a frozen image backbone. Its stage outputs
are average-pooled to the coarsest tapped resolution, concatenated along
channels, and passed through residual blocks; the resulting grid is
flattened into the token sequence consumed by subject-encoder attention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numeric as nx
from .attention import SubjectFeatures
from .errors import ConfigError, ContractError
from .numeric import Conv2d, GroupNorm, Linear, Module, Rng, Tensor, num_groups
from .sprites import DETAILS, SHAPES, COLORS, WHITE

STAGE_RES = (32, 16, 8, 4)


@dataclass(frozen=True)
class EncoderConfig:
    tap_layers: tuple[int, ...] = (0, 1, 2, 3)
    out_dim: int = 64
    n_resblocks: int = 2
    widths: tuple[int, ...] = (16, 32, 48, 64)

    def __post_init__(self) -> None:
        if not self.tap_layers:
            raise ConfigError("tap_layers must not be empty")
        bad = [t for t in self.tap_layers if not 0 <= t < len(self.widths)]
        if bad:
            raise ConfigError(f"tap layers {bad} do not exist (encoder has {len(self.widths)} stages)")
        if len(self.widths) != len(STAGE_RES):
            raise ConfigError(f"encoder needs {len(STAGE_RES)} stage widths")
        if self.out_dim <= 0 or self.n_resblocks < 0:
            raise ConfigError("out_dim must be positive and n_resblocks non-negative")

    @property
    def token_res(self) -> int:
        return min(STAGE_RES[t] for t in self.tap_layers)

    @property
    def n_tokens(self) -> int:
        return self.token_res**2

    def to_dict(self) -> dict:
        return {
            "tap_layers": list(self.tap_layers),
            "out_dim": self.out_dim,
            "n_resblocks": self.n_resblocks,
            "widths": list(self.widths),
        }

    @classmethod
    def from_dict(cls, d: dict) -> EncoderConfig:
        return cls(tuple(d["tap_layers"]), int(d["out_dim"]), int(d["n_resblocks"]), tuple(d["widths"]))


# -- image-space helpers -------------------------------------------------------------


def _check_mask(mask: np.ndarray) -> None:
    if not np.all((mask == 0) | (mask == 1)):
        raise ContractError("foreground mask must be binary")
    flat = mask.reshape(mask.shape[0], -1)
    if np.any(flat.sum(axis=1) == 0):
        raise ContractError("foreground mask has a sample with no foreground pixel")


def remove_background(img, mask, fill=WHITE) -> np.ndarray:
    """Replace background pixels with ``fill`` (white by default)."""
    img = np.asarray(img.data if isinstance(img, Tensor) else img, dtype=np.float64)
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    single = img.ndim == 3
    if single:
        img, mask = img[None], mask[None]
    if mask.shape[0] != img.shape[0] or mask.shape[-2:] != img.shape[-2:]:
        raise nx.ShapeError(f"mask {mask.shape} does not match image {img.shape}")
    _check_mask(mask)
    fill = np.asarray(fill, dtype=np.float64).reshape(1, -1, 1, 1)
    out = img * mask + fill * (1.0 - mask)
    return out[0] if single else out


def downsample_mask(mask, res: int) -> np.ndarray:
    """Average-pool a [B, 1, 32, 32] mask to ``res``x``res``, threshold at 0.5 (ties -> 1), flatten."""
    if res <= 0:
        raise ConfigError(f"resolution must be positive, got {res}")
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    if mask.ndim == 3:
        mask = mask[None]
    H = mask.shape[-1]
    if H % res:
        raise ConfigError(f"resolution {res} does not divide {H}")
    k = H // res
    pooled = mask.reshape(mask.shape[0], res, k, res, k).mean(axis=(2, 4))
    return (pooled >= 0.5).astype(np.float64).reshape(mask.shape[0], res * res)


def _resample(img: np.ndarray, mask: np.ndarray, src_y: np.ndarray, src_x: np.ndarray):
    """Nearest-neighbour gather at fractional source coordinates; outside -> white / 0."""
    n = img.shape[-1]
    iy = np.floor(src_y).astype(int)
    ix = np.floor(src_x).astype(int)
    ok = (iy >= 0) & (iy < n) & (ix >= 0) & (ix < n)
    iyc, ixc = np.clip(iy, 0, n - 1), np.clip(ix, 0, n - 1)
    out = np.where(ok[None], img[:, iyc, ixc], np.asarray(WHITE)[:, None, None])
    m = np.where(ok[None], mask[:, iyc, ixc], 0.0)
    return out, m


def augment(img: np.ndarray, mask: np.ndarray, rng: Rng, strength: float = 1.0):
    """Random flip, scale/rotate, elastic jitter and blur of a clean subject.

    ``img`` [3, n, n] is already background-removed; ``mask`` is [1, n, n].
    Returns a new (image, mask) pair; deterministic in ``rng``.
    """
    n = img.shape[-1]
    u = rng.uniform((6,))
    if u[0] < 0.5:
        img, mask = img[:, :, ::-1], mask[:, :, ::-1]
    angle = (u[1] - 0.5) * 0.6 * strength
    scale = 1.0 + (u[2] - 0.5) * 0.3 * strength
    ys, xs = np.mgrid[0:n, 0:n] + 0.5
    c = n / 2.0
    dy, dx = ys - c, xs - c
    cos, sin = math.cos(angle), math.sin(angle)
    src_x = (cos * dx + sin * dy) / scale + c
    src_y = (-sin * dx + cos * dy) / scale + c
    # smooth displacement: bilinear upsampling of a coarse 4x4 random field
    coarse = rng.normal((2, 4, 4), 0.8 * strength)
    grid = np.linspace(0, 3, n)
    gy, gx = np.meshgrid(grid, grid, indexing="ij")
    y0, x0 = np.floor(gy).astype(int).clip(0, 2), np.floor(gx).astype(int).clip(0, 2)
    fy, fx = gy - y0, gx - x0

    def interp(f):
        return (
            f[y0, x0] * (1 - fy) * (1 - fx)
            + f[y0 + 1, x0] * fy * (1 - fx)
            + f[y0, x0 + 1] * (1 - fy) * fx
            + f[y0 + 1, x0 + 1] * fy * fx
        )

    src_y = src_y + interp(coarse[0])
    src_x = src_x + interp(coarse[1])
    img, mask = _resample(np.ascontiguousarray(img), np.ascontiguousarray(mask), src_y, src_x)
    if u[3] < 0.3 * strength:
        pad = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
        blur = sum(pad[:, i : i + n, j : j + n] for i in range(3) for j in range(3)) / 9.0
        img = 0.5 * img + 0.5 * blur
    if mask.sum() == 0:
        mask = np.zeros_like(mask)
        mask[:, n // 2, n // 2] = 1.0
    return img, mask


# -- networks ------------------------------------------------------------------------


class PyramidEncoder(Module):
    """Four conv stages (32, 16, 8, 4) with auxiliary attribute heads.

    The heads give the pyramid an image-text alignment objective during base
    pretraining; afterwards the whole pyramid stays frozen.
    """

    def __init__(self, widths: tuple[int, ...], rng: Rng):
        self.stages = []
        c_in = 3
        for i, w in enumerate(widths):
            self.stages.append(
                [
                    Conv2d(c_in, w, 3, rng.fork(10 + i), stride=1 if i == 0 else 2),
                    GroupNorm(num_groups(w), w),
                    Conv2d(w, w, 3, rng.fork(20 + i)),
                    GroupNorm(num_groups(w), w),
                ]
            )
            c_in = w
        feat = widths[-1] + widths[-2]
        self.head_shape = Linear(feat, len(SHAPES), rng.fork(30))
        self.head_color = Linear(feat, len(COLORS), rng.fork(31))
        self.head_detail = Linear(feat, len(DETAILS), rng.fork(32))
        self.embed_mean = Tensor(np.zeros(feat))

    def features(self, x: Tensor) -> list[Tensor]:
        outs = []
        h = x
        for conv1, gn1, conv2, gn2 in self.stages:
            h = nx.silu(gn1(conv1(h)))
            h = nx.silu(gn2(conv2(h))) + h
            outs.append(h)
        return outs

    def pooled(self, feats: list[Tensor]) -> Tensor:
        return nx.concat([feats[-2].mean(axis=(2, 3)), feats[-1].mean(axis=(2, 3))], axis=1)

    def logits(self, x: Tensor) -> dict[str, Tensor]:
        p = self.pooled(self.features(x))
        return {"shape": self.head_shape(p), "color": self.head_color(p), "detail": self.head_detail(p)}

    def embed(self, img_clean) -> np.ndarray:
        """Centered pooled features [B, F] of background-removed images."""
        x = np.asarray(img_clean.data if isinstance(img_clean, Tensor) else img_clean)
        if x.ndim == 3:
            x = x[None]
        with nx.no_grad():
            p = self.pooled(self.features(Tensor(x))).data
        return p - self.embed_mean.data


class AdapterBlock(Module):
    def __init__(self, c: int, rng: Rng):
        self.gn1 = GroupNorm(num_groups(c), c)
        self.conv1 = Conv2d(c, c, 3, rng.fork(1))
        self.gn2 = GroupNorm(num_groups(c), c)
        self.conv2 = Conv2d(c, c, 3, rng.fork(2))

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv1(nx.silu(self.gn1(x)))
        h = self.conv2(nx.silu(self.gn2(h)))
        return x + h


class SubjectAdapter(Module):
    """Channel-concatenated pyramid taps -> residual blocks -> token grid."""

    def __init__(self, cfg: EncoderConfig, rng: Rng):
        c_cat = sum(cfg.widths[t] for t in cfg.tap_layers)
        self.proj = Conv2d(c_cat, cfg.out_dim, 1, rng.fork(1))
        self.blocks = [AdapterBlock(cfg.out_dim, rng.fork(10 + i)) for i in range(cfg.n_resblocks)]
        self.norm = GroupNorm(num_groups(cfg.out_dim), cfg.out_dim)

    def __call__(self, taps: list[Tensor]) -> Tensor:
        h = self.proj(nx.concat(taps, axis=1))
        for blk in self.blocks:
            h = blk(h)
        h = self.norm(h)
        B, C, H, W = h.shape
        return h.reshape(B, C, H * W).transpose(0, 2, 1)


class SubjectEncoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: Rng):
        self.backbone = PyramidEncoder(cfg.widths, rng.fork(1))
        self.adapter = SubjectAdapter(cfg, rng.fork(2))
        self._cfg = cfg

    @property
    def cfg(self) -> EncoderConfig:
        return self._cfg

    def __call__(self, img_clean, beta: float = 1.0) -> SubjectFeatures:
        return encode_subject(img_clean, self, beta)


def encode_subject(img_clean, encoder: SubjectEncoder, beta: float = 1.0) -> SubjectFeatures:
    """Token features of an already background-removed image batch."""
    cfg = encoder.cfg
    x = img_clean if isinstance(img_clean, Tensor) else Tensor(img_clean)
    if x.ndim == 3:
        x = x.reshape((1,) + x.shape)
    feats = encoder.backbone.features(x)
    res = cfg.token_res
    taps = []
    for t in cfg.tap_layers:
        f = feats[t]
        k = f.shape[-1] // res
        taps.append(nx.avg_pool2d(f, k) if k > 1 else f)
    return SubjectFeatures(encoder.adapter(taps), beta)
