"""Procedural sprite world: renderer, exact masks, structured captions.

Images are 3x32x32 float64 in [-1, 1]. A sprite is a flat-colored shape
carrying a small black detail motif, drawn over a solid or vertically
graded background. Pixels are inside the shape iff their center is, so the
foreground mask is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .errors import ConfigError, ContractError
from .numeric import Rng

SIZE = 32
MARGIN = 2  # sprites never touch the outer two rows/columns

SHAPES = ("circle", "square", "triangle", "star")
COLORS = {
    "red": (0.9, -0.8, -0.8),
    "green": (-0.8, 0.8, -0.8),
    "blue": (-0.8, -0.6, 0.9),
    "yellow": (0.9, 0.9, -0.8),
    "purple": (0.5, -0.8, 0.8),
}
BACKGROUNDS = {
    "gray": (0.0, 0.0, 0.0),
    "navy": (-0.7, -0.6, 0.0),
    "olive": (-0.2, 0.0, -0.6),
    "sand": (0.4, 0.2, -0.2),
}
BG_TYPES = ("solid", "gradient")
DETAILS = ("stripes", "dots", "glyph")
DETAIL_COLOR = (-1.0, -1.0, -1.0)
WHITE = (1.0, 1.0, 1.0)

# 5x5 motifs centered on the sprite, as (row, col) offsets
DETAIL_OFFSETS = {
    "stripes": [(r, c) for r in (-1, 1) for c in range(-2, 3)],
    "dots": [(-2, -2), (-2, 2), (0, 0), (2, -2), (2, 2)],
    "glyph": sorted({(0, c) for c in range(-2, 3)} | {(r, 0) for r in range(-2, 3)}),
}

STAR_INNER = 0.55
SIZE_RANGE = (8.5, 11.5)


def gradient_bottom(top) -> np.ndarray:
    return 0.5 * np.asarray(top) + 0.3


@dataclass(frozen=True)
class Sprite:
    shape: str
    color: str
    detail: str
    background: str
    bg_type: str
    cx: float
    cy: float
    size: float
    angle: float

    @property
    def identity(self) -> tuple[str, str, str]:
        """The attributes that define *which* subject this is."""
        return (self.shape, self.color, self.detail)


# -- geometry ------------------------------------------------------------------------


def _polygon_inside(px, py, verts) -> np.ndarray:
    """Even-odd point-in-polygon test for arrays of points."""
    inside = np.zeros(px.shape, dtype=bool)
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        crosses = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < xint)
    return inside


def shape_mask(shape: str, cx: float, cy: float, size: float, angle: float, n: int = SIZE) -> np.ndarray:
    """Boolean [n, n] coverage of a shape by pixel centers."""
    ys, xs = np.mgrid[0:n, 0:n] + 0.5
    if shape == "circle":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= (0.8 * size) ** 2
    if shape == "square":
        k, start = 4, math.pi / 4
        radii = [size] * 4
    elif shape == "triangle":
        k, start = 3, -math.pi / 2
        radii = [size] * 3
    elif shape == "star":
        k, start = 10, -math.pi / 2
        radii = [size if i % 2 == 0 else STAR_INNER * size for i in range(10)]
    else:
        raise ConfigError(f"unknown shape {shape!r}")
    verts = [
        (cx + radii[i] * math.cos(start + angle + 2 * math.pi * i / k), cy + radii[i] * math.sin(start + angle + 2 * math.pi * i / k))
        for i in range(k)
    ]
    return _polygon_inside(xs, ys, verts)


def detail_pixels(sprite: Sprite) -> list[tuple[int, int]]:
    ci, cj = int(math.floor(sprite.cy)), int(math.floor(sprite.cx))
    return [(ci + dr, cj + dc) for dr, dc in DETAIL_OFFSETS[sprite.detail]]


def background_image(background: str, bg_type: str, n: int = SIZE) -> np.ndarray:
    top = np.asarray(BACKGROUNDS[background])
    if bg_type == "solid":
        return np.broadcast_to(top[:, None, None], (3, n, n)).copy()
    if bg_type != "gradient":
        raise ConfigError(f"unknown background type {bg_type!r}")
    w = np.linspace(0.0, 1.0, n)[None, :, None]
    col = (1 - w) * top[:, None, None] + w * gradient_bottom(top)[:, None, None]
    return np.broadcast_to(col, (3, n, n)).copy()


def render(sprite: Sprite) -> tuple[np.ndarray, np.ndarray]:
    """Image [3, 32, 32] and exact binary mask [1, 32, 32]."""
    mask = shape_mask(sprite.shape, sprite.cx, sprite.cy, sprite.size, sprite.angle)
    img = background_image(sprite.background, sprite.bg_type)
    img[:, mask] = np.asarray(COLORS[sprite.color])[:, None]
    for r, c in detail_pixels(sprite):
        if mask[r, c]:
            img[:, r, c] = DETAIL_COLOR
    return img, mask[None].astype(np.float64)


def sample_sprite(rng: Rng, identity: tuple[str, str, str] | None = None) -> Sprite:
    """Uniform attributes and a random pose that keeps the sprite inside the margin."""
    u = rng.uniform((9,))
    shape = SHAPES[int(u[0] * len(SHAPES))]
    color = list(COLORS)[int(u[1] * len(COLORS))]
    detail = DETAILS[int(u[2] * len(DETAILS))]
    if identity is not None:
        shape, color, detail = identity
    size = SIZE_RANGE[0] + u[3] * (SIZE_RANGE[1] - SIZE_RANGE[0])
    lo, hi = MARGIN + size + 0.5, SIZE - MARGIN - size - 0.5
    return Sprite(
        shape=shape,
        color=color,
        detail=detail,
        background=list(BACKGROUNDS)[int(u[4] * len(BACKGROUNDS))],
        bg_type=BG_TYPES[int(u[5] * len(BG_TYPES))],
        cx=lo + u[6] * (hi - lo),
        cy=lo + u[7] * (hi - lo),
        size=size,
        angle=u[8] * 2 * math.pi,
    )


# -- captions -------------------------------------------------------------------------

SUBJECT_TOKEN = "<S*>"
PAD = "<pad>"
VOCAB: tuple[str, ...] = (
    PAD,
    "a",
    "on",
    "with",
    "gradient",
    *SHAPES,
    *COLORS,
    *DETAILS,
    *BACKGROUNDS,
    SUBJECT_TOKEN,
)
TOKEN_ID = {w: i for i, w in enumerate(VOCAB)}
MAX_LEN = 10


@dataclass(frozen=True)
class Caption:
    """``a [color] shape [<S*>] [with detail] [on background [gradient]]``."""

    shape: str
    color: str | None = None
    detail: str | None = None
    background: str | None = None
    bg_type: str | None = None
    subject: bool = False

    def words(self) -> list[str]:
        out = ["a"]
        if self.color:
            out.append(self.color)
        out.append(self.shape)
        if self.subject:
            out.append(SUBJECT_TOKEN)
        if self.detail:
            out += ["with", self.detail]
        if self.background:
            out += ["on", self.background]
            if self.bg_type == "gradient":
                out.append("gradient")
        return out

    def text(self) -> str:
        return " ".join(self.words())

    def ids(self) -> np.ndarray:
        ids = np.zeros(MAX_LEN, dtype=np.int64)
        w = self.words()
        ids[: len(w)] = [TOKEN_ID[x] for x in w]
        return ids

    def attributes(self) -> dict[str, str]:
        """Attributes a probe can check (the subject token is not one).

        Background color and fill style count as a single attribute.
        """
        out = {"shape": self.shape}
        if self.color:
            out["color"] = self.color
        if self.detail:
            out["detail"] = self.detail
        if self.background:
            out["background"] = f"{self.background} {self.bg_type or 'solid'}"
        return out

    @classmethod
    def of(cls, sprite: Sprite, detail: bool = True, background: bool = True, subject: bool = False) -> Caption:
        return cls(
            shape=sprite.shape,
            color=sprite.color,
            detail=sprite.detail if detail else None,
            background=sprite.background if background else None,
            bg_type=sprite.bg_type if background else None,
            subject=subject,
        )

    @classmethod
    def class_only(cls, shape: str, subject: bool = False) -> Caption:
        return cls(shape=shape, subject=subject)

    def replace(self, **kw) -> Caption:
        return replace(self, **kw)


def parse_caption(text: str | Iterable[str]) -> Caption:
    """Inverse of ``Caption.text``; raises ContractError on anything else."""
    words = text.split() if isinstance(text, str) else [VOCAB[int(i)] if not isinstance(i, str) else i for i in text]
    words = [w for w in words if w != PAD]
    pos = 0

    def peek():
        return words[pos] if pos < len(words) else None

    if peek() != "a":
        raise ContractError(f"caption must start with 'a': {' '.join(words)!r}")
    pos += 1
    color = None
    if peek() in COLORS:
        color = words[pos]
        pos += 1
    if peek() not in SHAPES:
        raise ContractError(f"caption lacks a shape word: {' '.join(words)!r}")
    shape = words[pos]
    pos += 1
    subject = False
    if peek() == SUBJECT_TOKEN:
        subject = True
        pos += 1
    detail = None
    if peek() == "with":
        pos += 1
        if peek() not in DETAILS:
            raise ContractError(f"'with' must be followed by a detail: {' '.join(words)!r}")
        detail = words[pos]
        pos += 1
    background = bg_type = None
    if peek() == "on":
        pos += 1
        if peek() not in BACKGROUNDS:
            raise ContractError(f"'on' must be followed by a background: {' '.join(words)!r}")
        background = words[pos]
        pos += 1
        bg_type = "solid"
        if peek() == "gradient":
            bg_type = "gradient"
            pos += 1
    if pos != len(words):
        raise ContractError(f"trailing words in caption: {' '.join(words[pos:])!r}")
    return Caption(shape, color, detail, background, bg_type, subject)


def uncond_ids() -> np.ndarray:
    """The undesired/empty condition: an all-padding sequence."""
    return np.zeros(MAX_LEN, dtype=np.int64)


# -- datasets ------------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    image: np.ndarray
    mask: np.ndarray
    caption: Caption
    sprite: Sprite


def gen_dataset(
    n: int,
    seed: int,
    exclude: Iterable[tuple[str, str, str]] = (),
    detail_prob: float = 0.5,
) -> list[Sample]:
    """``n`` rendered sprites, deterministic in ``seed``.

    Identities listed in ``exclude`` are rejected and redrawn (held-out
    subjects). Captions mention the detail motif with probability
    ``detail_prob`` so both concise and detailed prompts are in-distribution.
    """
    if n <= 0:
        raise ConfigError(f"dataset size must be positive, got {n}")
    excluded = set(exclude)
    root = Rng(seed)
    out: list[Sample] = []
    i = 0
    while len(out) < n:
        rng = root.fork(i)
        i += 1
        sprite = sample_sprite(rng)
        if sprite.identity in excluded:
            continue
        img, mask = render(sprite)
        caption = Caption.of(sprite, detail=rng.uniform() < detail_prob)
        out.append(Sample(img, mask, caption, sprite))
    return out


def subject_sprite(identity: tuple[str, str, str], seed: int, background: str = "gray", bg_type: str = "solid") -> Sprite:
    """A specific pose of a given identity, centered-ish, for use as a reference."""
    sprite = sample_sprite(Rng(seed), identity)
    return replace(sprite, background=background, bg_type=bg_type)


def all_identities() -> list[tuple[str, str, str]]:
    return [(s, c, d) for s in SHAPES for c in COLORS for d in DETAILS]
