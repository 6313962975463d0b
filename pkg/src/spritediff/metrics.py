"""Identity and prompt-fidelity scores for generated sprites.

Prompt fidelity uses handcrafted pixel probes (background, color, shape,
detail) so it is an oracle rather than a learned judge. Identity compares
centered encoder embeddings of background-removed images.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .errors import ContractError
from .sprites import (
    BACKGROUNDS,
    COLORS,
    DETAIL_OFFSETS,
    SHAPES,
    SIZE,
    Caption,
    gradient_bottom,
    parse_caption,
    shape_mask,
)
from .subject_encoder import PyramidEncoder, remove_background

BORDER_COLS = (0, 1, SIZE - 2, SIZE - 1)
FG_THRESHOLD = 0.3
DARK_THRESHOLD = -0.6


def _as_batch(img) -> np.ndarray:
    img = np.asarray(getattr(img, "data", img), dtype=np.float64)
    return img[None] if img.ndim == 3 else img


# -- foreground / background -----------------------------------------------------------


def background_rows(img: np.ndarray) -> np.ndarray:
    """Per-row background color [3, H] estimated from the outer border columns."""
    return np.median(img[:, :, list(BORDER_COLS)], axis=2)


def estimate_foreground(img) -> np.ndarray:
    """Binary mask [B, 1, 32, 32]: pixels far from their row's border color.

    Falls back to an all-ones mask when nothing stands out, so the result is
    always a valid foreground mask.
    """
    batch = _as_batch(img)
    out = np.zeros((batch.shape[0], 1, SIZE, SIZE))
    for i, im in enumerate(batch):
        bg = background_rows(im)
        diff = np.abs(im - bg[:, :, None]).max(axis=0)
        m = diff > FG_THRESHOLD
        out[i, 0] = m if m.any() else 1.0
    return out


def probe_background(img: np.ndarray) -> tuple[str, str]:
    """(palette name, solid|gradient) from the top and bottom rows."""
    top = np.median(img[:, 0, :], axis=1)
    bottom = np.median(img[:, -1, :], axis=1)
    name = min(BACKGROUNDS, key=lambda k: float(np.sum((np.asarray(BACKGROUNDS[k]) - top) ** 2)))
    ref = np.asarray(BACKGROUNDS[name])
    d_solid = float(np.sum((bottom - ref) ** 2))
    d_grad = float(np.sum((bottom - gradient_bottom(ref)) ** 2))
    return name, "gradient" if d_grad < d_solid else "solid"


# -- foreground probes ----------------------------------------------------------------


def _dark(img: np.ndarray) -> np.ndarray:
    return img.max(axis=0) < DARK_THRESHOLD


def probe_color(img: np.ndarray, mask: np.ndarray) -> str | None:
    m = mask[0].astype(bool) & ~_dark(img)
    if not m.any():
        return None
    med = np.median(img[:, m], axis=1)
    return min(COLORS, key=lambda k: float(np.sum((np.asarray(COLORS[k]) - med) ** 2)))


@lru_cache(maxsize=None)
def _template_area(shape: str) -> float:
    # reference area at size 10, sampled finely enough to be pose independent
    return float(shape_mask(shape, 64.0, 64.0, 40.0, 0.0, n=128).sum()) / 16.0


_ANGLES = {"circle": 1, "square": 12, "triangle": 16, "star": 12}
_PERIOD = {"circle": 2 * math.pi, "square": math.pi / 2, "triangle": 2 * math.pi / 3, "star": 2 * math.pi / 5}


def shape_scores(mask: np.ndarray) -> dict[str, float]:
    """Best IoU of each shape template against a binary mask [1, H, W]."""
    m = mask[0].astype(bool)
    area = m.sum()
    ys, xs = np.nonzero(m)
    cy, cx = ys.mean() + 0.5, xs.mean() + 0.5
    out = {}
    for shape in SHAPES:
        size = 10.0 * math.sqrt(area / _template_area(shape))
        best = 0.0
        for k in range(_ANGLES[shape]):
            angle = _PERIOD[shape] * k / _ANGLES[shape]
            for dy in (-0.5, 0.0, 0.5):
                for dx in (-0.5, 0.0, 0.5):
                    tm = shape_mask(shape, cx + dx, cy + dy, size, angle)
                    inter = np.logical_and(tm, m).sum()
                    union = np.logical_or(tm, m).sum()
                    best = max(best, inter / union if union else 0.0)
        out[shape] = best
    return out


def probe_shape(mask: np.ndarray) -> str:
    scores = shape_scores(mask)
    return max(SHAPES, key=lambda s: scores[s])


def probe_detail(img: np.ndarray, mask: np.ndarray) -> str | None:
    """Motif whose pixel pattern best overlaps the dark foreground pixels."""
    dark = _dark(img) & mask[0].astype(bool)
    if dark.sum() < 3:
        return None
    ys, xs = np.nonzero(dark)
    ci, cj = int(round(ys.mean())), int(round(xs.mean()))
    pts = set(zip(ys.tolist(), xs.tolist()))
    best, best_iou = None, 0.0
    for name, offsets in DETAIL_OFFSETS.items():
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                motif = {(ci + di + r, cj + dj + c) for r, c in offsets}
                iou = len(motif & pts) / len(motif | pts)
                if iou > best_iou:
                    best, best_iou = name, iou
    return best if best_iou >= 0.3 else None


def probe(img) -> dict[str, str | None]:
    """All attribute guesses for one image [3, 32, 32]."""
    img = _as_batch(img)[0]
    mask = estimate_foreground(img)[0]
    bg, bg_type = probe_background(img)
    return {
        "shape": probe_shape(mask),
        "color": probe_color(img, mask),
        "detail": probe_detail(img, mask),
        "background": f"{bg} {bg_type}",
    }


def prompt_score(gen, caption) -> float:
    """Fraction of the caption's attributes realized, averaged over a batch."""
    if not isinstance(caption, Caption):
        caption = parse_caption(caption)
    wanted = caption.attributes()
    scores = []
    for img in _as_batch(gen):
        found = probe(img)
        scores.append(np.mean([found[k] == v for k, v in wanted.items()]))
    return float(np.mean(scores))


# -- identity --------------------------------------------------------------------------


def cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity; zero-norm rows are a contract violation."""
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ContractError("zero-norm embedding in cosine similarity")
    return np.sum(a * b, axis=-1) / (na * nb)


def identity_embedding(img, encoder: PyramidEncoder, mask=None) -> np.ndarray:
    batch = _as_batch(img)
    mask = estimate_foreground(batch) if mask is None else _as_batch(mask)
    if mask.shape[0] == 1 and batch.shape[0] > 1:
        mask = np.broadcast_to(mask, (batch.shape[0],) + mask.shape[1:])
    return encoder.embed(remove_background(batch, mask))


def identity_score(gen, ref, encoder: PyramidEncoder, ref_mask=None, gen_mask=None) -> float:
    """Mean cosine similarity between generated images and the reference.

    Backgrounds are removed first: with the given masks, or estimated ones.
    """
    g = identity_embedding(gen, encoder, gen_mask)
    r = identity_embedding(ref, encoder, ref_mask)
    if r.shape[0] == 1:
        r = np.broadcast_to(r, g.shape)
    return float(np.mean(cosine(g, r)))
