import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from helpers import randomize, tiny_model

from spritediff.errors import ContractError
from spritediff.metrics import (
    cosine,
    estimate_foreground,
    identity_score,
    probe,
    prompt_score,
)
from spritediff.numeric import Rng
from spritediff.sprites import (
    BACKGROUNDS,
    BG_TYPES,
    COLORS,
    DETAILS,
    SHAPES,
    Caption,
    background_image,
    render,
    sample_sprite,
)


def _sprite(k, **kw):
    return replace(sample_sprite(Rng(k)), **kw)


def test_probes_exact_on_whole_attribute_grid():
    grid = itertools.product(SHAPES, COLORS, DETAILS, BACKGROUNDS, BG_TYPES)
    for k, (s, c, d, b, bt) in enumerate(grid):
        sp = _sprite(k, shape=s, color=c, detail=d, background=b, bg_type=bt)
        img, _ = render(sp)
        assert prompt_score(img, Caption.of(sp)) == 1.0, (k, probe(img))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_probes_exact_for_random_poses(seed):
    sp = sample_sprite(Rng(seed))
    img, mask = render(sp)
    assert prompt_score(img, Caption.of(sp)) == 1.0
    np.testing.assert_array_equal(estimate_foreground(img)[0], mask)


def test_concise_caption_scores_one():
    sp = _sprite(3)
    img, _ = render(sp)
    assert prompt_score(img, Caption.of(sp, detail=False)) == 1.0
    assert prompt_score(img, f"a {sp.shape}") == 1.0


def test_color_swap_fails_color_only():
    sp = _sprite(5, color="red", background="navy", bg_type="solid")
    img, _ = render(replace(sp, color="green"))
    cap = f"a red {sp.shape} on navy"
    assert prompt_score(img, cap) <= 2 / 3
    assert prompt_score(img, cap) == pytest.approx(2 / 3)


def test_batch_score_is_mean():
    a, _ = render(_sprite(1, shape="star", color="red", background="gray", bg_type="solid"))
    b, _ = render(_sprite(1, shape="star", color="blue", background="gray", bg_type="solid"))
    assert prompt_score(np.stack([a, b]), "a red star on gray") == pytest.approx((1 + 2 / 3) / 2)


def test_noise_scores_at_most_chance():
    n = 300
    chance = np.mean([1 / len(SHAPES), 1 / len(COLORS), 1 / len(DETAILS), 1 / (len(BACKGROUNDS) * len(BG_TYPES))])
    rng = Rng(7)
    scores = []
    for i in range(n):
        noise = rng.uniform((3, 32, 32), -1.0, 1.0)
        sp = sample_sprite(rng.fork(i))
        scores.append(prompt_score(noise, Caption.of(sp)))
    # one-sided: mean must not exceed chance beyond sampling error
    se = np.std(scores, ddof=1) / np.sqrt(n)
    assert np.mean(scores) <= chance + 3 * se


def test_unparseable_caption_is_contract_error():
    img, _ = render(_sprite(0))
    with pytest.raises(ContractError):
        prompt_score(img, "two stars")


def test_blank_image_foreground_falls_back_to_all_ones():
    img = background_image("sand", "gradient")
    np.testing.assert_array_equal(estimate_foreground(img), np.ones((1, 1, 32, 32)))


# -- identity -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def encoder():
    m = tiny_model()
    randomize(m, ["encoder.backbone"], scale=0.2, seed=3)
    return m.encoder.backbone


def test_cosine_orthogonal_and_parallel():
    a = np.array([[1.0, 0.0, 0.0], [2.0, 1.0, 0.0]])
    b = np.array([[0.0, 5.0, 0.0], [4.0, 2.0, 0.0]])
    np.testing.assert_allclose(cosine(a, b), [0.0, 1.0], atol=1e-15)


def test_cosine_zero_norm_is_contract_error():
    with pytest.raises(ContractError):
        cosine(np.zeros((1, 3)), np.ones((1, 3)))


def test_identity_of_image_with_itself_is_one(encoder):
    img, mask = render(_sprite(4))
    assert identity_score(img, img, encoder) == pytest.approx(1.0, abs=1e-12)
    assert identity_score(img, img, encoder, mask, mask) == pytest.approx(1.0, abs=1e-12)


def test_identity_in_range_and_batched(encoder):
    imgs = np.stack([render(_sprite(k))[0] for k in range(4)])
    s = identity_score(imgs, imgs[0], encoder)
    assert -1.0 <= s <= 1.0
    per = [identity_score(im, imgs[0], encoder) for im in imgs]
    assert s == pytest.approx(np.mean(per), abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(list(BACKGROUNDS)), st.sampled_from(BG_TYPES))
def test_identity_ignores_background_repaint(encoder, seed, bg, bg_type):
    sp = sample_sprite(Rng(seed))
    a, mask = render(sp)
    b, _ = render(replace(sp, background=bg, bg_type=bg_type))
    other, _ = render(_sprite(seed + 1))
    assert identity_score(a, other, encoder, mask) == pytest.approx(identity_score(b, other, encoder, mask), abs=1e-12)
    assert identity_score(other, a, encoder) == pytest.approx(identity_score(other, b, encoder), abs=1e-12)
