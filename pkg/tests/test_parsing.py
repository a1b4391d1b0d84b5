import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from frontalize.dataset import TEMPLATE_128, AlignmentError
from frontalize.parsing import (
    LandmarkParser,
    MaskError,
    MaskTriple,
    apply_attention,
    apply_attention_batch,
    landmark_stand_in_parser,
    parse_masks,
)


def constant_parser(value):
    def parser(image, landmarks=None):
        h, w = image.shape[:2]
        return MaskTriple(*(np.full((h, w), value) for _ in range(3)))

    return parser


def test_zero_parser_passes_through():
    masks = parse_masks(np.zeros((8, 8, 3)), constant_parser(0.0))
    assert all(not m.any() for m in (masks.m_hair, masks.m_skin, masks.m_face))


def test_out_of_range_parser_is_clipped(rng):
    def noisy(image, landmarks=None):
        return MaskTriple(*rng.uniform(-0.1, 1.1, (3, 8, 8)))

    masks = parse_masks(np.zeros((8, 8, 3)), noisy)
    stack = masks.stack()
    assert stack.min() >= 0 and stack.max() <= 1
    assert (stack == 0).any() and (stack == 1).any()


def test_parser_dimension_mismatch():
    def small(image, landmarks=None):
        return MaskTriple(*np.zeros((3, 8, 8)))

    with pytest.raises(MaskError, match="m_hair"):
        parse_masks(np.zeros((16, 16, 3)), small)


def test_skin_integral_exceeds_feature_integral():
    masks = landmark_stand_in_parser(TEMPLATE_128, 128)
    assert masks.m_skin.sum() > masks.m_face.sum()
    # every blob centre sits inside the skin ellipse
    for x, y in TEMPLATE_128:
        assert masks.m_skin[int(round(y)), int(round(x))] == 1


def test_face_mask_peaks_at_landmarks():
    masks = landmark_stand_in_parser(TEMPLATE_128, 128)
    m = masks.m_face
    for x, y in TEMPLATE_128:
        xi, yi = int(round(x)), int(round(y))
        window = m[yi - 3 : yi + 4, xi - 3 : xi + 4]
        assert m[yi, xi] == window.max()


def test_hair_is_above_eyes_and_outside_skin():
    masks = landmark_stand_in_parser(TEMPLATE_128, 128)
    rows = np.nonzero(masks.m_hair.any(axis=1))[0]
    assert rows.size and rows.max() < TEMPLATE_128[:2, 1].min()
    assert not (masks.m_hair * masks.m_skin).any()


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_masks_in_unit_range(seed):
    r = np.random.default_rng(seed)
    lm = TEMPLATE_128 * r.uniform(0.3, 0.6) + r.uniform(0, 40, size=2) + r.normal(scale=2, size=(5, 2))
    masks = landmark_stand_in_parser(lm, (96, 80))
    stack = masks.stack()
    assert stack.shape == (3, 96, 80)
    assert stack.min() >= 0 and stack.max() <= 1


def test_translation_equivariance():
    a = landmark_stand_in_parser(TEMPLATE_128, 128).stack()
    b = landmark_stand_in_parser(TEMPLATE_128 + [10, 0], 128).stack()
    # interior columns: everything the shift does not push across the border
    assert np.abs(b[:, :, 10:] - a[:, :, :-10]).max() < 1e-6


def test_degenerate_landmarks():
    with pytest.raises(AlignmentError):
        landmark_stand_in_parser([[i, i] for i in range(5)], 32)


def test_landmark_parser_needs_landmarks():
    with pytest.raises(MaskError):
        LandmarkParser()(np.zeros((32, 32, 3)))


# -- attention -----------------------------------------------------------------


def triple(value, shape=(4, 5)):
    return MaskTriple(*(np.full(shape, value) for _ in range(3)))


def test_attention_identity_and_annihilation(rng):
    img = rng.uniform(-1, 1, (4, 5, 3))
    ones = apply_attention(img, triple(1.0))
    zeros = apply_attention(img, triple(0.0))
    for v in (ones.y_hair, ones.y_skin, ones.y_face):
        assert np.array_equal(v, img)
    for v in (zeros.y_hair, zeros.y_skin, zeros.y_face):
        assert not v.any()


def test_attention_scalar_product():
    views = apply_attention(np.full((4, 5, 3), 0.5), triple(0.25))
    assert np.all(views.y_skin == 0.125)


def test_attention_dim_mismatch():
    with pytest.raises(MaskError):
        apply_attention(np.zeros((4, 4, 3)), triple(1.0))


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_attention_is_linear(a, b, seed):
    r = np.random.default_rng(seed)
    y1, y2 = r.uniform(-1, 1, (2, 6, 6, 3))
    masks = MaskTriple(*r.uniform(0, 1, (3, 6, 6)))
    lhs = apply_attention(a * y1 + b * y2, masks)
    v1, v2 = apply_attention(y1, masks), apply_attention(y2, masks)
    for name in ("y_hair", "y_skin", "y_face"):
        assert np.abs(getattr(lhs, name) - (a * getattr(v1, name) + b * getattr(v2, name))).max() < 1e-6


def test_batch_attention_matches_single(rng):
    imgs = rng.uniform(-1, 1, (2, 3, 6, 6))
    masks = rng.uniform(0, 1, (2, 3, 6, 6))
    views = apply_attention_batch(torch.from_numpy(imgs), torch.from_numpy(masks))
    for n in range(2):
        single = apply_attention(imgs[n].transpose(1, 2, 0), MaskTriple.from_stack(masks[n]))
        for k, name in enumerate(("y_hair", "y_skin", "y_face")):
            assert np.allclose(views[k][n].numpy().transpose(1, 2, 0), getattr(single, name))
    with pytest.raises(MaskError):
        apply_attention_batch(torch.zeros(2, 3, 6, 6), torch.zeros(1, 3, 6, 6))
