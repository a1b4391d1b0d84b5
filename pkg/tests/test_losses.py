import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from frontalize import oracles
from frontalize.losses import (
    LossBreakdown,
    LossError,
    LossWeights,
    adversarial_loss,
    identity_loss,
    pixel_loss,
    pyramid,
    total_generator_loss,
    tv_loss,
    weighted_sum,
)
from frontalize.verify import loss_gradient_errors


class PixelExtractor:
    """phi_p is the image itself, phi_f its per-channel global mean."""

    def features(self, x):
        return x.mean(dim=(2, 3)), x


def chw(a):
    return torch.from_numpy(np.ascontiguousarray(np.asarray(a, dtype=np.float64).transpose(2, 0, 1)))


# -- pyramid -------------------------------------------------------------------


def test_pyramid_dims():
    assert [p.shape[-1] for p in pyramid(torch.zeros(3, 128, 128))] == [128, 64, 32]


def test_pyramid_constant():
    for p in pyramid(torch.full((3, 16, 12), 0.25, dtype=torch.float64)):
        assert torch.all(p == 0.25)


def test_pyramid_2x2():
    scales = pyramid(torch.tensor([[[0.0, 1.0], [2.0, 3.0]]]))
    assert scales[1].shape[-2:] == (1, 1) and scales[1].item() == 1.5
    assert scales[2].item() == 1.5  # floored at the image size


# -- pixel ---------------------------------------------------------------------


def test_pixel_identical_is_zero(rng):
    y = torch.from_numpy(rng.uniform(-1, 1, (3, 8, 8)))
    assert pixel_loss(y, y).item() == 0


@pytest.mark.parametrize("shape", [(1, 1, 1), (3, 8, 8), (2, 5, 7), (1, 3, 128, 128)])
def test_pixel_ones_vs_zeros(shape):
    assert pixel_loss(torch.ones(shape), torch.zeros(shape)).item() == pytest.approx(1.0, abs=1e-12)


def test_pixel_shape_mismatch():
    with pytest.raises(LossError):
        pixel_loss(torch.zeros(3, 4, 4), torch.zeros(3, 4, 5))


@given(st.integers(0, 10_000), st.integers(1, 9), st.integers(1, 9))
@settings(max_examples=40, deadline=None)
def test_pixel_matches_oracle(seed, h, w):
    r = np.random.default_rng(seed)
    a, b = r.uniform(-1, 1, (2, h, w, 3))
    fast = pixel_loss(chw(a), chw(b)).item()
    assert fast == pytest.approx(oracles.pixel_loss_loop(a, b), rel=1e-9)


# -- total variation -----------------------------------------------------------


def test_tv_fixture_is_six():
    assert tv_loss(torch.tensor([[[0.0, 1.0], [2.0, 3.0]]])).item() == 6.0


def test_tv_constant_is_zero():
    assert tv_loss(torch.full((3, 5, 5), 0.7)).item() == 0


def test_tv_needs_two_pixels():
    with pytest.raises(LossError):
        tv_loss(torch.zeros(3, 1, 5))


@given(st.integers(0, 10_000), st.floats(-5, 5))
@settings(max_examples=40, deadline=None)
def test_tv_shift_invariant_and_matches_oracle(seed, c):
    a = np.random.default_rng(seed).uniform(-1, 1, (6, 7, 3))
    base = tv_loss(chw(a)).item()
    assert tv_loss(chw(a) + c).item() == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert base == pytest.approx(oracles.tv_loss_loop(a), rel=1e-9)


def test_batch_mean():
    a = torch.zeros(2, 1, 2, 2, dtype=torch.float64)
    a[1] = torch.tensor([[0.0, 1.0], [2.0, 3.0]])
    assert tv_loss(a).item() == 3.0


# -- identity ------------------------------------------------------------------


def test_identity_closed_form():
    y, y_hat = torch.zeros(1, 2, 2, dtype=torch.float64), torch.ones(1, 2, 2, dtype=torch.float64)
    assert identity_loss(y_hat, y, PixelExtractor()).item() == 5.0


def test_identity_zero_for_equal_inputs(rng):
    y = torch.from_numpy(rng.uniform(-1, 1, (3, 8, 8)))
    assert identity_loss(y, y, PixelExtractor()).item() == 0


def test_identity_shape_mismatch():
    class Bad:
        calls = 0

        def features(self, x):
            Bad.calls += 1
            return torch.zeros(1, Bad.calls), x

    with pytest.raises(LossError):
        identity_loss(torch.zeros(1, 2, 2), torch.zeros(1, 2, 2), Bad())


def test_identity_gradient_only_reaches_y_hat():
    y = torch.zeros(1, 2, 2, dtype=torch.float64, requires_grad=True)
    y_hat = torch.ones(1, 2, 2, dtype=torch.float64, requires_grad=True)
    identity_loss(y_hat, y, PixelExtractor()).backward()
    assert y.grad is None and y_hat.grad is not None


# -- adversarial ---------------------------------------------------------------


def test_adversarial_values():
    half = torch.tensor([0.5], dtype=torch.float64)
    assert adversarial_loss(half, half, "discriminator").item() == pytest.approx(2 * math.log(2), abs=1e-12)
    assert adversarial_loss(None, half, "generator").item() == pytest.approx(math.log(2), abs=1e-12)


def test_adversarial_perfect_limit_and_clamping():
    d = adversarial_loss(torch.tensor([1.0]), torch.tensor([0.0]), "discriminator").item()
    assert 0 <= d < 1e-6
    worst = adversarial_loss(torch.tensor([0.0]), torch.tensor([1.0]), "discriminator").item()
    assert math.isfinite(worst) and worst > 0


def test_adversarial_bad_side():
    with pytest.raises(ValueError):
        adversarial_loss(None, torch.tensor([0.5]), "both")


@given(st.floats(0, 1), st.floats(0, 1))
def test_adversarial_nonnegative(a, b):
    assert adversarial_loss(torch.tensor([a]), torch.tensor([b]), "discriminator").item() >= 0
    assert adversarial_loss(None, torch.tensor([b]), "generator").item() >= 0


# -- total ---------------------------------------------------------------------


def test_default_weights():
    assert LossWeights().as_tuple() == (20, 1, 1, 0.08, 1e-4)
    with pytest.raises(ValueError):
        LossWeights(pixel=-1)


def test_total_examples():
    assert total_generator_loss([1, 1, 1, 1, 1]).total == pytest.approx(22.0801, abs=1e-12)
    assert total_generator_loss([0] * 5).total == 0
    parts = [0.37, 2.0, 3.0, 4.0, 5.0]
    assert total_generator_loss(parts, LossWeights(1, 0, 0, 0, 0)).total == 0.37


def test_total_from_mapping():
    parts = {"l_pixel": 1.0, "l_adv1": 2.0, "l_adv2": 3.0, "l_id": 4.0, "l_tv": 5.0}
    out = total_generator_loss(parts)
    assert isinstance(out, LossBreakdown) and out.l_id == 4.0


@pytest.mark.parametrize("k, name", list(enumerate(["l_pixel", "l_adv1", "l_adv2", "l_id", "l_tv"])))
def test_total_rejects_non_finite(k, name):
    parts = [1.0] * 5
    parts[k] = float("nan")
    with pytest.raises(LossError, match=name):
        total_generator_loss(parts)


@given(st.lists(st.floats(0, 1e3), min_size=5, max_size=5), st.lists(st.floats(0, 50), min_size=5, max_size=5))
def test_total_is_fixed_order_sum(parts, lam):
    w = LossWeights(*lam)
    expected = lam[0] * parts[0] + lam[1] * parts[1] + lam[2] * parts[2] + lam[3] * parts[3] + lam[4] * parts[4]
    assert total_generator_loss(parts, w).total == expected
    # the tensor path used for backprop agrees with the float path
    assert weighted_sum([torch.tensor(p, dtype=torch.float64) for p in parts], w).item() == expected


# -- gradients -----------------------------------------------------------------


def test_loss_gradients_match_finite_differences():
    errors = loss_gradient_errors(seed=5)
    assert set(errors) == {"pixel", "tv", "identity", "adversarial"}
    assert max(errors.values()) < 1e-3
