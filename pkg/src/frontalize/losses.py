"""Training objectives for the frontalization GAN.

All losses take torch tensors shaped (N, C, H, W) (a single (C, H, W)
image is treated as a batch of one) and reduce with a mean over the batch.
Images are expected in [-1, 1]; nothing is rescaled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F

EPS = 1e-7


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    pixel: float = 20.0
    adv1: float = 1.0
    adv2: float = 1.0
    identity: float = 0.08
    tv: float = 1e-4

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v >= 0 and math.isfinite(v)):
                raise LossError(f"loss weight {f.name} must be a finite nonnegative number, got {v}")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.pixel, self.adv1, self.adv2, self.identity, self.tv)


@dataclass(frozen=True)
class LossBreakdown:
    l_pixel: float
    l_adv1: float
    l_adv2: float
    l_id: float
    l_tv: float
    total: float

    def parts(self) -> tuple[float, float, float, float, float]:
        return (self.l_pixel, self.l_adv1, self.l_adv2, self.l_id, self.l_tv)

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


PART_NAMES = ("l_pixel", "l_adv1", "l_adv2", "l_id", "l_tv")


def _batched(x) -> torch.Tensor:
    x = torch.as_tensor(x)
    if x.dim() == 3:
        x = x.unsqueeze(0)
    if x.dim() != 4:
        raise LossError(f"expected (N, C, H, W) or (C, H, W), got shape {tuple(x.shape)}")
    return x


def pyramid(image, scales: int = 3) -> list[torch.Tensor]:
    """Image at full, 1/2 and 1/4 resolution by non-overlapping average pooling."""
    x = _batched(image)
    h, w = x.shape[-2:]
    out = [x]
    for i in range(1, scales):
        f = 2 ** i
        kernel = (min(f, h), min(f, w))
        out.append(F.avg_pool2d(x, kernel_size=kernel, stride=kernel))
    return out


def weighted_sum(parts, weights: LossWeights):
    """lambda-weighted sum in the fixed order pixel, adv1, adv2, id, tv."""
    lam = weights.as_tuple()
    total = lam[0] * parts[0]
    for k in range(1, 5):
        total = total + lam[k] * parts[k]
    return total


def pixel_loss(y_hat, y) -> torch.Tensor:
    """Mean absolute error averaged over a three-level image pyramid."""
    a, b = _batched(y_hat), _batched(y)
    if a.shape != b.shape:
        raise LossError(f"pixel_loss shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    total = 0.0
    for pa, pb in zip(pyramid(a), pyramid(b)):
        total = total + (pa - pb).abs().mean()
    return total / 3.0


def tv_loss(y_hat) -> torch.Tensor:
    x = _batched(y_hat)
    h, w = x.shape[-2:]
    if h < 2 or w < 2:
        raise LossError(f"tv_loss needs H, W >= 2, got {h}x{w}")
    dw = (x[..., :, 1:] - x[..., :, :-1]).abs().sum(dim=(1, 2, 3))
    dh = (x[..., 1:, :] - x[..., :-1, :]).abs().sum(dim=(1, 2, 3))
    return (dw + dh).mean()


def identity_loss(y_hat, y, extractor) -> torch.Tensor:
    """Squared L2 distance of embeddings plus squared Frobenius distance of feature maps.

    ``extractor.features(x)`` must return ``(phi_f, phi_p)`` with a leading
    batch dimension. The extractor is never trained; gradients only flow
    back into ``y_hat``.
    """
    f_hat, p_hat = extractor.features(_batched(y_hat))
    with torch.no_grad():
        f_real, p_real = extractor.features(_batched(y))
    if f_hat.shape != f_real.shape or p_hat.shape != p_real.shape:
        raise LossError(
            f"extractor outputs disagree: {tuple(f_hat.shape)}/{tuple(p_hat.shape)} vs "
            f"{tuple(f_real.shape)}/{tuple(p_real.shape)}"
        )
    n = f_hat.shape[0]
    df = (f_real - f_hat).reshape(n, -1).pow(2).sum(dim=1)
    dp = (p_real - p_hat).reshape(n, -1).pow(2).sum(dim=1)
    return (df + dp).mean()


def adversarial_loss(d_real, d_fake, side: str) -> torch.Tensor:
    """Binary cross-entropy GAN loss on discriminator probabilities.

    side="discriminator": -log D(real) - log(1 - D(fake))
    side="generator":     -log D(fake)  (non-saturating form)
    """
    if side == "discriminator":
        dr = torch.as_tensor(d_real).clamp(EPS, 1.0 - EPS)
        df = torch.as_tensor(d_fake).clamp(EPS, 1.0 - EPS)
        return (-torch.log(dr) - torch.log1p(-df)).mean()
    if side == "generator":
        df = torch.as_tensor(d_fake).clamp(EPS, 1.0 - EPS)
        return (-torch.log(df)).mean()
    raise ValueError(f"side must be 'discriminator' or 'generator', got {side!r}")


def total_generator_loss(parts, weights: LossWeights | None = None) -> LossBreakdown:
    """Weighted total of the five generator parts, as plain floats.

    ``parts`` is a mapping with keys l_pixel, l_adv1, l_adv2, l_id, l_tv or a
    5-sequence in that order. Adversarial parts are the generator-side values.
    """
    weights = weights or LossWeights()
    if isinstance(parts, dict):
        values = [parts[k] for k in PART_NAMES]
    else:
        values = list(parts)
        if len(values) != 5:
            raise LossError(f"expected 5 loss parts, got {len(values)}")
    values = [float(v.item()) if isinstance(v, torch.Tensor) else float(v) for v in values]
    for name, v in zip(PART_NAMES, values):
        if not math.isfinite(v):
            raise LossError(f"non-finite loss part {name}: {v}")
    return LossBreakdown(*values, total=weighted_sum(values, weights))
