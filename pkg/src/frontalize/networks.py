"""Generator, global and parsing-guided local discriminators, frozen identity extractor.

Layouts are torch-native: images are (N, C, H, W) tensors in [-1, 1].
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn


class ShapeError(ValueError):
    pass


def init_params(module: nn.Module, seed: int) -> nn.Module:
    """Fan-in scaled uniform init of every conv / linear layer, driven by ``seed``.

    Layers are visited in registration order, so the same architecture and
    seed always give bit-identical parameters.
    """
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                w = m.weight
                if isinstance(m, nn.ConvTranspose2d):
                    fan_in = w.shape[0] * w[0, 0].numel()
                else:
                    fan_in = w[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                w.copy_((torch.rand(w.shape, generator=gen, dtype=torch.float64) * 2 - 1) * bound)
                if m.bias is not None:
                    m.bias.copy_((torch.rand(m.bias.shape, generator=gen, dtype=torch.float64) * 2 - 1) * bound)
    return module


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def _down(cin, cout, norm: bool):
    # a bias before instance norm is cancelled by the mean subtraction
    layers = [nn.Conv2d(cin, cout, 4, stride=2, padding=1, bias=not norm)]
    if norm:
        layers.append(nn.InstanceNorm2d(cout))
    layers.append(nn.LeakyReLU(0.2))
    return nn.Sequential(*layers)


class _Residual(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(ch, ch, 3, padding=1, bias=False),
            nn.InstanceNorm2d(ch),
            nn.LeakyReLU(0.2),
            nn.Conv2d(ch, ch, 3, padding=1, bias=False),
            nn.InstanceNorm2d(ch),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """U-Net style encoder/decoder with skips and a residual bottleneck.

    Stride-2 stages shrink the input to an 8 x 8 bottleneck: four stages at
    128, five at 256, two at toy size 32. Encoder and
    bottleneck use instance normalization (no running statistics, so
    inference is a pure function of parameters and input). The decoder is
    left unnormalized so absolute colour from the skips survives.
    """

    arch = "generator"

    def __init__(self, size: int = 128, base: int = 32, n_res: int = 2, max_ch: int = 256, seed: int = 0):
        super().__init__()
        if size not in (32, 64, 128, 256):
            raise ShapeError(f"generator size must be 32, 64, 128 or 256, got {size}")
        self.config = {"size": size, "base": base, "n_res": n_res, "max_ch": max_ch, "seed": seed}
        self.size = size
        n_down = int(math.log2(size)) - 3
        chans = [min(base * 2 ** i, max_ch) for i in range(n_down + 1)]
        self.stem = nn.Sequential(nn.Conv2d(3, chans[0], 3, padding=1), nn.LeakyReLU(0.2))
        self.downs = nn.ModuleList(_down(chans[i], chans[i + 1], norm=True) for i in range(n_down))
        self.bottleneck = nn.Sequential(*[_Residual(chans[-1]) for _ in range(n_res)])
        ups = []
        for i in range(n_down, 0, -1):
            ups.append(
                nn.ModuleDict(
                    {
                        "up": nn.ConvTranspose2d(chans[i], chans[i - 1], 4, stride=2, padding=1),
                        "fuse": nn.Sequential(
                            nn.Conv2d(2 * chans[i - 1], chans[i - 1], 3, padding=1),
                            nn.LeakyReLU(0.2),
                        ),
                    }
                )
            )
        self.ups = nn.ModuleList(ups)
        self.up_act = nn.LeakyReLU(0.2)
        self.head = nn.Conv2d(chans[0], 3, 3, padding=1)
        init_params(self, seed)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[-2:] != (self.size, self.size):
            raise ShapeError(f"generator expects (N, 3, {self.size}, {self.size}), got {tuple(x.shape)}")
        h = self.stem(x)
        skips = [h]
        for down in self.downs:
            h = down(h)
            skips.append(h)
        h = self.bottleneck(h)
        for up, skip in zip(self.ups, reversed(skips[:-1])):
            h = self.up_act(up["up"](h))
            h = up["fuse"](torch.cat([h, skip], dim=1))
        return torch.tanh(self.head(h))


class _Encoder(nn.Sequential):
    def __init__(self, cin, base, stages, max_ch=256):
        layers = []
        c = cin
        for i in range(stages):
            cout = min(base * 2 ** i, max_ch)
            layers.append(_down(c, cout, norm=False))
            c = cout
        super().__init__(*layers)
        self.out_channels = c


class GlobalDiscriminator(nn.Module):
    """Strided conv stack -> global average pool -> linear -> sigmoid."""

    arch = "global_disc"

    def __init__(self, base: int = 32, stages: int = 4, seed: int = 0):
        super().__init__()
        self.config = {"base": base, "stages": stages, "seed": seed}
        self.features = _Encoder(3, base, stages)
        self.fc = nn.Linear(self.features.out_channels, 1)
        init_params(self, seed)

    def logits(self, x):
        h = self.features(x).mean(dim=(2, 3))
        return self.fc(h).squeeze(1)

    def forward(self, x):
        return torch.sigmoid(self.logits(x))


class LocalDiscriminator(nn.Module):
    """Three unshared encoders (hair, skin, facial features) fused by concatenation."""

    arch = "local_disc"
    REGIONS = ("hair", "skin", "face")

    def __init__(self, base: int = 16, fuse_ch: int = 64, seed: int = 0):
        super().__init__()
        self.config = {"base": base, "fuse_ch": fuse_ch, "seed": seed}
        self.subnets = nn.ModuleDict({r: _Encoder(3, base, 3) for r in self.REGIONS})
        c = self.subnets["hair"].out_channels * 3
        self.fuse = nn.Sequential(
            nn.Conv2d(c, fuse_ch, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(fuse_ch, fuse_ch, 3, padding=1),
            nn.LeakyReLU(0.2),
        )
        self.fc = nn.Linear(fuse_ch, 1)
        init_params(self, seed)

    def logits(self, hair, skin, face):
        if not (hair.shape == skin.shape == face.shape):
            raise ShapeError(
                f"local views differ in shape: {tuple(hair.shape)}, {tuple(skin.shape)}, {tuple(face.shape)}"
            )
        feats = [self.subnets[r](v) for r, v in zip(self.REGIONS, (hair, skin, face))]
        h = self.fuse(torch.cat(feats, dim=1)).mean(dim=(2, 3))
        return self.fc(h).squeeze(1)

    def forward(self, hair, skin, face):
        return torch.sigmoid(self.logits(hair, skin, face))


class IdentityExtractor(nn.Module):
    """Interface: ``features(x) -> (phi_f, phi_p)``; ``embed(x) -> phi_f``.

    Subclasses are frozen: parameters never require grad and the module
    stays in eval mode.
    """

    arch = "identity"
    embedding_dim: int

    def features(self, x):
        raise NotImplementedError

    def embed(self, x):
        return self.features(x)[0]

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self

    def train(self, mode: bool = True):
        # frozen extractors never switch to training mode
        return super().train(False)


class ConvIdentityExtractor(IdentityExtractor):
    """Small randomly-initialized conv encoder standing in for a pretrained face network.

    phi_p is the last feature map, phi_f its global average.
    """

    def __init__(self, base: int = 16, stages: int = 3, seed: int = 0):
        super().__init__()
        self.config = {"base": base, "stages": stages, "seed": seed}
        layers = [nn.Conv2d(3, base, 3, padding=1), nn.ReLU()]
        c = base
        for i in range(stages):
            cout = base * 2 ** (i + 1)
            layers += [nn.Conv2d(c, cout, 3, stride=2, padding=1), nn.ReLU()]
            c = cout
        self.body = nn.Sequential(*layers)
        self.embedding_dim = c
        init_params(self, seed)
        self.freeze()

    def features(self, x):
        if x.dim() == 3:
            x = x.unsqueeze(0)
        fmap = self.body(x)
        return fmap.mean(dim=(2, 3)), fmap


ARCHITECTURES = {
    cls.__name__: cls
    for cls in (Generator, GlobalDiscriminator, LocalDiscriminator, ConvIdentityExtractor)
}


def build_model(class_name: str, config: dict) -> nn.Module:
    try:
        cls = ARCHITECTURES[class_name]
    except KeyError:
        raise ValueError(f"unknown architecture {class_name!r}") from None
    return cls(**config)


def architecture_id(models: dict[str, nn.Module]) -> str:
    parts = []
    for name in sorted(models):
        m = models[name]
        cfg = ",".join(f"{k}={v}" for k, v in sorted(m.config.items()) if k != "seed")
        parts.append(f"{name}:{type(m).__name__}({cfg})")
    return ";".join(parts)
