"""
Parsing masks, attention views and the five loss terms
======================================================

A toy frontal face gets hair / skin / feature masks from its 5 landmarks.
Each mask multiplies the image elementwise to give the local views the
second discriminator looks at. We then score a blurred copy against the
original with every generator loss term.
"""

from pathlib import Path

import numpy as np
import torch
from scipy.ndimage import gaussian_filter

from frontalize.dataset import template_for_size
from frontalize.images import image_grid, write_image
from frontalize.losses import LossWeights, identity_loss, pixel_loss, total_generator_loss, tv_loss
from frontalize.networks import GlobalDiscriminator, LocalDiscriminator
from frontalize.parsing import LandmarkParser, apply_attention, parse_masks
from frontalize.toy import ToySpec, render, toy_identity_extractor

out = Path("demo-output")
out.mkdir(exist_ok=True)

spec = ToySpec(size=128)
y = render(spec, subject_id=3, yaw=0, pitch=0, attribute="glasses", illumination="left")
landmarks = template_for_size(128)

masks = parse_masks(y, LandmarkParser(), landmarks)
for name in ("m_hair", "m_skin", "m_face"):
    m = getattr(masks, name)
    print(f"{name}: area {m.sum():8.1f} px, range [{m.min():.2f}, {m.max():.2f}]")

views = apply_attention(y, masks)
as_img = lambda m: np.repeat(m[:, :, None] * 2 - 1, 3, axis=2)
grid = image_grid(
    [
        [y, as_img(masks.m_hair), as_img(masks.m_skin), as_img(masks.m_face)],
        [y, views.y_hair, views.y_skin, views.y_face],
    ]
)
print("wrote", write_image(out / "masks.png", grid))

# A stand-in "synthesized" image: the real one, blurred.
y_hat = gaussian_filter(y, sigma=(1.5, 1.5, 0))
t = lambda a: torch.from_numpy(a.transpose(2, 0, 1).copy()).float()[None]
extractor = toy_identity_extractor(0)
d1, d2 = GlobalDiscriminator(seed=1), LocalDiscriminator(seed=2)
m = torch.from_numpy(masks.stack()).float()[None]
with torch.no_grad():
    fake_views = [t(y_hat) * m[:, k : k + 1] for k in range(3)]
    parts = [
        pixel_loss(t(y_hat), t(y)),
        -torch.log(d1(t(y_hat))).mean(),
        -torch.log(d2(*fake_views)).mean(),
        identity_loss(t(y_hat), t(y), extractor),
        tv_loss(t(y_hat)),
    ]
breakdown = total_generator_loss(parts, LossWeights())
for k, v in breakdown.as_dict().items():
    print(f"  {k:8s} {v:10.4f}")

# Blurring lowers total variation: compare against the sharp image.
print("TV sharp vs blurred:", round(tv_loss(t(y)).item(), 1), round(tv_loss(t(y_hat)).item(), 1))
