"""Hair / skin / facial-feature soft masks and their use as hadamard attention."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .dataset import check_landmarks


class MaskError(ValueError):
    pass


@dataclass(frozen=True)
class MaskTriple:
    m_hair: np.ndarray
    m_skin: np.ndarray
    m_face: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.m_hair.shape

    def stack(self) -> np.ndarray:
        """Masks as a (3, H, W) array in hair, skin, face order."""
        return np.stack([self.m_hair, self.m_skin, self.m_face])

    @classmethod
    def from_stack(cls, planes) -> "MaskTriple":
        planes = np.asarray(planes, dtype=np.float64)
        if planes.ndim != 3 or planes.shape[0] != 3:
            raise MaskError(f"expected (3, H, W) mask planes, got shape {planes.shape}")
        return cls(planes[0], planes[1], planes[2])


@dataclass(frozen=True)
class LocalViews:
    y_hair: np.ndarray
    y_skin: np.ndarray
    y_face: np.ndarray


class FacialParser(Protocol):
    """Anything that turns a frontal image (plus optional landmarks) into masks."""

    def __call__(self, image: np.ndarray, landmarks=None) -> MaskTriple: ...


def landmark_stand_in_parser(landmarks, size) -> MaskTriple:
    """Geometric masks built from 5 landmarks, used in place of a learned parser.

    skin: filled ellipse around the landmarks (principal axes of the point
    cloud, scaled to enclose every landmark, then dilated by 25%).
    face: isotropic Gaussians (sigma = 6% of width) at each landmark, summed
    and clipped to 1.
    hair: a band above the eye line, minus the skin mask.
    """
    lm = check_landmarks(landmarks)
    if isinstance(size, int):
        h = w = size
    else:
        h, w = size
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)

    center = lm.mean(axis=0)
    d = lm - center
    cov = d.T @ d / len(lm)
    evals, evecs = np.linalg.eigh(cov)
    axes = np.sqrt(evals)
    # Mahalanobis-like radius in the principal frame
    proj = d @ evecs / axes
    r_max = np.sqrt((proj ** 2).sum(axis=1)).max() * 1.25
    px = np.stack([xs - center[0], ys - center[1]], axis=-1) @ evecs / axes
    m_skin = ((px ** 2).sum(axis=-1) <= r_max ** 2).astype(np.float64)

    sigma = 0.06 * w
    m_face = np.zeros((h, w))
    for x0, y0 in lm:
        m_face += np.exp(-((xs - x0) ** 2 + (ys - y0) ** 2) / (2.0 * sigma ** 2))
    m_face = np.minimum(m_face, 1.0)

    eye_y = 0.5 * (lm[0, 1] + lm[1, 1])
    eye_cx = 0.5 * (lm[0, 0] + lm[1, 0])
    iod = float(np.hypot(*(lm[1] - lm[0])))
    band = (
        (ys >= eye_y - 1.5 * iod)
        & (ys < eye_y - 0.2 * iod)
        & (np.abs(xs - eye_cx) <= 1.5 * iod)
    ).astype(np.float64)
    m_hair = np.clip(band - m_skin, 0.0, 1.0)
    return MaskTriple(m_hair, m_skin, m_face)


class LandmarkParser:
    """FacialParser adapter over :func:`landmark_stand_in_parser`."""

    def __call__(self, image, landmarks=None) -> MaskTriple:
        if landmarks is None:
            raise MaskError("the landmark stand-in parser needs landmarks")
        image = np.asarray(image)
        return landmark_stand_in_parser(landmarks, image.shape[:2])


def parse_masks(frontal_image, parser, landmarks=None) -> MaskTriple:
    """Run ``parser`` on the ground-truth frontal image and clip masks to [0, 1].

    Masks always come from the real frontal view; the same triple is then
    applied to both the real and the synthesized image.
    """
    image = np.asarray(frontal_image)
    masks = parser(image, landmarks)
    hw = image.shape[:2]
    planes = []
    for name in ("m_hair", "m_skin", "m_face"):
        m = np.asarray(getattr(masks, name), dtype=np.float64)
        if m.shape != hw:
            raise MaskError(f"parser mask {name} has shape {m.shape}, image is {hw}")
        planes.append(np.clip(m, 0.0, 1.0))
    return MaskTriple(*planes)


def apply_attention(image, masks: MaskTriple) -> LocalViews:
    """Hadamard product of an H x W x C image with each mask (broadcast over channels)."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.shape[:2] != masks.shape:
        raise MaskError(f"image is {image.shape[:2]} but masks are {masks.shape}")
    return LocalViews(
        image * masks.m_hair[:, :, None],
        image * masks.m_skin[:, :, None],
        image * masks.m_face[:, :, None],
    )


def apply_attention_batch(images, masks):
    """Torch/NumPy batched form: images (N, C, H, W), masks (N, 3, H, W).

    Returns the three views as a tuple, each (N, C, H, W).
    """
    if images.shape[0] != masks.shape[0] or images.shape[-2:] != masks.shape[-2:]:
        raise MaskError(f"images {tuple(images.shape)} and masks {tuple(masks.shape)} disagree")
    return tuple(images * masks[:, k : k + 1] for k in range(3))


__all__ = [
    "FacialParser",
    "LandmarkParser",
    "LocalViews",
    "MaskError",
    "MaskTriple",
    "apply_attention",
    "apply_attention_batch",
    "landmark_stand_in_parser",
    "parse_masks",
]
