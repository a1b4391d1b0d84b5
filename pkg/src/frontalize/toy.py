"""Procedural toy corpus: textured identities seen under shear/shift "poses".

Nothing here is photorealistic. Each identity is a smooth textured ellipse on
a flat background; yaw shears and shifts it horizontally, pitch shifts it
vertically, lighting adds a brightness ramp and attributes stamp a glyph.
Because every warp is known in closed form, landmarks are exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from .dataset import (
    ATTRIBUTES,
    ILLUMINATIONS,
    PROTOCOL_POSES,
    ImageRecord,
    in_taxonomy,
    template_for_size,
    write_manifest,
)
from .images import write_image
from .networks import ConvIdentityExtractor

SHEAR_PER_SIN_YAW = 0.3
SHIFT_PER_SIN_YAW = 0.12  # fraction of image size
SHIFT_PER_SIN_PITCH = 0.15
BACKGROUND = -0.2

_LIGHT_DIRECTION = {
    "above": (0.0, -1.0, 0.0),
    "front": (0.0, 0.0, 0.10),
    "front_above": (0.0, -0.6, 0.05),
    "front_below": (0.0, 0.6, 0.05),
    "behind": (0.0, 0.0, -0.15),
    "left": (-1.0, 0.0, 0.0),
    "right": (1.0, 0.0, 0.0),
}


@dataclass
class ToySpec:
    n_identities: int = 16
    poses: list = field(default_factory=lambda: [(0.0, 0.0), (45.0, 0.0), (-45.0, 0.0)])
    attributes: list = field(default_factory=lambda: ["neutral"])
    illuminations: list = field(default_factory=lambda: ["above"])
    size: int = 32
    seed: int = 0
    first_subject_id: int = 1

    def __post_init__(self):
        self.poses = [(float(y), float(p)) for y, p in self.poses]
        if self.n_identities < 2:
            raise ValueError("n_identities must be >= 2")
        if self.size not in (32, 64, 128):
            raise ValueError(f"size must be 32, 64 or 128, got {self.size}")
        bad = [p for p in self.poses if not in_taxonomy(*p)]
        if bad:
            raise ValueError(f"poses outside the 62-pose taxonomy: {bad}")
        for a in self.attributes:
            if a not in ATTRIBUTES:
                raise ValueError(f"unknown attribute {a!r}")
        for i in self.illuminations:
            if i not in ILLUMINATIONS:
                raise ValueError(f"unknown illumination {i!r}")

    @classmethod
    def from_json(cls, path) -> "ToySpec":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))

    def to_json(self) -> dict:
        d = asdict(self)
        d["poses"] = [list(p) for p in self.poses]
        return d


def warp_params(yaw: float, pitch: float, size: int) -> tuple[float, float, float]:
    """(shear, x shift, y shift) in pixels for a pose."""
    sy = math.sin(math.radians(yaw))
    return (
        SHEAR_PER_SIN_YAW * sy,
        SHIFT_PER_SIN_YAW * size * sy,
        SHIFT_PER_SIN_PITCH * size * math.sin(math.radians(pitch)),
    )


def warp_points(points, yaw: float, pitch: float, size: int) -> np.ndarray:
    """Forward warp: frontal pixel coordinates -> posed pixel coordinates."""
    pts = np.asarray(points, dtype=np.float64)
    shear, dx, dy = warp_params(yaw, pitch, size)
    c = (size - 1) / 2.0
    x, y = pts[..., 0], pts[..., 1]
    return np.stack([x + shear * (y - c) + dx, y + dy], axis=-1)


def warp_image(image, yaw: float, pitch: float, inverse: bool = False) -> np.ndarray:
    """Resample ``image`` (H x W x C) into the posed frame, or back when ``inverse``."""
    image = np.asarray(image, dtype=np.float64)
    size = image.shape[0]
    shear, dx, dy = warp_params(yaw, pitch, size)
    c = (size - 1) / 2.0
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    if not inverse:
        # destination (x', y') samples frontal at y = y' - dy, x = x' - shear (y - c) - dx
        src_y = ys - dy
        src_x = xs - shear * (src_y - c) - dx
    else:
        src_y = ys + dy
        src_x = xs + shear * (ys - c) + dx
    out = np.empty_like(image)
    for ch in range(image.shape[2]):
        out[:, :, ch] = map_coordinates(image[:, :, ch], [src_y, src_x], order=1, mode="nearest")
    return out


def _identity_params(seed: int, subject_id: int) -> dict:
    rng = np.random.default_rng([seed, subject_id])
    return {
        "skin": rng.uniform(-0.1, 0.6, size=3),
        "blobs": [
            (rng.uniform(0.3, 0.7), rng.uniform(0.25, 0.8), rng.uniform(0.06, 0.14), rng.uniform(-0.5, 0.5, size=3))
            for _ in range(4)
        ],
        "stripe_angle": rng.uniform(0, math.pi),
        "stripe_freq": rng.uniform(1.5, 3.5),
        "stripe_amp": rng.uniform(0.08, 0.2),
        "stripe_phase": rng.uniform(0, 2 * math.pi),
        "hair": rng.uniform(-0.9, -0.3, size=3),
    }


def _soft(d, width):
    return 1.0 / (1.0 + np.exp(d / width))


def frontal_identity(seed: int, subject_id: int, size: int, attribute: str = "neutral", illumination: str = "above") -> np.ndarray:
    """Frontal H x W x 3 image of one identity in [-1, 1]."""
    p = _identity_params(seed, subject_id)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    u, v = (xs + 0.5) / size, (ys + 0.5) / size
    img = np.full((size, size, 3), BACKGROUND)

    # hair cap behind the face
    hair_d = np.sqrt(((u - 0.5) / 0.42) ** 2 + ((v - 0.42) / 0.42) ** 2) - 1.0
    hair = _soft(hair_d, 0.04)[..., None]
    img = img * (1 - hair) + p["hair"] * hair

    face_d = np.sqrt(((u - 0.5) / 0.36) ** 2 + ((v - 0.58) / 0.42) ** 2) - 1.0
    face = _soft(face_d, 0.04)[..., None]
    tex = np.broadcast_to(p["skin"], img.shape).copy()
    for bx, by, br, col in p["blobs"]:
        g = np.exp(-((u - bx) ** 2 + (v - by) ** 2) / (2 * br ** 2))
        tex += g[..., None] * col
    a = p["stripe_angle"]
    stripes = np.sin(2 * math.pi * p["stripe_freq"] * (u * math.cos(a) + v * math.sin(a)) + p["stripe_phase"])
    tex += p["stripe_amp"] * stripes[..., None]
    img = img * (1 - face) + tex * face

    lm = template_for_size(size)
    feat_r = 0.035 * size
    for k, (lx, ly) in enumerate(lm):
        g = np.exp(-((xs - lx) ** 2 + (ys - ly) ** 2) / (2 * feat_r ** 2))[..., None]
        level = -0.8 if k < 2 else (0.1 if k == 2 else -0.5)
        img = img * (1 - g) + level * g

    img = _stamp_attribute(img, attribute, lm, xs, ys, size)
    dx, dy, offset = _LIGHT_DIRECTION[illumination]
    ramp = 0.15 * (dx * (2 * u - 1) + dy * (2 * v - 1)) + offset
    img = img + ramp[..., None]
    return np.clip(img, -1.0, 1.0)


def _stamp_attribute(img, attribute, lm, xs, ys, size):
    if attribute == "neutral":
        return img
    w = 0.04 * size
    if attribute == "glasses":
        ey = 0.5 * (lm[0, 1] + lm[1, 1])
        d = np.abs(ys - ey) - 0.06 * size
        inside_x = (xs > lm[0, 0] - 0.1 * size) & (xs < lm[1, 0] + 0.1 * size)
        g = (_soft(d, w / 2) * inside_x)[..., None]
        return img * (1 - g) + (-0.9) * g
    mouth = 0.5 * (lm[3] + lm[4])
    if attribute == "smile":
        r = np.sqrt((xs - mouth[0]) ** 2 + (ys - mouth[1] + 0.08 * size) ** 2)
        d = np.abs(r - 0.12 * size) - 0.015 * size
        g = (_soft(d, w / 3) * (ys > mouth[1] - 0.02 * size))[..., None]
        return img * (1 - g) + 0.8 * g
    if attribute == "surprise":
        r = np.sqrt((xs - mouth[0]) ** 2 + (ys - mouth[1]) ** 2)
        g = _soft(r - 0.06 * size, w / 3)[..., None]
        return img * (1 - g) + (-0.95) * g
    raise ValueError(f"unknown attribute {attribute!r}")


def image_name(subject_id: int, yaw: float, pitch: float, attribute: str, illumination: str) -> str:
    return f"s{subject_id:04d}/y{yaw:+06.1f}_p{pitch:+05.1f}_{attribute}_{illumination}.png"


def render(spec: ToySpec, subject_id: int, yaw: float, pitch: float, attribute: str, illumination: str) -> np.ndarray:
    frontal = frontal_identity(spec.seed, subject_id, spec.size, attribute, illumination)
    if yaw == 0.0 and pitch == 0.0:
        return frontal
    return warp_image(frontal, yaw, pitch)


def toy_records(spec: ToySpec) -> list[ImageRecord]:
    records = []
    base_lm = template_for_size(spec.size)
    for k in range(spec.n_identities):
        sid = spec.first_subject_id + k
        for yaw, pitch in spec.poses:
            lm = warp_points(base_lm, yaw, pitch, spec.size)
            for attr in spec.attributes:
                for illum in spec.illuminations:
                    records.append(
                        ImageRecord(
                            image_ref=image_name(sid, yaw, pitch, attr, illum),
                            subject_id=sid,
                            yaw_deg=yaw,
                            pitch_deg=pitch,
                            attribute=attr,
                            illumination=illum,
                            landmarks=tuple((float(x), float(y)) for x, y in lm),
                            image_size=(spec.size, spec.size),
                        )
                    )
    return records


def generate_toy_dataset(spec: ToySpec, out_dir) -> Path:
    """Render every record of ``spec`` under ``out_dir``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = toy_records(spec)
    for rec in records:
        path = out_dir / rec.image_ref
        path.parent.mkdir(parents=True, exist_ok=True)
        write_image(path, render(spec, rec.subject_id, rec.yaw_deg, rec.pitch_deg, rec.attribute, rec.illumination))
    (out_dir / "toyspec.json").write_text(json.dumps(spec.to_json(), indent=1) + "\n", encoding="utf-8")
    return write_manifest(records, out_dir / "manifest.jsonl")


def synthetic_manifest(
    n_subjects: int = 229,
    poses=PROTOCOL_POSES,
    attributes=ATTRIBUTES,
    illuminations=ILLUMINATIONS,
    size: int = 128,
) -> list[ImageRecord]:
    """Image-free manifest covering every (subject, pose, attribute, illumination)."""
    base_lm = template_for_size(size)
    pose_lm = {
        p: tuple((float(x), float(y)) for x, y in warp_points(base_lm, p[0], p[1], size)) for p in poses
    }
    return [
        ImageRecord(
            image_ref=image_name(sid, yaw, pitch, attr, illum),
            subject_id=sid,
            yaw_deg=yaw,
            pitch_deg=pitch,
            attribute=attr,
            illumination=illum,
            landmarks=pose_lm[(yaw, pitch)],
            image_size=(size, size),
        )
        for sid in range(1, n_subjects + 1)
        for yaw, pitch in poses
        for attr in attributes
        for illum in illuminations
    ]


def toy_identity_extractor(seed: int = 0) -> ConvIdentityExtractor:
    """Frozen seeded conv encoder; embedding dimension is 128."""
    return ConvIdentityExtractor(base=16, stages=3, seed=seed)
