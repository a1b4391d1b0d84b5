"""Manifest records, pose taxonomy, face alignment and the train/probe/gallery protocol."""

from __future__ import annotations

import json
import math
import random
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from skimage.transform import SimilarityTransform, warp

ATTRIBUTES = ("neutral", "glasses", "smile", "surprise")
ILLUMINATIONS = (
    "above",
    "front",
    "front_above",
    "front_below",
    "behind",
    "left",
    "right",
)

# 62 camera positions of the capture rig, keyed by signed pitch.
_YAWS_13 = (-90.0, -75.0, -60.0, -45.0, -30.0, -15.0, 0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0)
_YAWS_9 = (-90.0, -67.5, -45.0, -22.5, 0.0, 22.5, 45.0, 67.5, 90.0)
YAWS_BY_PITCH: dict[float, tuple[float, ...]] = {
    45.0: (-90.0, -45.0, 0.0, 45.0, 90.0),
    30.0: _YAWS_9,
    15.0: _YAWS_13,
    0.0: _YAWS_13,
    -15.0: _YAWS_13,
    -30.0: _YAWS_9,
}
POSES: tuple[tuple[float, float], ...] = tuple(
    (yaw, pitch) for pitch, yaws in YAWS_BY_PITCH.items() for yaw in yaws
)
# The experimental protocol drops the +45 pitch layer: 57 poses.
PROTOCOL_POSES: tuple[tuple[float, float], ...] = tuple(p for p in POSES if p[1] != 45.0)
_POSE_SET = frozenset(POSES)

# 5-point template for 128x128 crops; x2 for 256.
TEMPLATE_128 = np.array(
    [
        [38.3, 51.7],  # left eye
        [89.7, 51.5],  # right eye
        [64.0, 71.7],  # nose tip
        [46.6, 92.4],  # left mouth corner
        [81.4, 92.2],  # right mouth corner
    ]
)

GALLERY_POSE = (0.0, 0.0)
GALLERY_ATTRIBUTE = "neutral"
GALLERY_ILLUMINATION = "above"


class ManifestError(ValueError):
    """Malformed manifest row or pose outside the taxonomy."""


class AlignmentError(ValueError):
    pass


class ProtocolError(ValueError):
    pass


def template_for_size(size: int) -> np.ndarray:
    """Canonical landmark template scaled to a square crop of ``size`` pixels."""
    return TEMPLATE_128 * (size / 128.0)


def in_taxonomy(yaw: float, pitch: float) -> bool:
    return (float(yaw), float(pitch)) in _POSE_SET


@dataclass(frozen=True)
class ImageRecord:
    image_ref: str
    subject_id: int
    yaw_deg: float
    pitch_deg: float
    attribute: str
    illumination: str
    landmarks: tuple[tuple[float, float], ...]
    image_size: tuple[int, int] | None = None  # (width, height) when known
    mask_ref: str | None = None

    @property
    def pose(self) -> tuple[float, float]:
        return (self.yaw_deg, self.pitch_deg)

    def landmark_array(self) -> np.ndarray:
        return np.asarray(self.landmarks, dtype=np.float64)

    def to_json(self) -> dict:
        row = {
            "image_ref": self.image_ref,
            "subject_id": self.subject_id,
            "yaw_deg": self.yaw_deg,
            "pitch_deg": self.pitch_deg,
            "attribute": self.attribute,
            "illumination": self.illumination,
            "landmarks": [list(p) for p in self.landmarks],
        }
        if self.image_size is not None:
            row["image_size"] = list(self.image_size)
        if self.mask_ref is not None:
            row["mask_ref"] = self.mask_ref
        return row


@dataclass(frozen=True, order=True)
class PoseBin:
    pitch_deg: float
    abs_yaw_deg: float


@dataclass
class ProtocolSplit:
    train: list[ImageRecord]
    gallery: list[ImageRecord]
    probes: list[ImageRecord]
    train_subjects: list[int] = field(default_factory=list)
    test_subjects: list[int] = field(default_factory=list)
    image_root: str | None = None

    def counts(self) -> dict[str, int]:
        return {"train": len(self.train), "probes": len(self.probes), "gallery": len(self.gallery)}


_REQUIRED = ("image_ref", "subject_id", "yaw_deg", "pitch_deg", "attribute", "illumination", "landmarks")


def _landmark_tuple(value):
    """Five finite (x, y) float pairs, or None if ``value`` is anything else."""
    if not isinstance(value, (list, tuple)) or len(value) != 5:
        return None
    out = []
    for pt in value:
        if not isinstance(pt, (list, tuple)) or len(pt) != 2:
            return None
        try:
            x, y = float(pt[0]), float(pt[1])
        except (TypeError, ValueError):
            return None
        if not (math.isfinite(x) and math.isfinite(y)):
            return None
        out.append((x, y))
    return tuple(out)


def _parse_row(row: dict, index: int) -> ImageRecord:
    if not isinstance(row, dict):
        raise ManifestError(f"row {index}: expected a JSON object")
    for key in _REQUIRED:
        if key not in row:
            raise ManifestError(f"row {index}: missing field '{key}'")

    def fail(name, why):
        raise ManifestError(f"row {index}: field '{name}' {why}")

    image_ref = row["image_ref"]
    if not isinstance(image_ref, str) or not image_ref:
        fail("image_ref", "must be a non-empty string")
    subject_id = row["subject_id"]
    if isinstance(subject_id, bool) or not isinstance(subject_id, int):
        fail("subject_id", "must be an integer")
    try:
        yaw = float(row["yaw_deg"])
    except (TypeError, ValueError):
        fail("yaw_deg", "must be a number")
    if not -90.0 <= yaw <= 90.0:
        fail("yaw_deg", f"out of range [-90, 90]: {yaw}")
    try:
        pitch = float(row["pitch_deg"])
    except (TypeError, ValueError):
        fail("pitch_deg", "must be a number")
    if row["attribute"] not in ATTRIBUTES:
        fail("attribute", f"must be one of {ATTRIBUTES}, got {row['attribute']!r}")
    if row["illumination"] not in ILLUMINATIONS:
        fail("illumination", f"must be one of {ILLUMINATIONS}, got {row['illumination']!r}")

    lm = _landmark_tuple(row["landmarks"])
    if lm is None:
        fail("landmarks", "must be an array of 5 finite [x, y] pairs")
    xs = [p[0] for p in lm]
    ys = [p[1] for p in lm]

    size = row.get("image_size")
    if size is not None:
        if not (isinstance(size, list) and len(size) == 2 and all(isinstance(v, int) and v > 0 for v in size)):
            fail("image_size", "must be [width, height] positive integers")
        w, h = size
        if min(xs) < 0 or min(ys) < 0 or max(xs) > w - 1 or max(ys) > h - 1:
            fail("landmarks", f"outside image bounds {w}x{h}")
        size = (w, h)
    elif min(xs) < 0 or min(ys) < 0:
        fail("landmarks", "negative coordinates")

    mask_ref = row.get("mask_ref")
    if mask_ref is not None and not isinstance(mask_ref, str):
        fail("mask_ref", "must be a string")

    return ImageRecord(
        image_ref=image_ref,
        subject_id=subject_id,
        yaw_deg=yaw,
        pitch_deg=pitch,
        attribute=row["attribute"],
        illumination=row["illumination"],
        landmarks=lm,
        image_size=size,
        mask_ref=mask_ref,
    )


def parse_manifest_lines(lines: Iterable[str], mode: str = "strict") -> list[ImageRecord]:
    if mode not in ("strict", "lax"):
        raise ValueError(f"mode must be 'strict' or 'lax', got {mode!r}")
    records = []
    bad_poses = set()
    index = -1
    for raw in lines:
        raw = raw.strip()
        if not raw:
            continue
        index += 1
        try:
            row = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"row {index}: invalid JSON ({exc.msg})") from None
        rec = _parse_row(row, index)
        if mode == "strict" and rec.pose not in _POSE_SET:
            bad_poses.add(rec.pose)
        records.append(rec)
    if bad_poses:
        listed = ", ".join(f"({y:g}, {p:g})" for y, p in sorted(bad_poses))
        raise ManifestError(f"poses not in the 62-pose taxonomy (yaw, pitch): {listed}")
    return records


def load_manifest(path: str | Path, mode: str = "strict") -> list[ImageRecord]:
    """Read a JSON-lines manifest.

    ``strict`` mode rejects any (yaw, pitch) pair outside the capture rig's
    62 positions; ``lax`` accepts arbitrary angles.
    """
    with open(path, encoding="utf-8") as fh:
        return parse_manifest_lines(fh, mode)


def write_manifest(records: Iterable[ImageRecord], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), separators=(",", ":")))
            fh.write("\n")
    return path


def pose_bin(record: ImageRecord) -> PoseBin:
    return PoseBin(pitch_deg=record.pitch_deg, abs_yaw_deg=abs(record.yaw_deg))


def is_gallery_record(rec: ImageRecord) -> bool:
    return (
        rec.pose == GALLERY_POSE
        and rec.attribute == GALLERY_ATTRIBUTE
        and rec.illumination == GALLERY_ILLUMINATION
    )


def seeded_shuffle(items: Sequence, seed: int) -> list:
    """Fisher-Yates shuffle driven by a Mersenne Twister seeded with ``seed``."""
    out = list(items)
    rng = random.Random(seed)
    for i in range(len(out) - 1, 0, -1):
        j = rng.randrange(i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def build_protocol(records: Sequence[ImageRecord], train_subject_count: int, seed: int) -> ProtocolSplit:
    """Split records by subject into train / gallery / probes.

    Subjects are sorted, shuffled with ``seed`` and the first
    ``train_subject_count`` become training subjects. Each test subject
    contributes one gallery image (frontal, neutral, above light); every
    other non-frontal test image is a probe. Frontal images with other
    attributes or lighting are neither gallery nor probe.
    """
    by_subject: dict[int, list[ImageRecord]] = defaultdict(list)
    for rec in records:
        by_subject[rec.subject_id].append(rec)
    subjects = sorted(by_subject)
    if train_subject_count < 0 or len(subjects) < train_subject_count + 1:
        raise ProtocolError(
            f"need at least {train_subject_count + 1} subjects, manifest has {len(subjects)}"
        )
    order = seeded_shuffle(subjects, seed)
    train_ids = order[:train_subject_count]
    test_ids = order[train_subject_count:]

    train = [rec for sid in train_ids for rec in by_subject[sid]]
    gallery, probes = [], []
    for sid in test_ids:
        recs = by_subject[sid]
        enrolled = [r for r in recs if is_gallery_record(r)]
        if not enrolled:
            raise ProtocolError(f"test subject {sid} has no frontal/neutral/above gallery record")
        if len(enrolled) > 1:
            raise ProtocolError(f"test subject {sid} has {len(enrolled)} gallery candidates")
        gallery.append(enrolled[0])
        probes.extend(r for r in recs if r.pose != GALLERY_POSE)
    return ProtocolSplit(train, gallery, probes, list(train_ids), list(test_ids))


def save_protocol(split: ProtocolSplit, out_dir: str | Path, seed: int | None = None, image_root: str | Path | None = None) -> list[Path]:
    """Write train/gallery/probes manifests plus a protocol.json summary; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [
        write_manifest(split.train, out_dir / "train.jsonl"),
        write_manifest(split.gallery, out_dir / "gallery.jsonl"),
        write_manifest(split.probes, out_dir / "probes.jsonl"),
    ]
    meta = {
        "train_subjects": split.train_subjects,
        "test_subjects": split.test_subjects,
        "counts": split.counts(),
        "seed": seed,
        "image_root": str(Path(image_root).resolve()) if image_root is not None else None,
    }
    meta_path = out_dir / "protocol.json"
    meta_path.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    paths.append(meta_path)
    return paths


def load_protocol(out_dir: str | Path) -> ProtocolSplit:
    out_dir = Path(out_dir)
    meta = json.loads((out_dir / "protocol.json").read_text(encoding="utf-8"))
    return ProtocolSplit(
        train=load_manifest(out_dir / "train.jsonl", mode="lax"),
        gallery=load_manifest(out_dir / "gallery.jsonl", mode="lax"),
        probes=load_manifest(out_dir / "probes.jsonl", mode="lax"),
        train_subjects=meta["train_subjects"],
        test_subjects=meta["test_subjects"],
        image_root=meta.get("image_root"),
    )


# -- alignment ---------------------------------------------------------------


def check_landmarks(landmarks, tol: float = 1e-6) -> np.ndarray:
    """Return landmarks as a (5, 2) array; raise if they are collinear."""
    lm = np.asarray(landmarks, dtype=np.float64)
    if lm.shape != (5, 2) or not np.all(np.isfinite(lm)):
        raise AlignmentError("landmarks must be 5 finite (x, y) points")
    centered = lm - lm.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= tol * max(1.0, sv[0]):
        raise AlignmentError("degenerate landmarks: points are collinear")
    return lm


def estimate_similarity(src, dst) -> SimilarityTransform:
    """Least-squares similarity (rotation, uniform scale, translation) mapping src onto dst."""
    tform = SimilarityTransform()
    if not tform.estimate(np.asarray(src, dtype=np.float64), np.asarray(dst, dtype=np.float64)):
        raise AlignmentError("similarity estimation failed")
    return tform


def to_unit_range(image) -> np.ndarray:
    """Map uint8 [0, 255] to float [-1, 1]; float input is assumed already in [-1, 1]."""
    arr = np.asarray(image)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 127.5 - 1.0
    else:
        arr = arr.astype(np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def align_face(image, landmarks, out_size: int = 128, return_transform: bool = False):
    """Warp ``image`` so its 5 landmarks land on the canonical template.

    Bilinear resampling; pixels falling outside the source are filled with
    -1 (black). Output is ``out_size`` x ``out_size`` x C in [-1, 1].
    """
    if out_size not in (128, 256):
        raise AlignmentError(f"out_size must be 128 or 256, got {out_size}")
    lm = check_landmarks(landmarks)
    arr = to_unit_range(image)
    if arr.shape[2] not in (1, 3):
        raise AlignmentError(f"expected 1 or 3 channels, got {arr.shape[2]}")
    # transform maps raw landmarks -> template coordinates
    tform = estimate_similarity(lm, template_for_size(out_size))
    out = warp(
        arr,
        tform.inverse,
        output_shape=(out_size, out_size),
        order=1,
        mode="constant",
        cval=-1.0,
        preserve_range=True,
    )
    out = np.clip(out, -1.0, 1.0)
    if return_transform:
        return out, tform
    return out


def apply_transform(tform: SimilarityTransform, points) -> np.ndarray:
    return tform(np.asarray(points, dtype=np.float64))

