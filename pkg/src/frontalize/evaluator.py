"""Recognition via generation: fused cosine distance, rank-1 identification, pose-binned tables."""

from __future__ import annotations

import csv
import hashlib
import io
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np
import torch

from .dataset import PoseBin, pose_bin


class EvaluationError(ValueError):
    pass


@dataclass
class EmbeddingSet:
    ids: list[int]
    matrix: np.ndarray
    source: str = "original"

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or len(self.ids) != self.matrix.shape[0]:
            raise EvaluationError(f"{len(self.ids)} ids for a matrix of shape {self.matrix.shape}")
        if self.source not in ("original", "frontalized"):
            raise EvaluationError(f"source must be 'original' or 'frontalized', got {self.source!r}")
        zero = np.where(np.linalg.norm(self.matrix, axis=1) == 0)[0]
        if len(zero):
            raise EvaluationError(f"zero-norm embedding rows: {zero.tolist()[:10]}")


def cosine_distance(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise EvaluationError(f"dimension mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise EvaluationError("zero-norm vector")
    return 1.0 - float(a @ b) / (na * nb)


def fused_distance(probe_orig, probe_gen, gallery) -> float:
    """Mean of the cosine distances original->gallery and frontalized->gallery."""
    return 0.5 * (cosine_distance(probe_orig, gallery) + cosine_distance(probe_gen, gallery))


def _unit_rows(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def distance_matrix(probe_orig: EmbeddingSet, probe_gen: EmbeddingSet | None, gallery: EmbeddingSet) -> np.ndarray:
    g = _unit_rows(gallery.matrix)
    d = 1.0 - _unit_rows(probe_orig.matrix) @ g.T
    if probe_gen is None:
        return d
    if probe_gen.matrix.shape != probe_orig.matrix.shape:
        raise EvaluationError("original and frontalized probe embeddings differ in shape")
    return 0.5 * (d + (1.0 - _unit_rows(probe_gen.matrix) @ g.T))


@dataclass
class RankedResult:
    predicted: list[int]
    correct: list[bool]
    labels: list[int]
    bins: list[PoseBin | None]
    missing_subjects: list[int] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return 100.0 * sum(self.correct) / len(self.correct) if self.correct else float("nan")

    def bin_counts(self) -> dict[PoseBin, tuple[int, int]]:
        """PoseBin -> (correct, total)."""
        out: dict[PoseBin, list[int]] = defaultdict(lambda: [0, 0])
        for b, ok in zip(self.bins, self.correct):
            if b is None:
                continue
            out[b][0] += int(ok)
            out[b][1] += 1
        return {k: (v[0], v[1]) for k, v in sorted(out.items())}

    def bin_accuracy(self) -> dict[PoseBin, float]:
        return {b: 100.0 * c / n for b, (c, n) in self.bin_counts().items()}


def rank1(probe_orig: EmbeddingSet, probe_gen: EmbeddingSet | None, gallery: EmbeddingSet, labels=None, bins=None) -> RankedResult:
    """Assign each probe the gallery subject with the smallest (fused) distance.

    Ties go to the lowest subject id. Probes whose true subject is absent
    from the gallery are scored as wrong and listed in ``missing_subjects``.
    Pass ``probe_gen=None`` to score original images alone.
    """
    if len(set(gallery.ids)) != len(gallery.ids):
        raise EvaluationError("gallery must hold exactly one row per subject")
    labels = list(probe_orig.ids if labels is None else labels)
    if len(labels) != len(probe_orig.ids):
        raise EvaluationError("labels and probes differ in length")
    order = np.argsort(np.asarray(gallery.ids), kind="stable")
    sorted_ids = np.asarray(gallery.ids)[order]
    d = distance_matrix(probe_orig, probe_gen, gallery)[:, order]
    pred = sorted_ids[np.argmin(d, axis=1)] if len(sorted_ids) else np.array([], dtype=int)
    gallery_set = set(gallery.ids)
    missing = sorted({int(l) for l in labels if l not in gallery_set})
    predicted = [int(p) for p in pred]
    correct = [p == int(l) for p, l in zip(predicted, labels)]
    bins = list(bins) if bins is not None else [None] * len(labels)
    return RankedResult(predicted, correct, [int(l) for l in labels], bins, missing)


# -- reporting ----------------------------------------------------------------


def percent(correct: int, total: int) -> Decimal:
    """100 * correct / total rounded half-up to one decimal."""
    return (Decimal(100 * correct) / Decimal(total)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)


# Column sets of the three published table layouts, keyed by |pitch|.
TABLE_COLUMNS = {
    0.0: (15.0, 30.0, 45.0, 60.0, 75.0, 90.0),
    15.0: (0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0),
    30.0: (0.0, 22.5, 45.0, 67.5, 90.0),
}


def _deg(v: float) -> str:
    return f"{v:g}"


@dataclass
class ReportTable:
    abs_pitch: float
    columns: tuple[float, ...]
    rows: list[tuple[float, list[Decimal | None]]]

    def title(self) -> str:
        if self.abs_pitch == 0:
            return "Rank-1 (%) at pitch 0"
        return f"Rank-1 (%) at pitch +/-{_deg(self.abs_pitch)}"

    def header(self) -> list[str]:
        return ["pitch"] + [f"+/-{_deg(c)}" for c in self.columns]


def pose_binned_report(result: RankedResult, probes=None) -> list[ReportTable]:
    """Lay per-bin accuracies out as the 0, +/-15 and +/-30 pitch tables.

    Rows are signed pitches present among the probes; empty cells are None.
    Pitches outside the published layouts (e.g. +45) get their own table
    with whatever yaw columns occur.
    """
    bins = result.bins
    if probes is not None:
        bins = [pose_bin(r) for r in probes]
        if len(bins) != len(result.correct):
            raise EvaluationError("probe list and result differ in length")
    if any(b is None for b in bins):
        raise EvaluationError("every probe needs a pose bin")
    counts: dict[PoseBin, list[int]] = defaultdict(lambda: [0, 0])
    for b, ok in zip(bins, result.correct):
        counts[b][0] += int(ok)
        counts[b][1] += 1
    pitches = sorted({b.pitch_deg for b in counts}, key=lambda p: (abs(p), -p))
    tables: dict[float, ReportTable] = {}
    for p in pitches:
        ap = abs(p)
        if ap not in tables:
            cols = TABLE_COLUMNS.get(ap) or tuple(sorted({b.abs_yaw_deg for b in counts if abs(b.pitch_deg) == ap}))
            tables[ap] = ReportTable(ap, cols, [])
        t = tables[ap]
        cells = []
        for c in t.columns:
            k = counts.get(PoseBin(p, c))
            cells.append(percent(*k) if k and k[1] else None)
        t.rows.append((p, cells))
    return [tables[k] for k in sorted(tables)]


def report_csv(tables: list[ReportTable]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for i, t in enumerate(tables):
        if i:
            w.writerow([])
        w.writerow([t.title()])
        w.writerow(t.header())
        for p, cells in t.rows:
            w.writerow([f"{p:+g}" if p else "0"] + ["" if c is None else str(c) for c in cells])
    return buf.getvalue()


def report_text(tables: list[ReportTable]) -> str:
    lines = []
    for t in tables:
        head = t.header()
        body = [[f"{p:+g}" if p else "0"] + ["-" if c is None else str(c) for c in cells] for p, cells in t.rows]
        widths = [max(len(r[j]) for r in [head] + body) for j in range(len(head))]
        fmt = lambda r: "  ".join(s.rjust(wd) for s, wd in zip(r, widths))
        lines += [t.title(), fmt(head), "  ".join("-" * wd for wd in widths)]
        lines += [fmt(r) for r in body]
        lines.append("")
    return "\n".join(lines)


# -- feature extraction ------------------------------------------------------


def extract_embeddings(extractor, images, batch_size: int = 64) -> np.ndarray:
    """phi_f of each (3, H, W) image; returns an (N, D) float64 array."""
    images = torch.as_tensor(images)
    dtype = next(extractor.parameters()).dtype
    out = []
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            out.append(extractor.embed(images[i : i + batch_size].to(dtype)).double().numpy())
    return np.concatenate(out) if out else np.zeros((0, extractor.embedding_dim))


def frontalize(generator, images, batch_size: int = 64) -> torch.Tensor:
    images = torch.as_tensor(images)
    dtype = next(generator.parameters()).dtype
    out = []
    generator.eval()
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            out.append(generator(images[i : i + batch_size].to(dtype)))
    return torch.cat(out)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cache_path(cache_dir, checkpoint_id: str, manifest_hash: str, source: str) -> Path:
    key = hashlib.sha256(f"{checkpoint_id}|{manifest_hash}|{source}".encode()).hexdigest()[:24]
    return Path(cache_dir) / f"emb-{source}-{key}.npz"


def cached_embeddings(cache_dir, checkpoint_id, manifest_hash, source, compute) -> np.ndarray:
    """Load embeddings from the sidecar cache, or compute and store them."""
    path = cache_path(cache_dir, checkpoint_id, manifest_hash, source)
    if path.exists():
        with np.load(path) as z:
            return z["embeddings"]
    emb = compute()
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, embeddings=emb, checkpoint_id=checkpoint_id, manifest_hash=manifest_hash)
    return emb
