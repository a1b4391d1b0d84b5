"""Slow reference implementations used to cross-check the vectorized code.

These are written as plain scalar loops over the definitions and share no
code with the modules they check.
"""

from __future__ import annotations

import math

import numpy as np


def _avg_pool_loop(img, f):
    """img: nested (H, W, C) array; non-overlapping f x f mean, floor sizes, min 1."""
    h, w, c = img.shape
    kh, kw = min(f, h), min(f, w)
    oh, ow = h // kh, w // kw
    out = np.zeros((oh, ow, c))
    for i in range(oh):
        for j in range(ow):
            for ch in range(c):
                s = 0.0
                for a in range(kh):
                    for b in range(kw):
                        s += img[i * kh + a, j * kw + b, ch]
                out[i, j, ch] = s / (kh * kw)
    return out


def pixel_loss_loop(y_hat, y) -> float:
    """Three-scale mean absolute difference on (H, W, C) arrays."""
    y_hat, y = np.asarray(y_hat, dtype=np.float64), np.asarray(y, dtype=np.float64)
    total = 0.0
    for f in (1, 2, 4):
        a, b = _avg_pool_loop(y_hat, f), _avg_pool_loop(y, f)
        h, w, c = a.shape
        s = 0.0
        for i in range(h):
            for j in range(w):
                for ch in range(c):
                    s += abs(a[i, j, ch] - b[i, j, ch])
        total += s / (w * h * c)
    return total / 3.0


def tv_loss_loop(y_hat) -> float:
    """Anisotropic, unnormalized total variation on an (H, W, C) array."""
    x = np.asarray(y_hat, dtype=np.float64)
    h, w, c = x.shape
    s = 0.0
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                if j + 1 < w:
                    s += abs(x[i, j + 1, ch] - x[i, j, ch])
                if i + 1 < h:
                    s += abs(x[i + 1, j, ch] - x[i, j, ch])
    return s


def cosine_distance_loop(a, b) -> float:
    dot = na = nb = 0.0
    for u, v in zip(a, b):
        dot += u * v
        na += u * u
        nb += v * v
    return 1.0 - dot / (math.sqrt(na) * math.sqrt(nb))


def rank1_loop(probe_orig, probe_gen, gallery, gallery_ids) -> list[int]:
    """Exhaustive double loop; strict '<' so the first (lowest id) minimum wins."""
    order = sorted(range(len(gallery_ids)), key=lambda k: gallery_ids[k])
    preds = []
    for i in range(len(probe_orig)):
        best, best_id = math.inf, None
        for k in order:
            d = cosine_distance_loop(probe_orig[i], gallery[k])
            if probe_gen is not None:
                d = 0.5 * (d + cosine_distance_loop(probe_gen[i], gallery[k]))
            if d < best:
                best, best_id = d, gallery_ids[k]
        preds.append(best_id)
    return preds


def central_difference(fn, x: np.ndarray, coords, h: float = 1e-5) -> np.ndarray:
    """d fn / d x at the flat indices ``coords`` by central differences; x is perturbed in place and restored."""
    flat = x.reshape(-1)
    out = np.empty(len(coords))
    for n, k in enumerate(coords):
        orig = flat[k]
        flat[k] = orig + h
        fp = fn()
        flat[k] = orig - h
        fm = fn()
        flat[k] = orig
        out[n] = (fp - fm) / (2 * h)
    return out


def relative_error(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom
