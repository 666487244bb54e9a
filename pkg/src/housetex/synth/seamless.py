"""Seam removal by quilting a texture with wrap-around shifted copies of itself.

A copy rolled horizontally has no seam across the left/right wrap. Pasting
that copy over the left and right border strips, cut along the
minimum-error boundary inside each overlap, makes the texture tile
horizontally. Repeating the step vertically on the result makes it tile in
both directions. Among candidate shifts the one with the lowest total cut
error plus wrap-border mismatch is kept. Every output pixel is an input
pixel, so colour statistics are preserved.
"""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np

log = logging.getLogger(__name__)

SEAM_TOLERANCE = 1.1


def seam_energy(image) -> tuple[float, float]:
    """(mean |difference| across the wrapped borders, mean |difference| of the
    adjacent pixel pairs just inside those borders)."""
    x = np.asarray(image, dtype=np.float64)
    seam = np.concatenate([np.abs(x[:, 0] - x[:, -1]).ravel(), np.abs(x[0] - x[-1]).ravel()])
    inner = np.concatenate(
        [
            np.abs(x[:, 1] - x[:, 0]).ravel(),
            np.abs(x[:, -1] - x[:, -2]).ravel(),
            np.abs(x[1] - x[0]).ravel(),
            np.abs(x[-1] - x[-2]).ravel(),
        ]
    )
    return float(seam.mean()), float(inner.mean())


def is_seamless(image, tolerance: float = SEAM_TOLERANCE, eps: float = 1e-6) -> bool:
    seam, inner = seam_energy(image)
    return seam <= tolerance * inner + eps


def _seam_ratio(image, eps=1e-6):
    seam, inner = seam_energy(image)
    return (seam + eps) / (inner + eps)


def circular_min_cut(err: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimum-cost path through ``err`` (L, M), one column per row, moving at
    most one column per row, with the last row adjacent to the first so the
    path closes on a torus. Returns (columns, cost)."""
    L, M = err.shape
    starts = np.arange(M)
    cost = np.full((M, M), np.inf)
    cost[starts, starts] = err[0]
    back = np.zeros((L, M, M), dtype=np.int8)
    for i in range(1, L):
        left = np.concatenate([np.full((M, 1), np.inf), cost[:, :-1]], axis=1)
        right = np.concatenate([cost[:, 1:], np.full((M, 1), np.inf)], axis=1)
        stacked = np.stack([left, cost, right])  # moves -1, 0, +1
        choice = np.argmin(stacked, axis=0)
        cost = np.take_along_axis(stacked, choice[None], 0)[0] + err[i][None]
        back[i] = choice.astype(np.int8) - 1
    end_ok = np.abs(starts[None, :] - starts[:, None]) <= 1  # [start, end]
    final = np.where(end_ok, cost, np.inf)
    s, m = np.unravel_index(np.argmin(final), final.shape)
    total = float(final[s, m])
    path = np.empty(L, dtype=np.int64)
    path[-1] = m
    for i in range(L - 1, 0, -1):
        path[i - 1] = path[i] + back[i, s, path[i]]
    return path, total


def _quilt_columns(base: np.ndarray, shifts, margin_lo: float = 0.125, margin_hi: float = 0.375):
    """Paste a horizontally rolled copy of ``base`` over its left/right border strips."""
    h, w, _ = base.shape
    a0, a1 = int(w * margin_lo), int(w * margin_hi)
    b0, b1 = w - a1, w - a0
    best = None
    for s in shifts:
        copy = np.roll(base, s, axis=1)
        err = ((base - copy) ** 2).sum(axis=2)
        left, cl = circular_min_cut(err[:, a0:a1])
        right, cr = circular_min_cut(err[:, b0:b1])
        # the copy's first and last columns become the new wrap border
        wrap = float(((copy[:, 0] - copy[:, -1]) ** 2).sum())
        cost = cl + cr + wrap
        if best is None or cost < best[0]:
            best = (cost, copy, left + a0, right + b0)
    _, copy, left, right = best
    cols = np.arange(w)[None, :]
    use_copy = (cols < left[:, None]) | (cols > right[:, None])
    return np.where(use_copy[..., None], copy, base), best[0]


def quilt_tileable(image: np.ndarray, search: int = 8, step: int = 2) -> np.ndarray:
    """Make ``image`` tile by quilting it with shifted copies of itself, columns then rows."""
    img = np.asarray(image, dtype=np.float64)
    h, w, _ = img.shape
    shifts_w = sorted({w // 2 + d for d in range(-search, search + 1, step)}, key=lambda s: (abs(s - w // 2), s))
    out, _ = _quilt_columns(img, shifts_w)
    shifts_h = sorted({h // 2 + d for d in range(-search, search + 1, step)}, key=lambda s: (abs(s - h // 2), s))
    out_t, _ = _quilt_columns(out.transpose(1, 0, 2), shifts_h)
    return out_t.transpose(1, 0, 2)


def make_seamless(texture, search: int = 8, step: int = 2, max_iter: int = 3, tolerance: float = SEAM_TOLERANCE):
    """Return a copy of ``texture`` (a ``TextureSample``) whose wrap-around border has no seam.

    Textures that already tile are returned unchanged. Each retry widens the
    shift search; if none reaches ``tolerance`` the lowest-seam result is
    returned with ``seam_warning`` set.
    """
    img = np.asarray(texture.image, dtype=np.float64)
    if is_seamless(img, tolerance):
        return replace(texture, seamless=True, seam_warning=False)
    best, best_ratio = img, _seam_ratio(img)
    for it in range(max_iter):
        out = quilt_tileable(img, search=search * (it + 1), step=step)
        ratio = _seam_ratio(out)
        if ratio < best_ratio:
            best, best_ratio = out, ratio
        if is_seamless(out, tolerance):
            return replace(texture, image=out.astype(np.float32), seamless=True, seam_warning=False)
    log.warning("seam correction did not converge (seam/interior ratio %.3f)", best_ratio)
    return replace(texture, image=best.astype(np.float32), seamless=True, seam_warning=True)
