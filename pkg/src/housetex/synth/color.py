"""HSV colour separation and a differentiable HSV to RGB layer."""

from __future__ import annotations

import numpy as np
import torch


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorised ``colorsys.rgb_to_hsv`` over the last axis; hue in [0, 1)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    delta = maxc - minc
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(maxc > 0, delta / maxc, 0.0)
        rc = (maxc - r) / delta
        gc = (maxc - g) / delta
        bc = (maxc - b) / delta
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, np.mod(h / 6.0, 1.0), 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb_np(hsv: np.ndarray) -> np.ndarray:
    hsv = np.asarray(hsv, dtype=np.float64)
    h = np.mod(hsv[..., 0], 1.0)
    s = np.clip(hsv[..., 1], 0.0, 1.0)
    v = np.clip(hsv[..., 2], 0.0, 1.0)
    out = []
    for n in (5.0, 3.0, 1.0):
        k = np.mod(n + 6.0 * h, 6.0)
        out.append(v - v * s * np.clip(np.minimum(k, 4.0 - k), 0.0, 1.0))
    return np.stack(out, axis=-1)


def hsv_to_rgb(hsv: torch.Tensor, dim: int = -3) -> torch.Tensor:
    """Differentiable HSV to RGB along ``dim`` (channels-first by default).

    Hue wraps cyclically; saturation and value are clamped to [0, 1]. Every
    operation is piecewise linear so gradients exist everywhere (subgradients
    at sector boundaries).
    """
    h, s, v = hsv.unbind(dim)
    h = torch.remainder(h, 1.0)
    s = s.clamp(0.0, 1.0)
    v = v.clamp(0.0, 1.0)
    chans = []
    for n in (5.0, 3.0, 1.0):
        k = torch.remainder(n + 6.0 * h, 6.0)
        chans.append(v - v * s * torch.minimum(k, 4.0 - k).clamp(0.0, 1.0))
    return torch.stack(chans, dim)


def wrap_hue(dh):
    """Map hue differences into [-0.5, 0.5)."""
    return np.mod(np.asarray(dh) + 0.5, 1.0) - 0.5


def _lower_median(x: np.ndarray) -> float:
    x = np.sort(np.asarray(x).ravel())
    return float(x[(len(x) - 1) // 2])


def circular_median(hue: np.ndarray) -> float:
    """Median of hue angles: rotate so the circular mean sits at 0.5, take the
    lower median, rotate back. Always returns one of the input hues."""
    hue = np.asarray(hue, dtype=np.float64).ravel()
    ang = 2 * np.pi * hue
    c, s = np.cos(ang).mean(), np.sin(ang).mean()
    mean = np.mod(np.arctan2(s, c) / (2 * np.pi), 1.0) if np.hypot(c, s) > 1e-12 else 0.0
    rotated = np.mod(hue + 0.5 - mean, 1.0)
    order = np.argsort(rotated, kind="stable")
    return float(hue[order[(len(hue) - 1) // 2]])


def separate_color(image: np.ndarray):
    """Split an RGB image (H, W, 3 in [0, 1]) into its median HSV colour and the per-pixel offset.

    Saturation and value use the lower median (always an observed value);
    hue uses the circular median. Hue offsets are wrapped into [-0.5, 0.5).
    """
    hsv = rgb_to_hsv(image)
    median = np.array(
        [circular_median(hsv[..., 0]), _lower_median(hsv[..., 1]), _lower_median(hsv[..., 2])]
    )
    delta = hsv - median
    delta[..., 0] = wrap_hue(delta[..., 0])
    return median, delta


def recombine(median_hsv, delta: np.ndarray) -> np.ndarray:
    hsv = np.asarray(delta, dtype=np.float64) + np.asarray(median_hsv, dtype=np.float64)
    hsv[..., 0] = np.mod(hsv[..., 0], 1.0)
    return hsv_to_rgb_np(hsv)
