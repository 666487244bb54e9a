"""Surface crop extraction: segmentation adapters, plane rectification,
random crop sampling and medoid reference selection."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np
from PIL import Image
from scipy import ndimage

from .data import CROP_SIZE, Photo, SurfaceCrop, SurfaceKind, surface_kind
from .errors import BackendError

MAX_WALLS = 10
DEFAULT_FOV = 60.0
MAX_VIEW_ANGLE = 85.0

# ADE20K scene-parsing class indices (0-based, 150 classes)
ADE20K_CLASSES = {SurfaceKind.WALL: (0,), SurfaceKind.FLOOR: (3,), SurfaceKind.CEILING: (5,)}


@dataclass(frozen=True, eq=False)
class SurfaceMask:
    mask: np.ndarray  # bool, photo-sized
    kind: SurfaceKind
    source: str
    label: int | None = None

    @property
    def area(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class PlaneEstimate:
    normal: tuple[float, float, float]  # camera frame: x right, y down, z forward
    depth: float  # distance from the camera centre to the plane
    fov: float = DEFAULT_FOV  # horizontal, degrees

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(n)
        if not norm > 0:
            raise ValueError("plane normal must be non-zero")
        object.__setattr__(self, "normal", tuple(float(v) for v in n / norm))
        if not self.depth > 0:
            raise ValueError("plane depth must be positive")


class RectificationSkipped(Exception):
    """Raised when a surface cannot be rectified; the surface stays unobserved."""


# ---------------------------------------------------------------- segmentation


def _finalize_masks(class_masks: dict, source: str) -> list[SurfaceMask]:
    """Floor and ceiling as single masks, walls split into the largest connected components."""
    out = []
    for kind in (SurfaceKind.FLOOR, SurfaceKind.CEILING):
        m = class_masks.get(kind)
        if m is not None and m.any():
            out.append(SurfaceMask(m, kind, source))
    wall = class_masks.get(SurfaceKind.WALL)
    if wall is not None and wall.any():
        labels, n = ndimage.label(wall)
        sizes = ndimage.sum_labels(wall, labels, index=np.arange(1, n + 1))
        order = sorted(range(n), key=lambda i: (-sizes[i], i))[:MAX_WALLS]
        out.extend(SurfaceMask(labels == i + 1, SurfaceKind.WALL, source) for i in order)
    return out


class OracleBackend:
    """Reads precomputed sidecars next to each photo.

    ``<photo>.masks.png`` holds one integer label per pixel (0 = not an
    architectural surface); ``<photo>.plane.json`` maps each label to its
    surface kind and plane::

        {"fov": 60, "planes": {"1": {"kind": "floor", "normal": [0, -1, 0], "depth": 1.5}}}
    """

    name = "oracle"

    def _sidecar(self, photo: Photo, suffix: str) -> Path:
        return photo.path.with_name(photo.path.name + suffix)

    def _meta(self, photo: Photo) -> dict:
        path = self._sidecar(photo, ".plane.json")
        try:
            return json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise BackendError(f"cannot read plane sidecar {path}: {e}") from e

    def labels(self, photo: Photo) -> np.ndarray:
        path = self._sidecar(photo, ".masks.png")
        try:
            with Image.open(path) as im:
                return np.asarray(im).astype(np.int64)
        except OSError as e:
            raise BackendError(f"cannot read mask sidecar {path}: {e}") from e

    def segment(self, photo: Photo) -> list[SurfaceMask]:
        labels = self.labels(photo)
        planes = self._meta(photo)["planes"]
        class_masks = {}
        for key, p in planes.items():
            kind = surface_kind(p["kind"])
            m = labels == int(key)
            class_masks[kind] = class_masks.get(kind, np.zeros_like(m)) | m
        masks = _finalize_masks(class_masks, self.name)
        # attach the dominant sidecar label so plane lookup is exact
        return [replace(m, label=int(np.bincount(labels[m.mask]).argmax())) for m in masks]

    def estimate_plane(self, photo: Photo, mask: SurfaceMask) -> PlaneEstimate:
        meta = self._meta(photo)
        label = mask.label
        if label is None:
            label = int(np.bincount(self.labels(photo)[mask.mask]).argmax())
        p = meta["planes"].get(str(label))
        if p is None:
            raise BackendError(f"no plane for label {label} in {photo.id}")
        return PlaneEstimate(tuple(p["normal"]), float(p["depth"]), float(meta.get("fov", DEFAULT_FOV)))


class TorchSegmentationBackend:
    """Adapter around a pretrained scene-parsing network.

    ``model`` maps a (1, 3, H, W) ImageNet-normalised tensor to per-class
    logits (1, C, h, w). ``plane_model`` maps the same input to per-pixel
    unit normals (1, 3, h, w) and depth (1, 1, h, w); planes are the masked
    means. Weights are supplied by the caller.
    """

    name = "pretrained"

    def __init__(self, model, plane_model=None, class_ids=None, fov=DEFAULT_FOV, min_fraction=0.0):
        self.model = model
        self.plane_model = plane_model
        self.class_ids = class_ids or ADE20K_CLASSES
        self.fov = fov
        self.min_fraction = min_fraction

    def _input(self, photo):
        import torch

        img = photo.load().astype(np.float32) / 255.0
        mean = np.array([0.485, 0.456, 0.406], dtype=np.float32)
        std = np.array([0.229, 0.224, 0.225], dtype=np.float32)
        return torch.from_numpy(((img - mean) / std).transpose(2, 0, 1)[None].copy()), img.shape[:2]

    def segment(self, photo: Photo) -> list[SurfaceMask]:
        import torch
        import torch.nn.functional as F

        x, (h, w) = self._input(photo)
        try:
            with torch.no_grad():
                logits = self.model(x)
        except Exception as e:  # noqa: BLE001 - any model failure is a backend failure
            raise BackendError(f"segmentation model failed on {photo.id}: {e}") from e
        logits = F.interpolate(logits, size=(h, w), mode="bilinear", align_corners=False)
        pred = logits.argmax(1)[0].numpy()
        class_masks = {k: np.isin(pred, ids) for k, ids in self.class_ids.items()}
        min_px = self.min_fraction * h * w
        class_masks = {k: m for k, m in class_masks.items() if m.sum() > min_px}
        return _finalize_masks(class_masks, self.name)

    def estimate_plane(self, photo: Photo, mask: SurfaceMask) -> PlaneEstimate:
        import torch
        import torch.nn.functional as F

        if self.plane_model is None:
            raise BackendError("no normal/depth model configured")
        x, (h, w) = self._input(photo)
        with torch.no_grad():
            normals, depth = self.plane_model(x)
        normals = F.interpolate(normals, size=(h, w), mode="bilinear", align_corners=False)[0].numpy()
        depth = F.interpolate(depth, size=(h, w), mode="bilinear", align_corners=False)[0, 0].numpy()
        n = normals[:, mask.mask].mean(axis=1)
        d = float(np.median(depth[mask.mask]))
        return PlaneEstimate(tuple(n), d, self.fov)


def segment_surfaces(photo: Photo, backend) -> list[SurfaceMask]:
    """Floor, ceiling and up to ten wall masks, largest walls first."""
    return backend.segment(photo)


# ---------------------------------------------------------------- rectification


def intrinsics(width: int, height: int, fov: float) -> np.ndarray:
    f = width / (2.0 * math.tan(math.radians(fov) / 2.0))
    return np.array([[f, 0.0, width / 2.0], [0.0, f, height / 2.0], [0.0, 0.0, 1.0]])


def plane_basis(normal) -> tuple[np.ndarray, np.ndarray]:
    """In-plane orthonormal axes (u, v); u follows the camera x axis where possible."""
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    ref = np.array([1.0, 0.0, 0.0])
    if abs(n @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    u = ref - (ref @ n) * n
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    if v[1] < 0:
        v = -v
    return u, v


def plane_homography(plane: PlaneEstimate, width: int, height: int, anchor_px=None, scale: float = 1.0):
    """Homography from plane coordinates (a, b), in units of ``scale`` metres, to image pixels.

    The plane origin is where the ray through ``anchor_px`` meets the plane
    (image centre by default).
    """
    n = np.asarray(plane.normal)
    cos_view = abs(n[2])
    if cos_view < math.cos(math.radians(MAX_VIEW_ANGLE)):
        raise RectificationSkipped(f"plane normal {plane.normal} is near-perpendicular to the optical axis")
    K = intrinsics(width, height, plane.fov)
    if anchor_px is None:
        anchor_px = (width / 2.0, height / 2.0)
    ray = np.linalg.solve(K, np.array([anchor_px[0], anchor_px[1], 1.0]))
    # plane: n . X = -depth (camera on the side the normal points to)
    denom = n @ ray
    if abs(denom) < 1e-9:
        raise RectificationSkipped("anchor ray is parallel to the plane")
    t = -plane.depth / denom
    if t <= 0:
        raise RectificationSkipped("plane lies behind the camera at the anchor pixel")
    origin = t * ray
    u, v = plane_basis(n)
    return K @ np.column_stack([scale * u, scale * v, origin])


def rectify_surface(photo_image: np.ndarray, mask: SurfaceMask, plane: PlaneEstimate, upscale: float = 3.0,
                    min_fraction: float = 0.01):
    """Warp the masked planar region to a fronto-parallel view.

    The rectified pixel size is chosen so the mask's extent on the plane maps
    to the larger side of its image bounding box, then multiplied by
    ``upscale``. Returns ``(image float32 HxWx3 in [0,1], validity bool HxW, H)``
    where ``H`` maps rectified pixel coordinates to photo pixels.
    """
    img = np.asarray(photo_image)
    if img.dtype == np.uint8:
        img = img.astype(np.float32) / 255.0
    h, w = img.shape[:2]
    m = np.asarray(mask.mask, dtype=bool)
    if m.shape != (h, w):
        raise ValueError("mask and photo sizes differ")
    if m.sum() < min_fraction * h * w:
        raise RectificationSkipped(f"mask covers {m.sum()} px, below {min_fraction:.0%} of the photo")
    ys, xs = np.nonzero(m)
    anchor = (float(np.median(xs)), float(np.median(ys)))
    H = plane_homography(plane, w, h, anchor_px=anchor)
    Hinv = np.linalg.inv(H)
    pts = np.column_stack([xs + 0.5, ys + 0.5, np.ones(len(xs))]) @ Hinv.T
    if np.any(pts[:, 2] <= 0):
        pts = pts[pts[:, 2] > 0]
    ab = pts[:, :2] / pts[:, 2:3]
    lo, hi = np.percentile(ab, 0.5, axis=0), np.percentile(ab, 99.5, axis=0)
    extent = float((hi - lo).max())
    bbox_px = max(xs.max() - xs.min() + 1, ys.max() - ys.min() + 1)
    if extent <= 0:
        raise RectificationSkipped("degenerate mask extent on plane")
    px_per_unit = bbox_px / extent * upscale
    out_w = int(math.ceil((hi[0] - lo[0]) * px_per_unit))
    out_h = int(math.ceil((hi[1] - lo[1]) * px_per_unit))
    # rectified pixel (x, y) -> plane (a, b) -> photo
    S = np.array([[1.0 / px_per_unit, 0.0, lo[0]], [0.0, 1.0 / px_per_unit, lo[1]], [0.0, 0.0, 1.0]])
    H_rect = H @ S
    # cv2 uses pixel-centre-at-integer convention; photo coordinates above use +0.5 centres
    shift = np.array([[1.0, 0.0, -0.5], [0.0, 1.0, -0.5], [0.0, 0.0, 1.0]])
    M = shift @ H_rect @ np.linalg.inv(shift)
    flags = cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP
    rect = cv2.warpPerspective(img.astype(np.float32), M, (out_w, out_h), flags=flags, borderMode=cv2.BORDER_CONSTANT)
    valid = cv2.warpPerspective(
        m.astype(np.uint8), M, (out_w, out_h), flags=cv2.INTER_NEAREST | cv2.WARP_INVERSE_MAP, borderValue=0
    ).astype(bool)
    # exclude pixels whose bilinear footprint touches the mask border
    valid &= ndimage.binary_erosion(valid, iterations=int(math.ceil(upscale)))
    return np.clip(rect, 0.0, 1.0), valid, H_rect


# ---------------------------------------------------------------- crops


def sample_crops(rectified: np.ndarray, validity: np.ndarray, n: int = 10, crop: int = 256, attempts: int = 1000,
                 seed: int = 0, out_size: int = CROP_SIZE) -> list[np.ndarray]:
    """Up to ``n`` random fully-valid square crops, each resized to ``out_size``.

    Each crop gets at most ``attempts`` random placements.
    """
    valid = np.asarray(validity, dtype=bool)
    h, w = valid.shape
    if h < crop or w < crop:
        return []
    integral = np.pad(valid.astype(np.int64).cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    full = crop * crop
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        for _ in range(attempts):
            y = int(rng.integers(0, h - crop + 1))
            x = int(rng.integers(0, w - crop + 1))
            s = integral[y + crop, x + crop] - integral[y, x + crop] - integral[y + crop, x] + integral[y, x]
            if s == full:
                patch = np.asarray(rectified[y : y + crop, x : x + crop], dtype=np.float32)
                resized = cv2.resize(patch, (out_size, out_size), interpolation=cv2.INTER_AREA)
                out.append(np.clip(resized, 0.0, 1.0))
                break
    return out


def medoid_index(images) -> int:
    if len(images) == 0:
        raise ValueError("cannot select a reference from an empty crop list")
    stack = np.stack([np.asarray(im, dtype=np.float64).ravel() for im in images])
    d = np.linalg.norm(stack - stack.mean(axis=0), axis=1)
    return int(np.argmin(d))


def select_medoid(crops: list[SurfaceCrop]) -> SurfaceCrop:
    """The crop closest (L2, raw RGB vector) to the mean of all crops, flagged as reference."""
    return replace(crops[medoid_index([c.image for c in crops])], is_reference=True)


def extract_house_crops(house, backend, fov=None, n=10, crop=256, attempts=1000, upscale=3.0, seed=0):
    """Run segmentation, rectification and sampling over every photo of a house.

    Returns crops with exactly one reference (the medoid) per observed surface.
    """
    crops = []
    for pi, photo in enumerate(sorted(house.photos, key=lambda p: p.id)):
        image = photo.load()
        for mi, mask in enumerate(segment_surfaces(photo, backend)):
            try:
                plane = backend.estimate_plane(photo, mask)
                if fov is not None:
                    plane = replace(plane, fov=fov)
                rect, valid, _ = rectify_surface(image, mask, plane, upscale=upscale)
            except RectificationSkipped:
                continue
            sub_seed = seed * 1_000_003 + pi * 101 + mi
            for img in sample_crops(rect, valid, n=n, crop=crop, attempts=attempts, seed=sub_seed):
                crops.append(SurfaceCrop(img, house.id, photo.room_id, mask.kind, photo.id))
    out = []
    for surface in sorted({c.surface for c in crops}, key=lambda s: (s[0], s[1].index)):
        group = [c for c in crops if c.surface == surface]
        k = medoid_index([c.image for c in group])
        out.extend(replace(c, is_reference=True) if i == k else c for i, c in enumerate(group))
    return out
