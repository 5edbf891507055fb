"""Boxes, the crop-and-resize search window, candidate boxes and IoU labels.

Coordinate convention: continuous image coordinates where pixel column j
(0-based array index) spans [j, j+1] and has its center at j + 0.5. A box
covering a whole W x H image is therefore BBox(0, 0, W, H). Box-to-patch
maps are plain affine maps on these coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

POSITIVE = 1
NEGATIVE = 2


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: top-left corner (x, y), positive width/height in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError(f"box has non-finite fields: {self}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box needs positive extents: {self}")

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def scaled(self, factor: float) -> "BBox":
        """All four coordinates divided into a new unit (e.g. feature stride)."""
        return BBox(self.x * factor, self.y * factor, self.w * factor, self.h * factor)


@dataclass(frozen=True)
class PatchSpec:
    """Crop window plus output raster of the search-window transform."""

    crop_rect: BBox
    out_w: int
    out_h: int
    scale_x: float
    scale_y: float
    image_w: int
    image_h: int


@dataclass(frozen=True)
class LabeledSample:
    box: BBox
    label: int  # POSITIVE or NEGATIVE
    iou: float


def round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def crop_and_resize_spec(prev_box: BBox, image_w: int, image_h: int, r_c: float, L: int) -> PatchSpec:
    """Search-window geometry around the previous box.

    The crop is centered on prev_box with extents min(r_c * w, W) (same for
    height), shifted to stay inside the image; the output raster is sized so
    the target occupies ~L pixels: out = round((L / w) * min(r_c * w, W)).
    """
    if prev_box.w < 1.0 or prev_box.h < 1.0:
        raise ValueError(f"degenerate box (extent under one pixel): {prev_box}")
    if r_c < 1.0:
        raise ValueError(f"expansion rate must be >= 1, got {r_c}")
    crop_w = min(r_c * prev_box.w, float(image_w))
    crop_h = min(r_c * prev_box.h, float(image_h))
    out_w = max(1, round_half_up(L * crop_w / prev_box.w))
    out_h = max(1, round_half_up(L * crop_h / prev_box.h))
    x = min(max(prev_box.cx - crop_w / 2.0, 0.0), image_w - crop_w)
    y = min(max(prev_box.cy - crop_h / 2.0, 0.0), image_h - crop_h)
    return PatchSpec(
        crop_rect=BBox(x, y, crop_w, crop_h),
        out_w=out_w,
        out_h=out_h,
        scale_x=out_w / crop_w,
        scale_y=out_h / crop_h,
        image_w=image_w,
        image_h=image_h,
    )


def _axis_taps(centers: np.ndarray, size: int):
    """Neighbor indices and bilinear weights for 0-based pixel-center positions.

    Positions outside the image get zero weight, so out-of-image regions
    contribute zero.
    """
    i0 = np.floor(centers).astype(np.int64)
    t = centers - i0
    i1 = i0 + 1
    w0 = (1.0 - t) * ((i0 >= 0) & (i0 < size))
    w1 = t * ((i1 >= 0) & (i1 < size))
    return np.clip(i0, 0, size - 1), np.clip(i1, 0, size - 1), w0, w1


def extract_patch(image: Tensor, spec: PatchSpec) -> Tensor:
    """Bilinear resize of the crop window to (C, out_h, out_w)."""
    if image.ndim == 2:
        image = image[None]
    c, h, w = image.shape
    if h != spec.image_h or w != spec.image_w:
        raise ValueError(f"image {image.shape} does not match spec {spec.image_w}x{spec.image_h}")
    rect = spec.crop_rect
    # output pixel centers mapped back to image coords, then to 0-based pixel-center units
    xs = rect.x + (np.arange(spec.out_w) + 0.5) * (rect.w / spec.out_w) - 0.5
    ys = rect.y + (np.arange(spec.out_h) + 0.5) * (rect.h / spec.out_h) - 0.5
    x0, x1, wx0, wx1 = _axis_taps(xs, w)
    y0, y1, wy0, wy1 = _axis_taps(ys, h)
    y0c, y1c = y0[:, None], y1[:, None]
    x0c, x1c = x0[None, :], x1[None, :]
    out = (
        wy0[:, None] * (wx0[None, :] * image[:, y0c, x0c] + wx1[None, :] * image[:, y0c, x1c])
        + wy1[:, None] * (wx0[None, :] * image[:, y1c, x0c] + wx1[None, :] * image[:, y1c, x1c])
    )
    return out.astype(image.dtype, copy=False)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union in [0, 1]."""
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def sample_candidates(
    center: BBox,
    n: int,
    trans_sigma: float,
    scale_sigma: float,
    rng: np.random.Generator,
    bounds: tuple[float, float] | None = None,
) -> list[BBox]:
    """n Gaussian-perturbed copies of `center`.

    Translation noise has std trans_sigma * mean(w, h); scale is 1.05**g with
    g ~ N(0, scale_sigma). Deterministic given the generator state. With
    `bounds` = (W, H) the boxes are clamped into [0, W] x [0, H].
    """
    if n < 1:
        raise ValueError(f"need n >= 1 candidates, got {n}")
    if trans_sigma < 0 or scale_sigma < 0:
        raise ValueError("sigmas must be >= 0")
    noise = rng.standard_normal((n, 3))
    m = 0.5 * (center.w + center.h)
    cx = center.cx + noise[:, 0] * trans_sigma * m
    cy = center.cy + noise[:, 1] * trans_sigma * m
    s = 1.05 ** (noise[:, 2] * scale_sigma)
    ws = center.w * s
    hs = center.h * s
    if bounds is not None:
        bw, bh = float(bounds[0]), float(bounds[1])
        ws = np.minimum(ws, bw)
        hs = np.minimum(hs, bh)
        xs = np.clip(cx - ws / 2.0, 0.0, bw - ws)
        ys = np.clip(cy - hs / 2.0, 0.0, bh - hs)
    else:
        xs = cx - ws / 2.0
        ys = cy - hs / 2.0
    return [BBox(float(xs[i]), float(ys[i]), float(ws[i]), float(hs[i])) for i in range(n)]


def label_samples(
    candidates: list[BBox], gt: BBox, pos_thresh: float, neg_thresh: float
) -> list[LabeledSample]:
    """IoU >= pos_thresh -> positive, IoU <= neg_thresh -> negative, between -> dropped."""
    if pos_thresh <= neg_thresh:
        raise ValueError(f"pos threshold {pos_thresh} must exceed neg threshold {neg_thresh}")
    out = []
    for c in candidates:
        v = iou(c, gt)
        if v >= pos_thresh:
            out.append(LabeledSample(c, POSITIVE, v))
        elif v <= neg_thresh:
            out.append(LabeledSample(c, NEGATIVE, v))
    return out


def map_box_to_patch(box: BBox, spec: PatchSpec) -> BBox:
    """Image-coordinate box into patch coordinates (affine by crop offset and scale)."""
    rect = spec.crop_rect
    return BBox(
        (box.x - rect.x) * spec.scale_x,
        (box.y - rect.y) * spec.scale_y,
        box.w * spec.scale_x,
        box.h * spec.scale_y,
    )


def map_box_to_image(box: BBox, spec: PatchSpec) -> BBox:
    """Inverse of map_box_to_patch."""
    rect = spec.crop_rect
    return BBox(
        box.x / spec.scale_x + rect.x,
        box.y / spec.scale_y + rect.y,
        box.w / spec.scale_x,
        box.h / spec.scale_y,
    )


def clamp_box(box: BBox, image_w: float, image_h: float, min_size: float = 2.0) -> BBox:
    """Shift/shrink a box so it lies inside the image with at least min_size extents."""
    w = min(max(box.w, min_size), image_w)
    h = min(max(box.h, min_size), image_h)
    x = min(max(box.x, 0.0), image_w - w)
    y = min(max(box.y, 0.0), image_h - h)
    return BBox(x, y, w, h)
