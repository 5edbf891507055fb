"""Spatial bilinear resampling of backbone feature maps.

Per-candidate features are read off the two shared feature maps at
continuous positions instead of re-running the backbone per candidate.
Sampling positions use 1-based units where position p = j lands exactly on
the center of the j-th feature cell; each sampled value is the
bilinear-kernel sum sum_ij F[i,j] * max(0, 1-|y-i|) * max(0, 1-|x-j|), so
positions more than one cell outside the map contribute zero (no clamping).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BBox
from .tensor import Tensor


@dataclass(frozen=True)
class FeaturePair:
    """The two backbone tap maps, (C, H, W) each, with their pixel strides."""

    level1: Tensor
    level2: Tensor
    strides: tuple[int, int] = (8, 16)


@dataclass(frozen=True)
class SampledFeatures:
    """Fixed-size per-candidate features: sbrf1 (C, 6, 6), sbrf2 (C, 8, 8) by default."""

    sbrf1: Tensor
    sbrf2: Tensor


@dataclass(frozen=True)
class SampleGrid:
    """Evenly spaced sampling positions inside a box (1-based cell-center units)."""

    xs: np.ndarray  # (w_s,)
    ys: np.ndarray  # (h_s,)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.ys), len(self.xs)


def make_grid(box: BBox, h_s: int, w_s: int, mode: str = "center") -> SampleGrid:
    """Evenly distributed grid over `box` (given in feature-map units).

    mode "center": cell centers, x = x0 + (j - 0.5) * w / w_s.
    mode "endpoint": endpoints inclusive, x = x0 + (j - 1) * w / (w_s - 1)
    (box center when the axis has a single sample).
    """
    if h_s < 1 or w_s < 1:
        raise ValueError(f"grid dims must be >= 1, got {h_s}x{w_s}")
    if mode == "center":
        xs = box.x + (np.arange(1, w_s + 1) - 0.5) * (box.w / w_s)
        ys = box.y + (np.arange(1, h_s + 1) - 0.5) * (box.h / h_s)
    elif mode == "endpoint":
        xs = np.full(1, box.x + box.w / 2.0) if w_s == 1 else box.x + np.arange(w_s) * (box.w / (w_s - 1))
        ys = np.full(1, box.y + box.h / 2.0) if h_s == 1 else box.y + np.arange(h_s) * (box.h / (h_s - 1))
    else:
        raise ValueError(f"unknown grid mode {mode!r}")
    return SampleGrid(xs=np.asarray(xs, dtype=np.float64), ys=np.asarray(ys, dtype=np.float64))


def _taps(pos: np.ndarray, size: int):
    """Neighbor indices and kernel weights for 1-based positions on `size` cells."""
    q = pos - 1.0  # 0-based cell centers at integers
    i0 = np.floor(q).astype(np.int64)
    t = q - i0
    i1 = i0 + 1
    w0 = (1.0 - t) * ((i0 >= 0) & (i0 < size))
    w1 = t * ((i1 >= 0) & (i1 < size))
    return np.clip(i0, 0, size - 1), np.clip(i1, 0, size - 1), w0, w1


def sbr_sample(feature: Tensor, grid: SampleGrid) -> Tensor:
    """Bilinear samples of (C, H, W) at the grid positions -> (C, h_s, w_s)."""
    if feature.ndim == 2:
        feature = feature[None]
    _, h, w = feature.shape
    x0, x1, wx0, wx1 = _taps(grid.xs, w)
    y0, y1, wy0, wy1 = _taps(grid.ys, h)
    y0c, y1c = y0[:, None], y1[:, None]
    x0c, x1c = x0[None, :], x1[None, :]
    out = (
        wy0[:, None] * (wx0[None, :] * feature[:, y0c, x0c] + wx1[None, :] * feature[:, y0c, x1c])
        + wy1[:, None] * (wx0[None, :] * feature[:, y1c, x0c] + wx1[None, :] * feature[:, y1c, x1c])
    )
    return out.astype(feature.dtype, copy=False)


def sbr_backward(feature_shape: tuple, grid: SampleGrid, upstream: Tensor) -> Tensor:
    """Exact adjoint of sbr_sample: scatters upstream to the <=4 neighbor cells."""
    if len(feature_shape) == 2:
        feature_shape = (1,) + tuple(feature_shape)
    c, h, w = feature_shape
    if upstream.ndim == 2:
        upstream = upstream[None]
    x0, x1, wx0, wx1 = _taps(grid.xs, w)
    y0, y1, wy0, wy1 = _taps(grid.ys, h)
    grad = np.zeros((c, h, w), dtype=upstream.dtype)
    cc = np.arange(c)[:, None, None]
    for yi, wy in ((y0, wy0), (y1, wy1)):
        for xi, wx in ((x0, wx0), (x1, wx1)):
            np.add.at(
                grad,
                (cc, yi[None, :, None], xi[None, None, :]),
                upstream * (wy[:, None] * wx[None, :]),
            )
    return grad


def _level_boxes(box: BBox, strides: tuple[int, int], swap_levels: bool):
    b1 = box.scaled(1.0 / strides[0])
    b2 = box.scaled(1.0 / strides[1])
    if swap_levels:
        return b2, b1
    return b1, b2


def sample_two_level(
    features: FeaturePair,
    box: BBox,
    sbrf1_dims: tuple[int, int] = (6, 6),
    sbrf2_dims: tuple[int, int] = (8, 8),
    grid_mode: str = "center",
    swap_levels: bool = False,
) -> SampledFeatures:
    """Fixed-size features for one patch-coordinate box from both tap levels.

    The box is divided by each level's stride to get the per-level sampling
    box; sbrf1 comes from the stride-8 tap, sbrf2 from the stride-16 tap
    (swap_levels flips the assignment).
    """
    b1, b2 = _level_boxes(box, features.strides, swap_levels)
    src1, src2 = (features.level2, features.level1) if swap_levels else (features.level1, features.level2)
    g1 = make_grid(b1, sbrf1_dims[0], sbrf1_dims[1], grid_mode)
    g2 = make_grid(b2, sbrf2_dims[0], sbrf2_dims[1], grid_mode)
    return SampledFeatures(sbrf1=sbr_sample(src1, g1), sbrf2=sbr_sample(src2, g2))


def _sample_batch(feature: Tensor, xs: np.ndarray, ys: np.ndarray) -> Tensor:
    """Vectorized sbr_sample over B grids: xs (B, w_s), ys (B, h_s) -> (B, C, h_s, w_s)."""
    _, h, w = feature.shape
    x0, x1, wx0, wx1 = _taps(xs, w)
    y0, y1, wy0, wy1 = _taps(ys, h)
    y0c, y1c = y0[:, :, None], y1[:, :, None]  # (B, h_s, 1)
    x0c, x1c = x0[:, None, :], x1[:, None, :]  # (B, 1, w_s)
    out = (
        wy0[:, :, None] * (wx0[:, None, :] * feature[:, y0c, x0c] + wx1[:, None, :] * feature[:, y0c, x1c])
        + wy1[:, :, None] * (wx0[:, None, :] * feature[:, y1c, x0c] + wx1[:, None, :] * feature[:, y1c, x1c])
    )  # (C, B, h_s, w_s)
    return out.transpose(1, 0, 2, 3).astype(feature.dtype, copy=False)


def sample_two_level_batch(
    features: FeaturePair,
    boxes: list[BBox],
    sbrf1_dims: tuple[int, int] = (6, 6),
    sbrf2_dims: tuple[int, int] = (8, 8),
    grid_mode: str = "center",
    swap_levels: bool = False,
) -> tuple[Tensor, Tensor]:
    """Batched sample_two_level: returns stacked (B, C, h1, w1) and (B, C, h2, w2).

    Equals stacking sample_two_level per box; the loop is fused into four
    gathers per level for the per-frame candidate sweep.
    """
    src1, src2 = (features.level2, features.level1) if swap_levels else (features.level1, features.level2)
    grids = [_level_boxes(b, features.strides, swap_levels) for b in boxes]
    g1 = [make_grid(b1, sbrf1_dims[0], sbrf1_dims[1], grid_mode) for b1, _ in grids]
    g2 = [make_grid(b2, sbrf2_dims[0], sbrf2_dims[1], grid_mode) for _, b2 in grids]
    f1 = _sample_batch(src1, np.stack([g.xs for g in g1]), np.stack([g.ys for g in g1]))
    f2 = _sample_batch(src2, np.stack([g.xs for g in g2]), np.stack([g.ys for g in g2]))
    return f1, f2
