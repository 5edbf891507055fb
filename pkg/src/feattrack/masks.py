"""Dropout-mask machinery between the small base weight mask and the
sampling-feature rasters.

A base cell (r, c) of an H_M x W_M mask owns a contiguous block of an
H_s x W_s raster; the row block for r is
[floor((r-1)*H_s/H_M + 1/2) + 1, floor(r*H_s/H_M + 1/2)] (1-based, columns
alike). f1 expands a small binary grid to raster size by zeroing the blocks
of its zero cells; f2 does the same for the k lowest-valued cells of a real
base mask. The reference mask is the single-zero grid whose dropout hurts
the classifier most on a positive sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sampler import SampledFeatures
from .tensor import Tensor


@dataclass(frozen=True)
class BinaryMask:
    """H_s x W_s grid over {0,1} plus the base cells (1-based (r, c)) it zeroes."""

    values: np.ndarray
    zero_cells: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class ReferenceMask:
    """Highest-loss single-zero mask for one positive sample."""

    base_grid: np.ndarray  # H_M x W_M with a single zero
    cell: tuple[int, int]  # 1-based (row, col) of the zero
    mask1: BinaryMask
    mask2: BinaryMask
    loss: float


def block_range(index_m: int, extent_s: int, extent_m: int) -> tuple[int, int]:
    """1-based inclusive raster range owned by base index index_m.

    Exact integer evaluation of floor(a/extent_m + 1/2) terms, so no float
    rounding can perturb the partition.
    """
    if not (1 <= index_m <= extent_m <= extent_s):
        raise ValueError(
            f"need 1 <= index_m <= extent_m <= extent_s, got {index_m}, {extent_m}, {extent_s}"
        )
    lo = (2 * (index_m - 1) * extent_s + extent_m) // (2 * extent_m) + 1
    hi = (2 * index_m * extent_s + extent_m) // (2 * extent_m)
    return lo, hi


def _expand_cells(cells, h_s: int, w_s: int, h_m: int, w_m: int) -> BinaryMask:
    values = np.ones((h_s, w_s), dtype=np.float64)
    for r, c in cells:
        r0, r1 = block_range(r, h_s, h_m)
        c0, c1 = block_range(c, w_s, w_m)
        values[r0 - 1 : r1, c0 - 1 : c1] = 0.0
    return BinaryMask(values=values, zero_cells=tuple(cells))


def f1_expand(mask_m: np.ndarray, h_s: int, w_s: int) -> BinaryMask:
    """Expands a small binary grid to raster size (zero cells -> zero blocks)."""
    mask_m = np.asarray(mask_m)
    h_m, w_m = mask_m.shape
    if h_m > h_s or w_m > w_s:
        raise ValueError(f"grid {mask_m.shape} exceeds target {h_s}x{w_s}")
    rs, cs = np.nonzero(mask_m == 0)
    cells = [(int(r) + 1, int(c) + 1) for r, c in zip(rs, cs)]
    return _expand_cells(cells, h_s, w_s, h_m, w_m)


def f2_generate(base: np.ndarray, h_s: int, w_s: int, k: int = 1) -> BinaryMask:
    """Zeroes the blocks of the k lowest-valued base cells (row-major tie-break)."""
    base = np.asarray(base, dtype=np.float64)
    h_m, w_m = base.shape
    if not (1 <= k <= h_m * w_m):
        raise ValueError(f"k must lie in [1, {h_m * w_m}], got {k}")
    order = np.argsort(base.ravel(), kind="stable")[:k]
    cells = [(int(i) // w_m + 1, int(i) % w_m + 1) for i in order]
    return _expand_cells(cells, h_s, w_s, h_m, w_m)


def enumerate_single_zero_masks(h_m: int, w_m: int) -> list[np.ndarray]:
    """The h_m * w_m grids that are all ones except one zero, in row-major order."""
    if h_m < 1 or w_m < 1:
        raise ValueError(f"mask dims must be >= 1, got {h_m}x{w_m}")
    out = []
    for i in range(h_m * w_m):
        g = np.ones((h_m, w_m), dtype=np.float64)
        g[i // w_m, i % w_m] = 0.0
        out.append(g)
    return out


def apply_mask(features: Tensor, mask: BinaryMask | np.ndarray) -> Tensor:
    """Elementwise spatial dropout broadcast across channels."""
    values = mask.values if isinstance(mask, BinaryMask) else np.asarray(mask)
    if features.shape[-2:] != values.shape:
        raise ValueError(f"mask {values.shape} does not match features {features.shape}")
    return features * values.astype(features.dtype, copy=False)


_single_zero_cache: dict[tuple, tuple] = {}


def _single_zero_expansions(h_m: int, w_m: int, h_s: int, w_s: int):
    """All single-zero grids expanded to one raster size (cached; masks are fixed)."""
    key = (h_m, w_m, h_s, w_s)
    if key not in _single_zero_cache:
        grids = enumerate_single_zero_masks(h_m, w_m)
        expanded = [f1_expand(g, h_s, w_s) for g in grids]
        _single_zero_cache[key] = (grids, expanded, np.stack([m.values for m in expanded]))
    return _single_zero_cache[key]


def select_reference_mask(
    positive: SampledFeatures,
    classifier,
    h_m: int = 3,
    w_m: int = 3,
) -> ReferenceMask:
    """Single-zero mask that maximizes the classifier loss on a positive sample.

    `classifier` is either an object with positive_losses(f1_batch, f2_batch)
    scoring all masked variants in one pass, or a callable loss(af1, af2) for
    a single pair. Ties go to the lowest row-major cell.
    """
    h1, w1 = positive.sbrf1.shape[-2:]
    h2, w2 = positive.sbrf2.shape[-2:]
    grids, masks1, stack1 = _single_zero_expansions(h_m, w_m, h1, w1)
    _, masks2, stack2 = _single_zero_expansions(h_m, w_m, h2, w2)
    af1 = positive.sbrf1[None] * stack1[:, None].astype(positive.sbrf1.dtype)
    af2 = positive.sbrf2[None] * stack2[:, None].astype(positive.sbrf2.dtype)
    if hasattr(classifier, "positive_losses"):
        losses = np.asarray(classifier.positive_losses(af1, af2), dtype=np.float64)
    else:
        losses = np.array([float(classifier(af1[i], af2[i])) for i in range(len(grids))])
    i = int(np.argmax(losses))  # argmax keeps the first (lowest row-major) maximum
    return ReferenceMask(
        base_grid=grids[i],
        cell=(i // w_m + 1, i % w_m + 1),
        mask1=masks1[i],
        mask2=masks2[i],
        loss=float(losses[i]),
    )
