"""One-pass evaluation metrics: precision and success curves.

precision_curve[t] is the fraction of frames whose predicted center lies
within t pixels of ground truth (t = 0..50); success_curve[i] the fraction
whose IoU is >= i * 0.05 (i = 0..20). The headline numbers are
precision at 20 px and the mean of the 21 success values (AUC).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BBox, iou

PRECISION_THRESHOLDS = np.arange(51, dtype=np.float64)
SUCCESS_THRESHOLDS = np.arange(21, dtype=np.float64) * 0.05


@dataclass
class EvalResult:
    precision_curve: np.ndarray  # (51,)
    success_curve: np.ndarray  # (21,)
    precision_at_20: float
    auc: float
    mean_fps: float


def evaluate(results: list[BBox], gt: list[BBox], timings_ms=None) -> EvalResult:
    """Curves plus headline scores; mean_fps is 0 when timings are absent/untimed."""
    if len(results) != len(gt):
        raise ValueError(f"{len(results)} result boxes vs {len(gt)} ground-truth boxes")
    if not results:
        raise ValueError("empty evaluation")
    dists = np.array(
        [np.hypot(r.cx - g.cx, r.cy - g.cy) for r, g in zip(results, gt)], dtype=np.float64
    )
    ious = np.array([iou(r, g) for r, g in zip(results, gt)], dtype=np.float64)
    precision = (dists[None, :] <= PRECISION_THRESHOLDS[:, None]).mean(axis=1)
    success = (ious[None, :] >= SUCCESS_THRESHOLDS[:, None]).mean(axis=1)
    mean_fps = 0.0
    if timings_ms is not None:
        total = float(np.sum(timings_ms))
        if total > 0:
            mean_fps = 1000.0 * len(results) / total
    return EvalResult(
        precision_curve=precision,
        success_curve=success,
        precision_at_20=float(precision[20]),
        auc=float(success.mean()),
        mean_fps=mean_fps,
    )


def format_report(res: EvalResult) -> str:
    """Headline scores plus both curves as CSV blocks."""
    lines = [
        f"precision_at_20 = {res.precision_at_20:.6f}",
        f"success_auc = {res.auc:.6f}",
        f"mean_fps = {res.mean_fps:.3f}",
        "",
        "precision_curve:",
        "threshold_px,precision",
    ]
    lines += [f"{int(t)},{v:.6f}" for t, v in zip(PRECISION_THRESHOLDS, res.precision_curve)]
    lines += ["", "success_curve:", "threshold_iou,success"]
    lines += [f"{t:.2f},{v:.6f}" for t, v in zip(SUCCESS_THRESHOLDS, res.success_curve)]
    return "\n".join(lines) + "\n"
