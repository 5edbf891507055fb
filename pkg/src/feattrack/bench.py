"""Speed benchmark: the feature-sampling path against the raw-image
per-candidate baseline, under identical candidates and seeds.

Both paths run the full tracking loop (init, detect, update); only the
detection scoring differs. Wall-clock FPS is the median over tracked
frames; the analytic FLOP ratio compares one detection's arithmetic:
n * (F_bb(LxL) + F_head) versus F_bb(patch) + n * (F_sbr + F_head).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .config import TrackerConfig
from .geometry import crop_and_resize_spec
from .networks import sbr_flops
from .sequence import Sequence
from .tracker import Tracker, track_sequence


@dataclass
class BenchReport:
    n_candidates: int
    frames: int
    sampling_fps: float
    baseline_fps: float
    speedup: float
    analytic_flop_ratio: float
    flop_ratio_by_n: dict[int, float]
    sampling_detect_forwards: int
    baseline_detect_forwards: int


def analytic_flop_ratio(config: TrackerConfig, seq: Sequence, n_candidates: int) -> float:
    probe = Tracker(config)
    _, h, w = seq.frames[0].shape
    spec = crop_and_resize_spec(seq.gt[0], w, h, config.r_c, config.L)
    f_bb_crop = probe.backbone.flops(config.L, config.L)
    f_bb_patch = probe.backbone.flops(spec.out_h, spec.out_w)
    f_head = probe.classifier.flops_per_sample()
    f_sbr = sbr_flops(config.backbone_width, config.sbrf1_dims, config.sbrf2_dims)
    n = n_candidates
    return n * (f_bb_crop + f_head) / (f_bb_patch + n * (f_sbr + f_head))


def _median_fps(results) -> float:
    ms = [r.ms for r in results[1:]]  # skip the init frame
    med = float(np.median(ms))
    return 1000.0 / med if med > 0 else 0.0


def speed_benchmark(
    seq: Sequence,
    config: TrackerConfig,
    n_candidates: int,
    flop_ns: tuple[int, ...] = (1, 16, 64, 256),
) -> BenchReport:
    if len(seq.frames) < 10:
        raise ValueError(f"benchmark needs >= 10 frames, got {len(seq.frames)}")
    cfg = dataclasses.replace(config, n_candidates=n_candidates)
    sampled = track_sequence(seq.frames, seq.gt[0], cfg, scoring="sampling")
    base = track_sequence(seq.frames, seq.gt[0], cfg, scoring="raw")
    sampling_fps = _median_fps(sampled)
    base_fps = _median_fps(base)
    return BenchReport(
        n_candidates=n_candidates,
        frames=len(seq.frames),
        sampling_fps=sampling_fps,
        baseline_fps=base_fps,
        speedup=sampling_fps / base_fps if base_fps > 0 else float("inf"),
        analytic_flop_ratio=analytic_flop_ratio(cfg, seq, n_candidates),
        flop_ratio_by_n={n: analytic_flop_ratio(cfg, seq, n) for n in flop_ns},
        sampling_detect_forwards=max(r.detect_backbone_forwards for r in sampled[1:]),
        baseline_detect_forwards=max(r.detect_backbone_forwards for r in base[1:]),
    )


def format_bench_report(rep: BenchReport) -> str:
    lines = [
        f"candidates = {rep.n_candidates}",
        f"frames = {rep.frames}",
        f"sampling_fps = {rep.sampling_fps:.3f}",
        f"baseline_fps = {rep.baseline_fps:.3f}",
        f"speedup = {rep.speedup:.3f}",
        f"analytic_flop_ratio = {rep.analytic_flop_ratio:.3f}",
        f"sampling_backbone_forwards_per_detect = {rep.sampling_detect_forwards}",
        f"baseline_backbone_forwards_per_detect = {rep.baseline_detect_forwards}",
        "",
        "flop_ratio_by_candidates:",
        "n,ratio",
    ]
    lines += [f"{n},{v:.3f}" for n, v in sorted(rep.flop_ratio_by_n.items())]
    return "\n".join(lines) + "\n"
