"""Online tracking lifecycle: init on frame 1, per-frame detection with the
mask generator removed, periodic joint updates with hard-negative mining.

The defining cost property: detection runs the backbone exactly once per
frame and scores every candidate on resampled features; storing update
samples costs one more forward. The raw-image baseline path (scoring
mode "raw") instead runs the backbone once per candidate and exists for
the speed comparison.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .config import TrackerConfig
from .geometry import (
    BBox,
    POSITIVE,
    clamp_box,
    crop_and_resize_spec,
    extract_patch,
    label_samples,
    map_box_to_image,
    map_box_to_patch,
    sample_candidates,
)
from .networks import Backbone, ClassifierD, GeneratorG, raw_baseline_forward, train_d_step, train_g_step
from .sampler import sample_two_level_batch
from .tensor import Tensor


@dataclass
class FrameSamples:
    """One frame's labeled features, stacked: (P, C, h, w) per level and sign."""

    frame_index: int
    pos_f1: Tensor
    pos_f2: Tensor
    neg_f1: Tensor
    neg_f2: Tensor


@dataclass
class TrackResult:
    box: BBox
    confidence: float
    ms: float
    detect_backbone_forwards: int = 0


class Tracker:
    """Single-target tracker state: networks, sample reservoir, current box.

    All randomness flows through one generator seeded from the config, so a
    whole trajectory is a pure function of (sequence, config, seed). detect()
    advances the frame counter; update() gates its training on it.
    """

    def __init__(self, config: TrackerConfig, scoring: str = "sampling"):
        if scoring not in ("sampling", "raw"):
            raise ValueError(f"unknown scoring mode {scoring!r}")
        self.config = config
        self.scoring = scoring
        self.dtype = np.float64 if config.dtype == "float64" else np.float32
        self.rng = np.random.default_rng(config.seed)
        c = config.backbone_width
        self.backbone = Backbone(self.rng, 3, c, self.dtype)
        h1, w1 = config.sbrf1_dims
        h2, w2 = config.sbrf2_dims
        self.classifier = ClassifierD(
            self.rng, c * h1 * w1, c * h2 * w2, config.fc1_width, config.fc2_width, self.dtype
        )
        self.generator = GeneratorG(self.rng, c, config.g_hidden, self.dtype)
        self.reservoir: list[FrameSamples] = []
        self._pool_cache = None  # rebuilt whenever the reservoir changes
        self.frame_index = 0
        self.current_box: BBox | None = None
        self.initialized = False
        self.detect_backbone_forwards = 0
        self.init_losses: list[float] = []

    # ---- sample collection ----------------------------------------------

    def _patch_features(self, frame: Tensor, box: BBox):
        _, h, w = frame.shape
        spec = crop_and_resize_spec(box, w, h, self.config.r_c, self.config.L)
        patch = extract_patch(frame, spec).astype(self.dtype, copy=False)
        feats = self.backbone.forward(patch)
        return spec, feats

    def _draw_boxes(self, gt_patch: BBox, bounds, n_pos: int, n_neg: int):
        """Positive/negative candidate boxes around the patch-coordinate target."""
        cfg = self.config
        pos: list[BBox] = []
        neg: list[BBox] = []
        for _ in range(60):
            if len(pos) >= n_pos and len(neg) >= n_neg:
                break
            batch = max(64, 2 * max(n_pos - len(pos), n_neg - len(neg)))
            if len(pos) < n_pos:
                cands = sample_candidates(
                    gt_patch, batch, cfg.train_pos_trans_sigma, cfg.train_pos_scale_sigma, self.rng, bounds
                )
                for s in label_samples(cands, gt_patch, cfg.pos_iou, cfg.neg_iou):
                    if s.label == POSITIVE and len(pos) < n_pos:
                        pos.append(s.box)
            if len(neg) < n_neg:
                cands = sample_candidates(
                    gt_patch, batch, cfg.train_neg_trans_sigma, cfg.train_neg_scale_sigma, self.rng, bounds
                ) + self._uniform_boxes(gt_patch, bounds, batch)
                for s in label_samples(cands, gt_patch, cfg.pos_iou, cfg.neg_iou):
                    if s.label != POSITIVE and len(neg) < n_neg:
                        neg.append(s.box)
        while len(pos) < n_pos:
            pos.append(gt_patch)
        if not neg:
            raise RuntimeError("could not draw any negative sample inside the patch")
        base = list(neg)
        i = 0
        while len(neg) < n_neg:
            neg.append(base[i % len(base)])
            i += 1
        return pos, neg

    def _uniform_boxes(self, like: BBox, bounds, n: int) -> list[BBox]:
        bw, bh = bounds
        g = self.rng.standard_normal(n)
        ws = np.minimum(like.w * 1.05**g, bw)
        hs = np.minimum(like.h * 1.05**g, bh)
        xs = self.rng.uniform(0.0, np.maximum(bw - ws, 1e-6))
        ys = self.rng.uniform(0.0, np.maximum(bh - hs, 1e-6))
        return [BBox(float(xs[i]), float(ys[i]), float(ws[i]), float(hs[i])) for i in range(n)]

    def _collect(self, frame: Tensor, box: BBox, n_pos: int, n_neg: int) -> FrameSamples:
        """One backbone forward, then labeled features for the reservoir."""
        cfg = self.config
        spec, feats = self._patch_features(frame, box)
        gt_patch = map_box_to_patch(box, spec)
        pos, neg = self._draw_boxes(gt_patch, (spec.out_w, spec.out_h), n_pos, n_neg)
        pf1, pf2 = sample_two_level_batch(
            feats, pos, cfg.sbrf1_dims, cfg.sbrf2_dims, cfg.grid_mode, cfg.swap_levels
        )
        nf1, nf2 = sample_two_level_batch(
            feats, neg, cfg.sbrf1_dims, cfg.sbrf2_dims, cfg.grid_mode, cfg.swap_levels
        )
        return FrameSamples(self.frame_index, pf1, pf2, nf1, nf2)

    def _pools(self):
        if self._pool_cache is None:
            self._pool_cache = (
                np.concatenate([f.pos_f1 for f in self.reservoir]),
                np.concatenate([f.pos_f2 for f in self.reservoir]),
                np.concatenate([f.neg_f1 for f in self.reservoir]),
                np.concatenate([f.neg_f2 for f in self.reservoir]),
            )
        return self._pool_cache

    # ---- lifecycle --------------------------------------------------------

    def init(self, first_frame: Tensor, gt_box: BBox, holdout: bool = False) -> "Tracker":
        """Extract first-frame samples and run the initial training iterations."""
        _, h, w = first_frame.shape
        if gt_box.x < 0 or gt_box.y < 0 or gt_box.x2 > w or gt_box.y2 > h:
            raise ValueError(f"ground-truth box {gt_box} lies outside the {w}x{h} frame")
        cfg = self.config
        self.frame_index = 1
        samples = self._collect(first_frame, gt_box, cfg.init_pos, cfg.init_neg)
        self.reservoir = [samples]
        self._pool_cache = None
        self.backbone.freeze_all()
        for _ in range(cfg.init_iters):
            self._train_iteration()
        self.current_box = gt_box
        self.initialized = True
        return self

    def _train_iteration(self) -> None:
        cfg = self.config
        pos1, pos2, _, _ = self._pools()
        n = pos1.shape[0]
        idx = self.rng.choice(n, size=min(cfg.batch_pos, n), replace=n < cfg.batch_pos)
        bp1, bp2 = pos1[idx], pos2[idx]
        bn1, bn2, _ = self.mine_hard_negatives(cfg.neg_pool, cfg.batch_neg)
        loss = train_d_step(
            self.classifier,
            self.generator,
            bp1,
            bp2,
            bn1,
            bn2,
            cfg.d_opt,
            cfg.k_drop,
            cfg.adversarial,
        )
        if not self.initialized:
            self.init_losses.append(loss)
        if cfg.adversarial and cfg.lambda_ > 0:
            train_g_step(
                self.generator, self.classifier, bp1, bp2, cfg.g_opt, cfg.lambda_, cfg.base_mask_dims
            )

    def mine_hard_negatives(self, pool_size: int | None = None, take: int | None = None):
        """Top `take` of a `pool_size` reservoir-negative draw by positive score.

        The pool is drawn without replacement when the reservoir suffices,
        with replacement otherwise. Ties keep pool order (stable sort).
        Returns (f1, f2, reservoir indices).
        """
        cfg = self.config
        pool_size = pool_size or cfg.neg_pool
        take = take or cfg.batch_neg
        if not self.reservoir:
            raise ValueError("empty reservoir")
        _, _, neg1, neg2 = self._pools()
        total = neg1.shape[0]
        if total == 0:
            raise ValueError("reservoir holds no negatives")
        pool_idx = self.rng.choice(total, size=pool_size, replace=total < pool_size)
        probs = self.classifier.scores(neg1[pool_idx], neg2[pool_idx])
        order = np.argsort(-probs, kind="stable")[:take]
        chosen = pool_idx[order]
        return neg1[chosen], neg2[chosen], chosen

    def detect(self, frame: Tensor) -> tuple[BBox, float]:
        """One search-window pass: score candidates, average the top_k.

        The mask generator plays no part here; candidate features go straight
        to the classifier. Advances the frame counter.
        """
        if not self.initialized:
            raise ValueError("tracker is not initialized")
        cfg = self.config
        _, h, w = frame.shape
        self.frame_index += 1
        count0 = self.backbone.forward_count
        if self.scoring == "sampling":
            spec, feats = self._patch_features(frame, self.current_box)
        else:
            spec = crop_and_resize_spec(self.current_box, w, h, cfg.r_c, cfg.L)
        center_patch = map_box_to_patch(self.current_box, spec)
        cands = sample_candidates(
            center_patch, cfg.n_candidates, cfg.trans_sigma, cfg.scale_sigma, self.rng,
            (spec.out_w, spec.out_h),
        )
        if self.scoring == "sampling":
            f1, f2 = sample_two_level_batch(
                feats, cands, cfg.sbrf1_dims, cfg.sbrf2_dims, cfg.grid_mode, cfg.swap_levels
            )
            probs = self.classifier.scores(f1, f2)
        else:
            image_boxes = [map_box_to_image(b, spec) for b in cands]
            probs = raw_baseline_forward(
                image_boxes, frame.astype(self.dtype, copy=False), self.backbone, self.classifier,
                cfg.L, cfg.sbrf1_dims, cfg.sbrf2_dims, cfg.grid_mode, cfg.swap_levels,
            )
        self.detect_backbone_forwards = self.backbone.forward_count - count0
        top = np.argsort(-probs, kind="stable")[: cfg.top_k]
        best = BBox(
            float(np.mean([cands[i].x for i in top])),
            float(np.mean([cands[i].y for i in top])),
            float(np.mean([cands[i].w for i in top])),
            float(np.mean([cands[i].h for i in top])),
        )
        confidence = float(probs[top].mean())
        box = clamp_box(map_box_to_image(best, spec), w, h)
        self.current_box = box
        return box, confidence

    def update(self, frame: Tensor, estimated_box: BBox) -> "Tracker":
        """Store this frame's samples; on boundary frames run the joint update."""
        cfg = self.config
        samples = self._collect(frame, estimated_box, cfg.frame_pos, cfg.frame_neg)
        self.reservoir.append(samples)
        horizon = self.frame_index - cfg.reservoir_horizon
        self.reservoir = [f for f in self.reservoir if f.frame_index > horizon]
        self._pool_cache = None
        if self.frame_index % cfg.update_period == 0:
            for _ in range(cfg.update_iters):
                self._train_iteration()
        return self


def track_sequence(
    frames: list[Tensor], gt_first: BBox, config: TrackerConfig, scoring: str = "sampling"
) -> list[TrackResult]:
    """Init on frame 1, then detect + update per frame; per-frame wall ms recorded."""
    if not frames:
        raise ValueError("empty sequence")
    tracker = Tracker(config, scoring)
    t0 = time.perf_counter()
    tracker.init(frames[0], gt_first)
    results = [TrackResult(gt_first, 1.0, (time.perf_counter() - t0) * 1000.0, 0)]
    for frame in frames[1:]:
        t0 = time.perf_counter()
        box, conf = tracker.detect(frame)
        tracker.update(frame, box)
        ms = (time.perf_counter() - t0) * 1000.0
        results.append(TrackResult(box, conf, ms, tracker.detect_backbone_forwards))
    return results


def write_results_csv(results: list[TrackResult], include_timing: bool = False) -> str:
    """CSV rows `frame,x,y,w,h,confidence,ms` (1-based frames, image coords).

    Without include_timing the ms column is a fixed 0.000 so the file is
    byte-reproducible for a fixed seed.
    """
    lines = ["frame,x,y,w,h,confidence,ms"]
    for i, r in enumerate(results, start=1):
        ms = f"{r.ms:.3f}" if include_timing else "0.000"
        lines.append(
            f"{i},{r.box.x:.3f},{r.box.y:.3f},{r.box.w:.3f},{r.box.h:.3f},{r.confidence:.6f},{ms}"
        )
    return "\n".join(lines) + "\n"


def read_results_csv(text: str) -> list[TrackResult]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if lines and lines[0].lower().startswith("frame"):
        lines = lines[1:]
    out = []
    for ln in lines:
        parts = ln.split(",")
        if len(parts) != 7:
            raise ValueError(f"expected 7 CSV fields, got {len(parts)} in {ln!r}")
        _, x, y, w, h, conf, ms = parts
        out.append(TrackResult(BBox(float(x), float(y), float(w), float(h)), float(conf), float(ms)))
    return out
