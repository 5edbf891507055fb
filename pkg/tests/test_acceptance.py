"""Acceptance gate: every release criterion at its stated tolerance.

Each test prints one [PASS] line on success (run with -s or -rA to see
them). The tracking suites reuse session-scoped results so the heavy runs
happen once.
"""

import time

import numpy as np
import pytest

from conftest import numeric_grad, numeric_grad_subset, rel_err
from feattrack.bench import speed_benchmark
from feattrack.cli import main as cli_main
from feattrack.config import harness_config
from feattrack.geometry import (
    POSITIVE,
    crop_and_resize_spec,
    extract_patch,
    label_samples,
    map_box_to_patch,
    sample_candidates,
)
from feattrack.masks import (
    block_range,
    enumerate_single_zero_masks,
    f1_expand,
    f2_generate,
    select_reference_mask,
)
from feattrack.metrics import evaluate
from feattrack.networks import ClassifierD, GeneratorG, train_g_step
from feattrack.sampler import SampleGrid, SampledFeatures, sample_two_level_batch, sbr_backward, sbr_sample
from feattrack.synth import generate_synthetic_sequence, save_sequence
from feattrack.tensor import (
    LayerParams,
    conv2d,
    conv2d_backward,
    cross_entropy_loss,
    fully_connected,
    fully_connected_backward,
    maxpool2d,
    maxpool2d_backward,
    relu,
    relu_backward,
)
from feattrack.tracker import Tracker, track_sequence
from test_masks import brute_force_member
from test_sampler import literal_sbr

EASY_SEEDS = (101, 102, 103, 104, 105)
CHALLENGE_SEEDS = (201, 202)


def _suite_eval(seeds, n_frames, challenges, adversarial):
    per_seq = {}
    for seed in seeds:
        seq = generate_synthetic_sequence(seed, n_frames, challenges=challenges)
        cfg = harness_config(seed=seed, adversarial=adversarial)
        res = track_sequence(seq.frames, seq.gt[0], cfg)
        per_seq[seed] = evaluate([r.box for r in res], seq.gt, [r.ms for r in res])
    return per_seq


@pytest.fixture(scope="module")
def easy_suite():
    t0 = time.perf_counter()
    per_seq = _suite_eval(EASY_SEEDS, 100, (), adversarial=True)
    return per_seq, time.perf_counter() - t0


@pytest.fixture(scope="module")
def easy_suite_masks_disabled():
    return _suite_eval(EASY_SEEDS, 100, (), adversarial=False)


# ---- criterion 1: gradient suite ------------------------------------------------


def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    tol, tol_e2e, n_fixtures = 1e-4, 1e-3, 20

    def lp64(rng, *shape):
        return LayerParams(
            weights=rng.standard_normal(shape), biases=rng.standard_normal(shape[0])
        )

    for seed in range(n_fixtures):
        rng = np.random.default_rng(seed)

        # conv2d
        x = rng.standard_normal((1, 2, 5, 5))
        p = lp64(rng, 3, 2, 3, 3)
        u = rng.standard_normal(conv2d(x, p, 1, 1).shape)
        dx, dw, db = conv2d_backward(x, p, u, 1, 1)
        assert rel_err(numeric_grad(lambda: float((conv2d(x, p, 1, 1) * u).sum()), x), dx) < tol
        assert rel_err(numeric_grad(lambda: float((conv2d(x, p, 1, 1) * u).sum()), p.weights), dw) < tol
        assert rel_err(numeric_grad(lambda: float((conv2d(x, p, 1, 1) * u).sum()), p.biases), db) < tol

        # fully_connected
        xf = rng.standard_normal((3, 6))
        pf = lp64(rng, 4, 6)
        uf = rng.standard_normal((3, 4))
        dxf, dwf, dbf = fully_connected_backward(xf, pf, uf)
        assert rel_err(numeric_grad(lambda: float((fully_connected(xf, pf) * uf).sum()), xf), dxf) < tol
        assert rel_err(numeric_grad(lambda: float((fully_connected(xf, pf) * uf).sum()), pf.weights), dwf) < tol

        # relu (inputs kept away from the kink)
        xr = rng.standard_normal((4, 5))
        xr = np.where(np.abs(xr) < 1e-3, xr + 0.01, xr)
        ur = rng.standard_normal((4, 5))
        assert rel_err(numeric_grad(lambda: float((relu(xr) * ur).sum()), xr), relu_backward(xr, ur)) < tol

        # maxpool2d (distinct window entries)
        xm = rng.standard_normal((1, 2, 4, 6)) + 0.001 * np.arange(48).reshape(1, 2, 4, 6)
        um = rng.standard_normal((1, 2, 2, 3))
        _, idx = maxpool2d(xm)
        dm = maxpool2d_backward(xm.shape, idx, um)
        assert rel_err(numeric_grad(lambda: float((maxpool2d(xm)[0] * um).sum()), xm), dm) < tol

        # cross entropy
        logits = rng.standard_normal((4, 2))
        labels = rng.integers(1, 3, size=4)
        _, dlog = cross_entropy_loss(logits, labels)
        assert rel_err(numeric_grad(lambda: cross_entropy_loss(logits, labels)[0], logits), dlog) < tol

        # sbr_sample (linear in the feature map)
        f = rng.standard_normal((2, 5, 6))
        grid = SampleGrid(xs=rng.uniform(0.0, 7.0, 4), ys=rng.uniform(0.0, 6.0, 3))
        us = rng.standard_normal((2, 3, 4))
        ds = sbr_backward(f.shape, grid, us)
        assert rel_err(numeric_grad(lambda: float((sbr_sample(f, grid) * us).sum()), f), ds) < tol

        # generator_forward (params of both conv layers)
        g = GeneratorG(rng, 3, 6, np.float64)
        xg = rng.standard_normal((3, 6, 6))
        tgt = (rng.random((3, 3)) > 0.5).astype(np.float64)
        cache = {}
        out = g.forward(xg, cache)
        ggrads = g.backward(cache, 2.0 * (out - tgt))
        for name, layer in g.named_layers():
            idxs = rng.choice(layer.weights.size, size=min(8, layer.weights.size), replace=False)
            fd = numeric_grad_subset(lambda: float(((g.forward(xg) - tgt) ** 2).sum()), layer.weights, idxs)
            assert rel_err(fd, ggrads[name][0].reshape(-1)[idxs]) < tol, name

        # classifier_forward (params through the cross-entropy head)
        d = ClassifierD(rng, 3 * 36, 3 * 64, 12, 16, np.float64)
        f1 = rng.standard_normal((3, 3 * 36))
        f2 = rng.standard_normal((3, 3 * 64))
        lab = [POSITIVE, 2, POSITIVE]
        cache = {}
        _, dlogits = cross_entropy_loss(d.forward(f1, f2, cache), lab)
        dgr = d.backward(cache, dlogits)
        for name, layer in d.named_layers():
            idxs = rng.choice(layer.weights.size, size=min(8, layer.weights.size), replace=False)
            fd = numeric_grad_subset(
                lambda: cross_entropy_loss(d.forward(f1, f2), lab)[0], layer.weights, idxs
            )
            assert rel_err(fd, dgr[name][0].reshape(-1)[idxs]) < tol, name

        # end-to-end D loss (adversarial masks on, gradients w.r.t. D params)
        pos1 = rng.standard_normal((4, 3, 6, 6))
        pos2 = rng.standard_normal((4, 3, 8, 8))
        neg1 = rng.standard_normal((8, 3, 6, 6))
        neg2 = rng.standard_normal((8, 3, 8, 8))

        def d_loss():
            from feattrack.networks import masked_positive_features

            af1, af2 = masked_positive_features(g, pos1, pos2, 1)
            x1 = np.concatenate([af1.reshape(4, -1), neg1.reshape(8, -1)])
            x2 = np.concatenate([af2.reshape(4, -1), neg2.reshape(8, -1)])
            return cross_entropy_loss(d.forward(x1, x2), [1] * 4 + [2] * 8)[0]

        from feattrack.networks import masked_positive_features

        af1, af2 = masked_positive_features(g, pos1, pos2, 1)
        x1 = np.concatenate([af1.reshape(4, -1), neg1.reshape(8, -1)])
        x2 = np.concatenate([af2.reshape(4, -1), neg2.reshape(8, -1)])
        cache = {}
        _, dlogits = cross_entropy_loss(d.forward(x1, x2, cache), [1] * 4 + [2] * 8)
        dgr = d.backward(cache, dlogits)
        for name, layer in d.named_layers():
            idxs = rng.choice(layer.weights.size, size=min(6, layer.weights.size), replace=False)
            fd = numeric_grad_subset(d_loss, layer.weights, idxs)
            assert rel_err(fd, dgr[name][0].reshape(-1)[idxs]) < tol_e2e, name

    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"gradient suite took {elapsed:.1f}s"
    print(f"\n[PASS] criterion 1: gradient suite, 9 ops x {n_fixtures} fixtures, "
          f"rel err < {tol} ({tol_e2e} end-to-end), {elapsed:.1f}s < 60s")


# ---- criterion 2: sampling oracle ------------------------------------------------


def test_criterion_2_sampling_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        c = int(rng.integers(1, 3))
        h, w = (int(v) for v in rng.integers(1, 13, size=2))
        f = rng.standard_normal((c, h, w))
        hs, ws = (int(v) for v in rng.integers(1, 9, size=2))
        grid = SampleGrid(xs=rng.uniform(-2.0, w + 3.0, ws), ys=rng.uniform(-2.0, h + 3.0, hs))
        np.testing.assert_allclose(sbr_sample(f, grid), literal_sbr(f, grid), atol=1e-12, rtol=0)
    print("\n[PASS] criterion 2: optimized sampler equals the literal double-sum "
          "on 1000 random cases to 1e-12")


# ---- criterion 3: block partition ---------------------------------------------------


def test_criterion_3_block_partition():
    for extent_s in range(1, 33):
        for extent_m in range(1, extent_s + 1):
            ranges = [block_range(i, extent_s, extent_m) for i in range(1, extent_m + 1)]
            assert ranges[0][0] == 1
            assert ranges[-1][1] == extent_s
            assert all(lo <= hi for lo, hi in ranges)
            for (_, hi), (lo2, _) in zip(ranges, ranges[1:]):
                assert lo2 == hi + 1
    assert [block_range(i, 6, 3) for i in (1, 2, 3)] == [(1, 2), (3, 4), (5, 6)]
    assert [block_range(i, 8, 3) for i in (1, 2, 3)] == [(1, 3), (4, 5), (6, 8)]
    print("\n[PASS] criterion 3: block partition exhaustive for extents <= 32; "
          "6/3 -> {1-2},{3-4},{5-6} and 8/3 -> {1-3},{4-5},{6-8}")


# ---- criterion 4: mask machinery -----------------------------------------------------


def test_criterion_4_mask_machinery():
    grids = enumerate_single_zero_masks(3, 3)
    assert len(grids) == 9
    cover = sum((g == 0).astype(int) for g in grids)
    np.testing.assert_array_equal(cover, np.ones((3, 3), dtype=int))

    rng = np.random.default_rng(4)
    for _ in range(200):
        h_m, w_m = (int(v) for v in rng.integers(1, 5, size=2))
        h_s = int(rng.integers(h_m, 13))
        w_s = int(rng.integers(w_m, 13))
        m2 = f2_generate(rng.random((h_m, w_m)), h_s, w_s, int(rng.integers(1, h_m * w_m + 1)))
        grid = (rng.random((h_m, w_m)) > 0.5).astype(float)
        m1 = f1_expand(grid, h_s, w_s)
        zeros1 = [(r + 1, c + 1) for r, c in zip(*np.nonzero(grid == 0))]
        for mask, cells in ((m2, m2.zero_cells), (m1, zeros1)):
            assert set(np.unique(mask.values)) <= {0.0, 1.0}
            for r in range(1, h_s + 1):
                for c in range(1, w_s + 1):
                    member = brute_force_member(r, c, cells, h_s, w_s, h_m, w_m)
                    assert (mask.values[r - 1, c - 1] == 0.0) == member
    print("\n[PASS] criterion 4: 9 single-zero masks enumerated; f1/f2 zero sets match "
          "brute-force membership on 200 random cases")


# ---- criterion 5: adversarial loop sanity ----------------------------------------------


def test_criterion_5_adversarial_loop():
    seq = generate_synthetic_sequence(77, 1)
    cfg = harness_config(seed=77, dtype="float64")
    tracker = Tracker(cfg).init(seq.frames[0], seq.gt[0])

    losses = tracker.init_losses
    assert len(losses) == 60
    assert losses[-1] <= 0.5 * losses[0], f"{losses[0]:.4f} -> {losses[-1]:.4f}"

    # held-out accuracy on freshly drawn labeled samples
    _, h, w = seq.frames[0].shape
    spec = crop_and_resize_spec(seq.gt[0], w, h, cfg.r_c, cfg.L)
    gt_patch = map_box_to_patch(seq.gt[0], spec)
    feats = tracker.backbone.forward(extract_patch(seq.frames[0], spec).astype(tracker.dtype))
    rng = np.random.default_rng(987654)
    pos_boxes, neg_boxes = [], []
    while len(pos_boxes) < 100 or len(neg_boxes) < 100:
        cands = sample_candidates(gt_patch, 400, 0.1, 0.25, rng, (spec.out_w, spec.out_h))
        cands += sample_candidates(gt_patch, 400, 1.0, 1.0, rng, (spec.out_w, spec.out_h))
        for s in label_samples(cands, gt_patch, cfg.pos_iou, cfg.neg_iou):
            if s.label == POSITIVE and len(pos_boxes) < 100:
                pos_boxes.append(s.box)
            elif s.label != POSITIVE and len(neg_boxes) < 100:
                neg_boxes.append(s.box)
    f1p, f2p = sample_two_level_batch(feats, pos_boxes)
    f1n, f2n = sample_two_level_batch(feats, neg_boxes)
    sp = tracker.classifier.scores(f1p, f2p)
    sn = tracker.classifier.scores(f1n, f2n)
    accuracy = ((sp > 0.5).sum() + (sn <= 0.5).sum()) / 200.0
    assert accuracy >= 0.9, f"held-out accuracy {accuracy:.3f}"

    # fixed positive + fixed D: regression loss monotone, argmin reaches the target cell
    pos1 = tracker.reservoir[0].pos_f1[:1]
    pos2 = tracker.reservoir[0].pos_f2[:1]
    ref = select_reference_mask(SampledFeatures(pos1[0], pos2[0]), tracker.classifier, 3, 3)
    g_losses = []
    matched = None
    for _ in range(24):
        for _ in range(500):
            g_losses.append(
                train_g_step(tracker.generator, tracker.classifier, pos1, pos2,
                             cfg.g_opt, cfg.lambda_, cfg.base_mask_dims)
            )
        out = tracker.generator.forward(pos1[0])
        am = np.unravel_index(int(np.argmin(out)), out.shape)
        if (am[0] + 1, am[1] + 1) == ref.cell:
            matched = len(g_losses)
            break
    violations = sum(1 for a, b in zip(g_losses, g_losses[1:]) if b > a + 1e-8)
    assert violations == 0, f"{violations} non-monotone steps"
    assert matched is not None, f"argmin never reached reference cell {ref.cell}"
    print(f"\n[PASS] criterion 5: init loss {losses[0]:.4f} -> {losses[-1]:.4f} "
          f"(>=50% drop), held-out accuracy {accuracy:.3f} >= 0.9; generator loss "
          f"monotone over {len(g_losses)} steps, argmin matched cell {ref.cell} "
          f"after {matched} steps")


# ---- criterion 6: tracking property suite ------------------------------------------------


def test_criterion_6_tracking_suite(easy_suite):
    per_seq, elapsed = easy_suite
    p20 = float(np.mean([e.precision_at_20 for e in per_seq.values()]))
    auc = float(np.mean([e.auc for e in per_seq.values()]))
    detail = ", ".join(
        f"seed {s}: p20={e.precision_at_20:.3f} auc={e.auc:.3f}" for s, e in per_seq.items()
    )
    assert p20 >= 0.9, detail
    assert auc >= 0.5, detail
    assert elapsed < 600.0, f"suite took {elapsed:.0f}s"
    print(f"\n[PASS] criterion 6: easy suite precision@20 {p20:.3f} >= 0.9, "
          f"AUC {auc:.3f} >= 0.5, runtime {elapsed:.0f}s < 600s ({detail})")


# ---- criterion 7: efficiency claim ----------------------------------------------------------


def test_criterion_7_efficiency_claim():
    seq = generate_synthetic_sequence(55, 12, dims=(160, 120), target_size=36)
    cfg = harness_config(seed=55)
    rep = speed_benchmark(seq, cfg, 256)
    assert rep.sampling_detect_forwards == 1
    assert rep.baseline_detect_forwards == 256
    ns = sorted(rep.flop_ratio_by_n)
    assert ns == [1, 16, 64, 256]
    ratios = [rep.flop_ratio_by_n[n] for n in ns]
    assert all(b > a for a, b in zip(ratios, ratios[1:])), ratios
    assert rep.analytic_flop_ratio >= 10.0, rep.analytic_flop_ratio
    assert rep.speedup >= 3.0, rep.speedup
    rep1 = speed_benchmark(seq, cfg, 1)
    assert 0.5 <= rep1.speedup <= 2.0, rep1.speedup
    print(f"\n[PASS] criterion 7: backbone forwards per detect 1 vs 256 (exact); "
          f"flop ratio {rep.analytic_flop_ratio:.1f} >= 10, strictly increasing over "
          f"{ns} ({[round(r, 2) for r in ratios]}); measured speedup "
          f"{rep.speedup:.1f}x >= 3; n=1 ratio {rep1.speedup:.2f} in [0.5, 2]")


# ---- criterion 8: determinism -----------------------------------------------------------------


def test_criterion_8_track_determinism(tmp_path):
    seq_dir = tmp_path / "seq"
    save_sequence(generate_synthetic_sequence(88, 20), seq_dir)
    outs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        rc = cli_main(["track", "--seq", str(seq_dir), "--seed", "88", "--out", str(out)])
        assert rc == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    print("\n[PASS] criterion 8: `track --seed 88` twice -> byte-identical results.csv "
          f"({len(outs[0])} bytes)")


# ---- criterion 9: challenge robustness report (non-gating challenge numbers) -------------------


def test_criterion_9_challenge_report(easy_suite, easy_suite_masks_disabled, tmp_path):
    per_seq_on, _ = easy_suite
    per_seq_off = easy_suite_masks_disabled
    easy_on = float(np.mean([e.auc for e in per_seq_on.values()]))
    easy_off = float(np.mean([e.auc for e in per_seq_off.values()]))

    lines = ["challenge robustness report (AUC, adversarial masks on vs off)", ""]
    lines.append(f"easy      on={easy_on:.3f} off={easy_off:.3f}")
    for challenge in ("occlusion", "illumination"):
        on = _suite_eval(CHALLENGE_SEEDS, 60, (challenge,), adversarial=True)
        off = _suite_eval(CHALLENGE_SEEDS, 60, (challenge,), adversarial=False)
        on_auc = float(np.mean([e.auc for e in on.values()]))
        off_auc = float(np.mean([e.auc for e in off.values()]))
        lines.append(f"{challenge:12s} on={on_auc:.3f} off={off_auc:.3f}")
    report = "\n".join(lines) + "\n"
    out = tmp_path / "challenge_report.txt"
    out.write_text(report)

    # regression guard: enabling the mask generator must not hurt the easy suite
    assert easy_on >= easy_off - 0.05, f"easy AUC on={easy_on:.3f} off={easy_off:.3f}"
    print("\n[PASS] criterion 9: report produced; easy-suite AUC with masks "
          f"{easy_on:.3f} vs without {easy_off:.3f} (guard: drop <= 0.05)\n" + report)
