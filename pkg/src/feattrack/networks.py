"""The three networks of the tracker plus their training steps.

Backbone: five conv groups with pooling placed so that tap A has stride 8
and tap B stride 16 relative to the input patch. Desk-scale defaults use
width 32; width 512 reproduces the full-size geometry. Tap outputs feed the
candidate feature sampler.

ClassifierD: two parallel 256-wide FC layers over the flattened sampled
feature pair, concatenated into a 512-wide FC, then a two-class output.

GeneratorG: 2x2/2 max pool over sbrf1, a 1x1 conv to a hidden width, and a
1x1 conv to a single channel with sigmoid: the base weight mask (3x3 for a
6x6 sbrf1).

Also here: the per-step D and G updates, the raw-image baseline scoring
path used by the speed benchmark, analytic FLOP counters, and the binary
checkpoint format.
"""

from __future__ import annotations

import struct
from typing import Iterable

import numpy as np

from . import masks
from .geometry import BBox, PatchSpec, POSITIVE, NEGATIVE, clamp_box, extract_patch
from .sampler import FeaturePair, SampledFeatures, sample_two_level
from .tensor import (
    LayerParams,
    OptimizerSpec,
    Tensor,
    conv2d,
    conv2d_backward,
    cross_entropy_loss,
    fully_connected,
    fully_connected_backward,
    maxpool2d,
    maxpool2d_backward,
    relu,
    relu_backward,
    sgd_step,
    softmax_positive,
)

CHECKPOINT_MAGIC = b"AFSL"
CHECKPOINT_VERSION = 1


def he_conv(rng: np.random.Generator, out_c: int, in_c: int, k: int, dtype=np.float32, std=None) -> LayerParams:
    s = std if std is not None else np.sqrt(2.0 / (in_c * k * k))
    w = (rng.standard_normal((out_c, in_c, k, k)) * s).astype(dtype)
    return LayerParams(weights=w, biases=np.zeros(out_c, dtype=dtype))


def he_fc(rng: np.random.Generator, out_d: int, in_d: int, dtype=np.float32, std=None) -> LayerParams:
    s = std if std is not None else np.sqrt(2.0 / in_d)
    w = (rng.standard_normal((out_d, in_d)) * s).astype(dtype)
    return LayerParams(weights=w, biases=np.zeros(out_d, dtype=dtype))


def _conv_flops(cin: int, cout: int, k: int, ho: int, wo: int) -> int:
    return (2 * cin * k * k + 1) * cout * ho * wo


def _fc_flops(din: int, dout: int) -> int:
    return (2 * din + 1) * dout


class Backbone:
    """Five conv groups; pooling after groups 1-3 and 4 fixes the tap strides 8/16.

    forward() counts invocations (the efficiency claim is about this count).
    Groups 1-3 are permanently frozen; the whole backbone is frozen online
    via freeze_all(). Gradients are supported for the g4/g5 tail only.
    """

    GROUPS = 5

    def __init__(self, rng: np.random.Generator, in_channels: int = 3, width: int = 32, dtype=np.float32):
        self.in_channels = in_channels
        self.width = width
        self.dtype = dtype
        chans = [in_channels] + [width] * self.GROUPS
        self.groups = [he_conv(rng, chans[i + 1], chans[i], 3, dtype) for i in range(self.GROUPS)]
        for g in self.groups[:3]:
            g.frozen = True
        self.forward_count = 0

    def freeze_all(self) -> None:
        for g in self.groups:
            g.frozen = True

    @staticmethod
    def pad_to_16(h: int, w: int) -> tuple[int, int]:
        return ((h + 15) // 16) * 16, ((w + 15) // 16) * 16

    def forward(self, patch: Tensor, record: bool = False) -> FeaturePair:
        """One patch (C, H, W) -> feature taps at strides 8 and 16.

        Patches smaller than 16 px are rejected; other sizes are zero-padded
        up to the next multiple of 16.
        """
        if patch.ndim != 3:
            raise ValueError(f"expected a (C, H, W) patch, got {patch.shape}")
        c, h, w = patch.shape
        if c != self.in_channels:
            raise ValueError(f"patch has {c} channels, backbone expects {self.in_channels}")
        if h < 16 or w < 16:
            raise ValueError(f"patch {h}x{w} is under the 16 px minimum")
        self.forward_count += 1
        hp, wp = self.pad_to_16(h, w)
        x = patch[None].astype(self.dtype, copy=False)
        if (hp, wp) != (h, w):
            x = np.pad(x, ((0, 0), (0, 0), (0, hp - h), (0, wp - w)))
        cache = {"taps": []} if record else None
        for i, g in enumerate(self.groups):
            z = conv2d(x, g, stride=1, padding=1)
            a = relu(z)
            if record and i >= 3:
                cache[f"x{i}"] = x
                cache[f"z{i}"] = z
            if i == 3:
                tap_a = a[0]
            if i in (0, 1, 2, 3):
                a, idx = maxpool2d(a)
                if record and i == 3:
                    cache["pool4_idx"] = idx
                    cache["pool4_in_shape"] = (1, self.width) + tuple(z.shape[2:])
            x = a
        tap_b = x[0]
        if record:
            self._cache = cache
        return FeaturePair(level1=tap_a, level2=tap_b, strides=(8, 16))

    def backward_tail(self, d_tap_a: Tensor, d_tap_b: Tensor) -> dict:
        """Gradients for g4/g5 from upstream tap gradients (needs record=True forward)."""
        cache = self._cache
        dz4 = relu_backward(cache["z4"], d_tap_b[None])
        dx4, dw5, db5 = conv2d_backward(cache["x4"], self.groups[4], dz4, stride=1, padding=1)
        da3 = maxpool2d_backward(cache["pool4_in_shape"], cache["pool4_idx"], dx4)
        da3 = da3 + d_tap_a[None]
        dz3 = relu_backward(cache["z3"], da3)
        _, dw4, db4 = conv2d_backward(cache["x3"], self.groups[3], dz3, stride=1, padding=1)
        return {"g4": (dw4, db4), "g5": (dw5, db5)}

    def flops(self, h: int, w: int) -> int:
        """Analytic FLOPs of one forward on an h x w patch (after pad-up)."""
        hp, wp = self.pad_to_16(h, w)
        total = 0
        cin = self.in_channels
        for i in range(self.GROUPS):
            total += _conv_flops(cin, self.width, 3, hp, wp)
            total += self.width * hp * wp  # relu
            if i in (0, 1, 2, 3):
                total += 3 * self.width * (hp // 2) * (wp // 2)  # pool comparisons
                hp, wp = hp // 2, wp // 2
            cin = self.width
        return total

    def named_params(self) -> list[tuple[str, LayerParams]]:
        return [(f"backbone.g{i + 1}", g) for i, g in enumerate(self.groups)]


class ClassifierD:
    """Two-class head over the flattened sampled feature pair."""

    def __init__(
        self,
        rng: np.random.Generator,
        af1_dim: int,
        af2_dim: int,
        fc1_width: int = 256,
        fc2_width: int = 512,
        dtype=np.float32,
    ):
        self.af1_dim = af1_dim
        self.af2_dim = af2_dim
        self.fc1_1 = he_fc(rng, fc1_width, af1_dim, dtype)
        self.fc1_2 = he_fc(rng, fc1_width, af2_dim, dtype)
        self.fc2 = he_fc(rng, fc2_width, 2 * fc1_width, dtype)
        self.out = he_fc(rng, 2, fc2_width, dtype, std=0.01)

    @staticmethod
    def _flat(a: Tensor, dim: int) -> Tensor:
        """(N, ...) or a single flat vector -> (N, dim)."""
        a = np.asarray(a)
        if a.ndim == 1:
            a = a[None]
        a = a.reshape(a.shape[0], -1)
        if a.shape[1] != dim:
            raise ValueError(f"feature length {a.shape} does not match head input extent {dim}")
        return a

    def forward(self, af1: Tensor, af2: Tensor, cache: dict | None = None) -> Tensor:
        """Batched logits (N, 2). Row i depends only on sample i."""
        x1 = self._flat(af1, self.af1_dim)
        x2 = self._flat(af2, self.af2_dim)
        if x1.shape[0] != x2.shape[0]:
            raise ValueError(f"feature batches disagree: {x1.shape} vs {x2.shape}")
        z1 = fully_connected(x1, self.fc1_1)
        z2 = fully_connected(x2, self.fc1_2)
        a1, a2 = relu(z1), relu(z2)
        cat = np.concatenate([a1, a2], axis=1)
        z3 = fully_connected(cat, self.fc2)
        a3 = relu(z3)
        logits = fully_connected(a3, self.out)
        if cache is not None:
            cache.update(x1=x1, x2=x2, z1=z1, z2=z2, cat=cat, z3=z3, a3=a3)
        return logits

    def backward(self, cache: dict, dlogits: Tensor) -> dict:
        """Parameter gradients for the cached forward."""
        da3, dw_out, db_out = fully_connected_backward(cache["a3"], self.out, dlogits)
        dz3 = relu_backward(cache["z3"], da3)
        dcat, dw_fc2, db_fc2 = fully_connected_backward(cache["cat"], self.fc2, dz3)
        half = self.fc1_1.weights.shape[0]
        dz1 = relu_backward(cache["z1"], dcat[:, :half])
        dz2 = relu_backward(cache["z2"], dcat[:, half:])
        _, dw11, db11 = fully_connected_backward(cache["x1"], self.fc1_1, dz1)
        _, dw12, db12 = fully_connected_backward(cache["x2"], self.fc1_2, dz2)
        return {
            "fc1_1": (dw11, db11),
            "fc1_2": (dw12, db12),
            "fc2": (dw_fc2, db_fc2),
            "out": (dw_out, db_out),
        }

    def apply_sgd(self, grads: dict, opt: OptimizerSpec) -> None:
        for name, layer in self.named_layers():
            dw, db = grads[name]
            sgd_step(layer, dw, db, opt)

    def positive_loss(self, af1: Tensor, af2: Tensor) -> float:
        """Cross-entropy of one sample under the positive label."""
        logits = self.forward(af1.reshape(1, -1), af2.reshape(1, -1))
        loss, _ = cross_entropy_loss(logits, [POSITIVE])
        return loss

    def positive_losses(self, f1: Tensor, f2: Tensor) -> Tensor:
        """Per-row cross-entropy under the positive label for a stacked batch."""
        n = f1.shape[0]
        logits = self.forward(f1.reshape(n, -1), f2.reshape(n, -1))
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return -logp[:, POSITIVE - 1]

    def scores(self, f1: Tensor, f2: Tensor) -> Tensor:
        """Positive-class probability per row of a stacked feature batch."""
        n = f1.shape[0]
        logits = self.forward(f1.reshape(n, -1), f2.reshape(n, -1))
        return softmax_positive(logits)

    def named_layers(self) -> list[tuple[str, LayerParams]]:
        return [("fc1_1", self.fc1_1), ("fc1_2", self.fc1_2), ("fc2", self.fc2), ("out", self.out)]

    def named_params(self) -> list[tuple[str, LayerParams]]:
        return [(f"classifier.{n}", p) for n, p in self.named_layers()]

    def flops_per_sample(self) -> int:
        total = _fc_flops(self.af1_dim, self.fc1_1.weights.shape[0])
        total += _fc_flops(self.af2_dim, self.fc1_2.weights.shape[0])
        total += _fc_flops(self.fc2.weights.shape[1], self.fc2.weights.shape[0])
        total += _fc_flops(self.out.weights.shape[1], 2)
        total += self.fc1_1.weights.shape[0] * 2 + self.fc2.weights.shape[0]  # relus
        return total


def _sigmoid(z: Tensor) -> Tensor:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class GeneratorG:
    """Base-weight-mask generator over sbrf1: pool, 1x1 conv, 1x1 conv, sigmoid."""

    def __init__(self, rng: np.random.Generator, in_channels: int, hidden: int = 256, dtype=np.float32):
        self.in_channels = in_channels
        self.c6 = he_conv(rng, hidden, in_channels, 1, dtype)
        self.out = he_conv(rng, 1, hidden, 1, dtype, std=0.01)

    def forward(self, sbrf1: Tensor, cache: dict | None = None) -> Tensor:
        """(C, H, W) with even spatial dims -> (H/2, W/2) mask with values in (0, 1)."""
        if sbrf1.ndim != 3:
            raise ValueError(f"expected (C, H, W), got {sbrf1.shape}")
        return self.forward_batch(sbrf1[None], cache)[0]

    def forward_batch(self, sbrf1: Tensor, cache: dict | None = None) -> Tensor:
        """(N, C, H, W) -> (N, H/2, W/2); rows are independent."""
        _, _, h, w = sbrf1.shape
        if h % 2 or w % 2:
            raise ValueError(f"spatial dims must be even for the 2x2 pool, got {h}x{w}")
        pooled, idx = maxpool2d(sbrf1)
        z1 = conv2d(pooled, self.c6)
        a1 = relu(z1)
        z2 = conv2d(a1, self.out)
        m = _sigmoid(z2)
        if cache is not None:
            cache.update(pooled=pooled, z1=z1, a1=a1, m=m)
        return m[:, 0]

    def backward(self, cache: dict, dmask: Tensor) -> dict:
        """Parameter gradients from upstream d(mask), (N, H/2, W/2) or (H/2, W/2)."""
        if dmask.ndim == 2:
            dmask = dmask[None]
        dz2 = dmask[:, None] * cache["m"] * (1.0 - cache["m"])
        da1, dw_out, db_out = conv2d_backward(cache["a1"], self.out, dz2)
        dz1 = relu_backward(cache["z1"], da1)
        _, dw_c6, db_c6 = conv2d_backward(cache["pooled"], self.c6, dz1)
        return {"c6": (dw_c6, db_c6), "out": (dw_out, db_out)}

    def apply_sgd(self, grads: dict, opt: OptimizerSpec) -> None:
        for name, layer in self.named_layers():
            dw, db = grads[name]
            sgd_step(layer, dw, db, opt)

    def named_layers(self) -> list[tuple[str, LayerParams]]:
        return [("c6", self.c6), ("out", self.out)]

    def named_params(self) -> list[tuple[str, LayerParams]]:
        return [(f"generator.{n}", p) for n, p in self.named_layers()]

    def flops_per_sample(self, h: int = 6, w: int = 6) -> int:
        hidden = self.c6.weights.shape[0]
        total = 3 * self.in_channels * (h // 2) * (w // 2)
        total += _conv_flops(self.in_channels, hidden, 1, h // 2, w // 2) + hidden * (h // 2) * (w // 2)
        total += _conv_flops(hidden, 1, 1, h // 2, w // 2) + 4 * (h // 2) * (w // 2)
        return total


def masked_positive_features(
    generator: GeneratorG, pos_f1: Tensor, pos_f2: Tensor, k_drop: int
) -> tuple[Tensor, Tensor]:
    """Per-positive adversarial dropout: G's base mask, expanded by f2 to both sizes."""
    af1 = np.empty_like(pos_f1)
    af2 = np.empty_like(pos_f2)
    h1, w1 = pos_f1.shape[-2:]
    h2, w2 = pos_f2.shape[-2:]
    bases = generator.forward_batch(pos_f1)
    for i in range(pos_f1.shape[0]):
        m1 = masks.f2_generate(bases[i], h1, w1, k_drop)
        m2 = masks.f2_generate(bases[i], h2, w2, k_drop)
        af1[i] = masks.apply_mask(pos_f1[i], m1)
        af2[i] = masks.apply_mask(pos_f2[i], m2)
    return af1, af2


def train_d_step(
    classifier: ClassifierD,
    generator: GeneratorG | None,
    pos_f1: Tensor,
    pos_f2: Tensor,
    neg_f1: Tensor,
    neg_f2: Tensor,
    opt: OptimizerSpec,
    k_drop: int = 1,
    adversarial: bool = True,
) -> float:
    """One supervised step of D on a positives+negatives batch.

    Positives pass through G's f2 dropout (unless adversarial is off, which
    reduces to a plain supervised step); negatives pass unmasked; labels are
    never altered. Returns the batch loss before the update.
    """
    if pos_f1.shape[0] == 0 and neg_f1.shape[0] == 0:
        raise ValueError("empty batch")
    if adversarial and generator is not None and pos_f1.shape[0] > 0:
        af1, af2 = masked_positive_features(generator, pos_f1, pos_f2, k_drop)
    else:
        af1, af2 = pos_f1, pos_f2
    p, n = pos_f1.shape[0], neg_f1.shape[0]
    x1 = np.concatenate([af1.reshape(p, -1), neg_f1.reshape(n, -1)], axis=0)
    x2 = np.concatenate([af2.reshape(p, -1), neg_f2.reshape(n, -1)], axis=0)
    labels = [POSITIVE] * p + [NEGATIVE] * n
    cache: dict = {}
    logits = classifier.forward(x1, x2, cache)
    loss, dlogits = cross_entropy_loss(logits, labels)
    grads = classifier.backward(cache, dlogits)
    classifier.apply_sgd(grads, opt)
    return loss


def train_g_step(
    generator: GeneratorG,
    classifier: ClassifierD,
    pos_f1: Tensor,
    pos_f2: Tensor,
    opt: OptimizerSpec,
    lam: float = 1.0,
    mask_dims: tuple[int, int] = (3, 3),
) -> float:
    """One regression step of G toward the per-positive reference masks.

    Loss = lam * mean over positives of ||G(sbrf1) - M||^2 where M is the
    highest-loss single-zero mask under the current classifier. lam = 0 is
    an exact no-op. Classifier parameters are untouched.
    """
    if pos_f1.shape[0] == 0:
        raise ValueError("need at least one positive")
    if lam == 0.0:
        return 0.0
    p = pos_f1.shape[0]
    targets = np.stack(
        [
            masks.select_reference_mask(
                SampledFeatures(sbrf1=pos_f1[i], sbrf2=pos_f2[i]),
                classifier,
                mask_dims[0],
                mask_dims[1],
            ).base_grid
            for i in range(p)
        ]
    )
    cache: dict = {}
    out = generator.forward_batch(pos_f1, cache)
    diff = out - targets.astype(out.dtype)
    total = float((diff**2).sum())
    grads = generator.backward(cache, (2.0 * lam / p) * diff)
    generator.apply_sgd(grads, opt)
    return lam * total / p


def raw_baseline_forward(
    candidates: list[BBox],
    frame: Tensor,
    backbone: Backbone,
    classifier: ClassifierD,
    L: int = 112,
    sbrf1_dims: tuple[int, int] = (6, 6),
    sbrf2_dims: tuple[int, int] = (8, 8),
    grid_mode: str = "center",
    swap_levels: bool = False,
) -> Tensor:
    """Per-candidate raw-image scoring: crop each box to L x L and run the
    full backbone per candidate, then the same head over whole-crop features.

    This is the timing/FLOP comparison target; backbone invocations equal
    the candidate count by construction. Returns positive-class
    probabilities per candidate.
    """
    _, h, w = frame.shape
    feats1, feats2 = [], []
    full = BBox(0.0, 0.0, float(L), float(L))
    for box in candidates:
        b = clamp_box(box, w, h)
        spec = PatchSpec(
            crop_rect=b, out_w=L, out_h=L, scale_x=L / b.w, scale_y=L / b.h, image_w=w, image_h=h
        )
        crop = extract_patch(frame, spec)
        fp = backbone.forward(crop)
        sf = sample_two_level(fp, full, sbrf1_dims, sbrf2_dims, grid_mode, swap_levels)
        feats1.append(sf.sbrf1.reshape(-1))
        feats2.append(sf.sbrf2.reshape(-1))
    return classifier.scores(np.stack(feats1), np.stack(feats2))


def sbr_flops(channels: int, sbrf1_dims: tuple[int, int], sbrf2_dims: tuple[int, int]) -> int:
    """Analytic cost of sampling one candidate on both levels."""
    total = 0
    for h, w in (sbrf1_dims, sbrf2_dims):
        total += 7 * channels * h * w + 10 * h * w
    return total


def save_checkpoint(path, named: Iterable[tuple[str, LayerParams]]) -> None:
    """Versioned binary checkpoint.

    Layout (little-endian): magic "AFSL", u32 version, u32 group count, then
    per parameter group: u32 name length, UTF-8 name, u32 dim count, u32
    dims, raw float32 scalars in row-major order. Weights and biases of a
    layer are stored as separate groups named <layer>.weight / <layer>.bias.
    """
    items: list[tuple[str, np.ndarray]] = []
    for name, lp in named:
        items.append((f"{name}.weight", lp.weights))
        items.append((f"{name}.bias", lp.biases))
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(items)))
        for name, arr in items:
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Reads a checkpoint back into {group name: float32 array}."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        version, count = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            dims = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            n = int(np.prod(dims)) if ndim else 1
            data = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(dims)
            out[name] = data.copy()
    return out
