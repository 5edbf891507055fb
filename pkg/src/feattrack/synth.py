"""Synthetic tracking sequences with exact ground truth, plus PPM/PGM io.

A textured target rectangle random-walks over a textured background;
challenge tags switch on per-frame perturbations (illumination gain ramp,
box blur, an occluder sweep, smooth scale drift, high-frequency clutter).
Frames are quantized to 8 bits at generation time so in-memory sequences
and saved/reloaded ones are bit-identical.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import BBox, PatchSpec, extract_patch
from .sequence import Sequence
from .tensor import Tensor

CHALLENGES = ("illumination", "blur", "occlusion", "scale", "clutter")


# ---- netpbm io ------------------------------------------------------------


def write_image_bytes(img: Tensor) -> bytes:
    """(C, H, W) floats in [0, 1] -> binary PPM (P6, 3 channels) or PGM (P5, 1)."""
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"expected (1|3, H, W) image, got {img.shape}")
    c, h, w = img.shape
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    magic = b"P6" if c == 3 else b"P5"
    header = magic + f"\n{w} {h}\n255\n".encode()
    return header + data.transpose(1, 2, 0).tobytes()


def read_image_bytes(data: bytes) -> Tensor:
    """Binary PPM/PGM -> (C, H, W) float32 in [0, 1]."""
    if data[:2] not in (b"P6", b"P5"):
        raise ValueError(f"unsupported image magic {data[:2]!r} (only binary PPM/PGM)")
    channels = 3 if data[:2] == b"P6" else 1
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"only 8-bit images supported, maxval={maxval}")
    raw = np.frombuffer(data, dtype=np.uint8, count=h * w * channels, offset=pos)
    img = raw.reshape(h, w, channels).transpose(2, 0, 1).astype(np.float32) / 255.0
    return img


def write_image(path, img: Tensor) -> None:
    Path(path).write_bytes(write_image_bytes(img))


def read_image(path) -> Tensor:
    return read_image_bytes(Path(path).read_bytes())


# ---- generation -----------------------------------------------------------


def _upsample_bilinear(small: Tensor, h: int, w: int) -> Tensor:
    _, sh, sw = small.shape
    spec = PatchSpec(BBox(0, 0, sw, sh), w, h, w / sw, h / sh, sw, sh)
    return extract_patch(small, spec)


def _upsample_nearest(tex: Tensor, h: int, w: int) -> Tensor:
    _, th, tw = tex.shape
    yi = np.minimum((np.arange(h) * th / h).astype(int), th - 1)
    xi = np.minimum((np.arange(w) * tw / w).astype(int), tw - 1)
    return tex[:, yi[:, None], xi[None, :]]


def _box_blur(img: Tensor) -> Tensor:
    p = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.zeros_like(img)
    for dy in range(3):
        for dx in range(3):
            out += p[:, dy : dy + img.shape[1], dx : dx + img.shape[2]]
    return out / 9.0


def _quantize(img: Tensor) -> Tensor:
    return (np.clip(np.rint(img * 255.0), 0, 255) / 255.0).astype(np.float32)


def generate_synthetic_sequence(
    seed: int,
    n_frames: int,
    challenges=(),
    dims: tuple[int, int] = (320, 240),
    target_size: int = 48,
    step: float = 2.0,
    name: str | None = None,
) -> Sequence:
    """Deterministic per seed; ground truth is recorded exactly.

    With the occlusion tag the occluder crosses the target center mid
    sequence, so at least one frame has >= 30% of the target covered.
    """
    if n_frames < 1:
        raise ValueError(f"need at least one frame, got {n_frames}")
    challenges = frozenset(challenges)
    unknown = challenges - set(CHALLENGES)
    if unknown:
        raise ValueError(f"unknown challenges {sorted(unknown)}; known: {list(CHALLENGES)}")
    w_img, h_img = dims
    ts = target_size
    rng = np.random.default_rng(seed)

    bg = _upsample_bilinear(rng.uniform(0.25, 0.75, (3, 6, 8)).astype(np.float32), h_img, w_img)
    if "clutter" in challenges:
        bg = np.clip(bg + rng.uniform(-0.25, 0.25, bg.shape).astype(np.float32), 0.0, 1.0)
    tex = np.repeat(np.repeat(rng.uniform(0.0, 1.0, (3, 6, 6)).astype(np.float32), 8, axis=1), 8, axis=2)
    tex = _upsample_nearest(tex, ts, ts)
    occ_color = rng.uniform(0.0, 1.0, (3, 1, 1)).astype(np.float32)

    margin = 4.0
    x = (w_img - ts) / 2.0
    y = (h_img - ts) / 2.0
    ang = rng.uniform(0.0, 2.0 * np.pi)
    vx, vy = step * np.cos(ang), step * np.sin(ang)

    frames: list[Tensor] = []
    gt: list[BBox] = []
    mid = n_frames // 2
    for t in range(n_frames):
        sc = 1.0 + 0.25 * np.sin(2.0 * np.pi * t / max(1, n_frames - 1)) if "scale" in challenges else 1.0
        tw = int(round(ts * sc))
        th = int(round(ts * sc))
        xi, yi = int(round(x)), int(round(y))
        xi = min(max(xi, int(margin)), w_img - tw - int(margin))
        yi = min(max(yi, int(margin)), h_img - th - int(margin))

        frame = bg.copy()
        frame[:, yi : yi + th, xi : xi + tw] = _upsample_nearest(tex, th, tw)
        if "occlusion" in challenges and abs(t - mid) <= 5:
            ow = oh = int(round(0.8 * tw))
            sweep = (t - (mid - 5)) / 10.0  # 0..1 over the window
            ocx = xi + tw / 2.0 + (sweep - 0.5) * 3.0 * tw
            ox = int(round(ocx - ow / 2.0))
            oy = int(round(yi + th / 2.0 - oh / 2.0))
            ox = min(max(ox, 0), w_img - ow)
            oy = min(max(oy, 0), h_img - oh)
            frame[:, oy : oy + oh, ox : ox + ow] = occ_color
        if "illumination" in challenges:
            gain = 0.55 + 0.9 * t / max(1, n_frames - 1)
            frame = frame * gain
        if "blur" in challenges:
            frame = _box_blur(frame)
        frames.append(_quantize(np.clip(frame, 0.0, 1.0)))
        gt.append(BBox(float(xi), float(yi), float(tw), float(th)))

        x += vx + rng.normal(0.0, 0.3)
        y += vy + rng.normal(0.0, 0.3)
        if x < margin or x > w_img - ts - margin:
            vx = -vx
            x = min(max(x, margin), w_img - ts - margin)
        if y < margin or y > h_img - ts - margin:
            vy = -vy
            y = min(max(y, margin), h_img - ts - margin)

    return Sequence(
        frames=frames,
        gt=gt,
        name=name or f"synth-{seed}",
        attributes=challenges,
    )


def save_sequence(seq: Sequence, out_dir) -> Path:
    """Frames as 0001.ppm... plus groundtruth_rect.txt (`x,y,w,h` per line)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames, start=1):
        write_image(out / f"{i:04d}.ppm", frame)
    with open(out / "groundtruth_rect.txt", "w", encoding="utf-8") as f:
        for b in seq.gt:
            f.write(f"{b.x:g},{b.y:g},{b.w:g},{b.h:g}\n")
    return out
