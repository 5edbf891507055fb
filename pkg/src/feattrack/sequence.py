"""Sequence container and on-disk sequence loading (OTB-style layout)."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import BBox
from .tensor import Tensor

_IMAGE_SUFFIXES = (".ppm", ".pgm")


@dataclass
class Sequence:
    frames: list[Tensor]
    gt: list[BBox]
    name: str = ""
    attributes: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if len(self.frames) != len(self.gt):
            raise ValueError(f"{len(self.frames)} frames vs {len(self.gt)} ground-truth boxes")


def _image_files(directory: Path) -> list[Path]:
    img_dir = directory / "img" if (directory / "img").is_dir() else directory
    return sorted(p for p in img_dir.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)


def _gt_file(directory: Path) -> Path:
    for name in ("groundtruth_rect.txt", "groundtruth.txt"):
        p = directory / name
        if p.is_file():
            return p
    txts = sorted(directory.glob("*.txt"))
    if len(txts) == 1:
        return txts[0]
    raise FileNotFoundError(f"no ground-truth text file found in {directory}")


def parse_groundtruth(text: str) -> list[BBox]:
    """One `x,y,w,h` line per frame; commas and/or whitespace separate fields."""
    boxes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = [p for p in re.split(r"[,\s]+", line.strip()) if p]
        if len(parts) != 4:
            raise ValueError(f"ground-truth line {lineno}: expected 4 fields, got {line!r}")
        try:
            x, y, w, h = (float(p) for p in parts)
        except ValueError as e:
            raise ValueError(f"ground-truth line {lineno}: {e}") from e
        boxes.append(BBox(x, y, w, h))
    return boxes


def load_groundtruth(directory) -> tuple[list[BBox], int]:
    """Ground-truth boxes plus the frame-file count (frames stay on disk)."""
    directory = Path(directory)
    boxes = parse_groundtruth(_gt_file(directory).read_text(encoding="utf-8"))
    return boxes, len(_image_files(directory))


def load_otb_sequence(directory) -> Sequence:
    """Loads frames (lexicographic order) and the ground-truth file."""
    from .synth import read_image  # io lives with the generator

    directory = Path(directory)
    files = _image_files(directory)
    if not files:
        raise FileNotFoundError(f"no .ppm/.pgm frames found in {directory}")
    boxes = parse_groundtruth(_gt_file(directory).read_text(encoding="utf-8"))
    if len(files) != len(boxes):
        raise ValueError(
            f"{directory}: {len(files)} frames but {len(boxes)} ground-truth lines"
        )
    frames = [read_image(p) for p in files]
    return Sequence(frames=frames, gt=boxes, name=directory.name)
