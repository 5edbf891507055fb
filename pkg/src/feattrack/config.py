"""Tracker configuration and its line-based `key = value` file format.

The dataclass defaults are the published hyperparameters (r_c 1.2, L 112,
6x6/8x8 sampled dims, 3x3 base mask, 60 init iterations, updates every 10
frames for 10 iterations, D lr 0.01 / G lr 0.00005 with momentum 0.9 and
weight decay 0.0005, 32 positives + 96 hard negatives out of 1024). The
harness default (harness_config) widens the search window to r_c 2.0; pass
--paper-config on the CLI to run the published values unchanged.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .tensor import OptimizerSpec

# file keys that differ from field names (lambda is a python keyword)
_KEY_TO_FIELD = {"lambda": "lambda_"}
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}


@dataclass
class TrackerConfig:
    # search-window geometry
    r_c: float = 1.2
    L: int = 112
    # sampled feature rasters and base mask
    sbrf1_dims: tuple[int, int] = (6, 6)
    sbrf2_dims: tuple[int, int] = (8, 8)
    base_mask_dims: tuple[int, int] = (3, 3)
    grid_mode: str = "center"
    swap_levels: bool = False
    # training schedule
    init_iters: int = 60
    update_period: int = 10
    update_iters: int = 10
    # optimizers
    d_lr: float = 0.01
    d_momentum: float = 0.9
    d_weight_decay: float = 0.0005
    g_lr: float = 0.00005
    g_momentum: float = 0.9
    g_weight_decay: float = 0.0005
    # minibatch composition
    batch_pos: int = 32
    batch_neg: int = 96
    neg_pool: int = 1024
    # adversarial dropout
    lambda_: float = 1.0
    k_drop: int = 1
    adversarial: bool = True
    # detection
    n_candidates: int = 256
    trans_sigma: float = 0.1
    scale_sigma: float = 0.5
    top_k: int = 5
    # sample labeling and collection
    pos_iou: float = 0.7
    neg_iou: float = 0.3
    init_pos: int = 500
    init_neg: int = 5000
    frame_pos: int = 50
    frame_neg: int = 200
    train_pos_trans_sigma: float = 0.1
    train_pos_scale_sigma: float = 0.25
    train_neg_trans_sigma: float = 1.0
    train_neg_scale_sigma: float = 1.0
    reservoir_horizon: int = 100
    # networks
    backbone_width: int = 32
    fc1_width: int = 256
    fc2_width: int = 512
    g_hidden: int = 256
    dtype: str = "float32"
    seed: int = 0

    @property
    def d_opt(self) -> OptimizerSpec:
        return OptimizerSpec(self.d_lr, self.d_momentum, self.d_weight_decay)

    @property
    def g_opt(self) -> OptimizerSpec:
        return OptimizerSpec(self.g_lr, self.g_momentum, self.g_weight_decay)


def paper_config(**overrides) -> TrackerConfig:
    """Published hyperparameters (the dataclass defaults)."""
    return TrackerConfig(**overrides)


def harness_config(**overrides) -> TrackerConfig:
    """Default harness setup: r_c widened to 2.0 so the window covers real motion."""
    overrides.setdefault("r_c", 2.0)
    return TrackerConfig(**overrides)


def _parse_value(field: dataclasses.Field, raw: str):
    raw = raw.strip()
    t = field.type
    if t in ("float", float):
        return float(raw)
    if t in ("int", int):
        return int(raw)
    if t in ("bool", bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean from {raw!r}")
    if t in ("str", str):
        return raw
    if "tuple" in str(t):
        parts = [p for p in raw.replace("x", ",").split(",") if p.strip()]
        if len(parts) != 2:
            raise ValueError(f"expected two comma-separated ints, got {raw!r}")
        return (int(parts[0]), int(parts[1]))
    raise ValueError(f"unsupported config field type {t!r}")


def parse_config(text: str, base: TrackerConfig | None = None) -> TrackerConfig:
    """Applies `key = value` lines over a base config.

    Blank lines and `#` comments are skipped; an unknown key is rejected by
    name.
    """
    cfg = dataclasses.replace(base) if base is not None else harness_config()
    fields = {f.name: f for f in dataclasses.fields(TrackerConfig)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected `key = value`, got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        fname = _KEY_TO_FIELD.get(key, key)
        if fname not in fields:
            raise ValueError(f"unknown config key {key!r} (line {lineno})")
        try:
            setattr(cfg, fname, _parse_value(fields[fname], raw))
        except ValueError as e:
            raise ValueError(f"line {lineno}: bad value for {key!r}: {e}") from e
    return cfg


def load_config(path, base: TrackerConfig | None = None) -> TrackerConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read(), base)


def dump_config(cfg: TrackerConfig) -> str:
    """Every field as a `key = value` line (round-trips through parse_config)."""
    lines = []
    for f in dataclasses.fields(TrackerConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = f"{v[0]},{v[1]}"
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{_FIELD_TO_KEY.get(f.name, f.name)} = {v}")
    return "\n".join(lines) + "\n"


def save_config(cfg: TrackerConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_config(cfg))
