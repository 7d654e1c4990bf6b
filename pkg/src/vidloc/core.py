"""Shared geometry and configuration types.

All temporal quantities inside the model live in frame-index units of the
sampled clip. Conversion to seconds only happens at I/O boundaries.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional


class ConfigError(ValueError):
    """Raised for inconsistent model / pipeline configuration."""


class InputError(ValueError):
    """Raised when an input violates an operation's contract."""


DEFAULT_RANGES = ((0.0, 4.0), (4.0, 8.0), (8.0, 16.0), (16.0, math.inf))

TEXT_MODES = ("cls-only", "all-tokens", "no-text")
PYRAMID_STYLES = ("vitdet", "fpn", "none")
LOSS_KINDS = ("l1", "iou", "diou", "l1+iou")
TASKS = ("mr", "tal", "as")


@dataclass(frozen=True)
class Segment:
    start: float
    end: float
    class_id: int = 0
    score: Optional[float] = None

    def __post_init__(self):
        if not (self.end >= self.start):
            raise InputError(f"segment end {self.end} < start {self.start}")
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise InputError(f"segment score {self.score} outside [0, 1]")

    @property
    def length(self) -> float:
        return self.end - self.start

    def with_score(self, score: float) -> "Segment":
        return Segment(self.start, self.end, self.class_id, score)


def temporal_iou(a: Segment, b: Segment) -> float:
    """Intersection over union of two 1D intervals.

    Two coincident zero-length segments have IoU 1; any other pair with an
    empty union has IoU 0.
    """
    for s in (a, b):
        if s.end < s.start:
            raise InputError(f"invalid segment [{s.start}, {s.end}]")
    return interval_iou(a.start, a.end, b.start, b.end)


def interval_iou(s1: float, e1: float, s2: float, e2: float) -> float:
    inter = min(e1, e2) - max(s1, s2)
    if inter < 0.0:
        inter = 0.0
    union = (e1 - s1) + (e2 - s2) - inter
    if union > 0.0:
        return inter / union
    return 1.0 if (s1 == s2 and e1 == e2) else 0.0


@dataclass(frozen=True)
class FrameGrid:
    n_frames: int
    level_strides: tuple
    timestamps: tuple  # per level, tuple of floats
    seconds_per_frame: float = 1.0

    @property
    def n_levels(self) -> int:
        return len(self.level_strides)

    @property
    def counts(self) -> tuple:
        return tuple(len(t) for t in self.timestamps)

    @property
    def total(self) -> int:
        return sum(self.counts)


def make_frame_grid(n_frames: int, n_levels: int, seconds_per_frame: float = 1.0) -> FrameGrid:
    if n_levels < 1:
        raise ConfigError("need at least one pyramid level")
    if n_frames < 2 ** (n_levels - 1):
        raise ConfigError(
            f"{n_frames} frames cannot support {n_levels} pyramid levels")
    if seconds_per_frame <= 0:
        raise ConfigError("seconds_per_frame must be positive")
    strides, stamps = [], []
    count = n_frames
    for lvl in range(n_levels):
        stride = 2 ** lvl
        strides.append(stride)
        stamps.append(tuple(float(i * stride) for i in range(count)))
        count //= 2
    return FrameGrid(n_frames, tuple(strides), tuple(stamps), float(seconds_per_frame))


def prediction_count(n_frames: int, n_levels: int, n_texts: int = 1) -> int:
    """Number of dense predictions for ``n_texts`` (video, text) pairs."""
    return n_texts * sum(n_frames // 2 ** i for i in range(n_levels))


def default_ranges(n_levels: int) -> tuple:
    if n_levels < 1:
        raise ConfigError("need at least one pyramid level")
    base = list(DEFAULT_RANGES[:n_levels])
    while len(base) < n_levels:
        lo = base[-1][0] * 2 if base[-1][0] > 0 else 4.0
        base.append((lo, lo * 2))
    lo, _ = base[-1]
    base[-1] = (lo, math.inf)
    return tuple(base)


@dataclass
class ModelConfig:
    K: int = 32
    N: int = 128
    T_max: int = 16
    L: int = 4
    M: int = 3
    fusion_layers: int = 2
    fusion_heads: int = 4
    fusion_mlp_dim: int = 64
    text_mode: str = "cls-only"
    pyramid_style: str = "vitdet"
    regression_ranges: Optional[tuple] = None
    loss_kind: str = "l1"
    alpha: float = 1.0
    task: str = "tal"
    raw_dim: int = 16
    vocab_size: int = 64
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    cls_prior_bias: float = -2.0
    late_fusion: bool = False
    paired_encoders: bool = True
    n_classes: int = 0  # only used by the no-text heads

    def __post_init__(self):
        if self.pyramid_style == "none":
            self.L = 1
        if self.regression_ranges is None:
            self.regression_ranges = default_ranges(self.L)
        self.regression_ranges = tuple(tuple(float(v) for v in r) for r in self.regression_ranges)
        self.validate()

    def validate(self):
        if self.L < 1:
            raise ConfigError("L must be >= 1")
        if len(self.regression_ranges) != self.L:
            raise ConfigError(
                f"{len(self.regression_ranges)} regression ranges for {self.L} levels")
        prev_hi = None
        for lo, hi in self.regression_ranges:
            if hi <= lo or (prev_hi is not None and lo != prev_hi):
                raise ConfigError(f"regression ranges not ordered: {self.regression_ranges}")
            prev_hi = hi
        if not math.isinf(self.regression_ranges[-1][1]):
            raise ConfigError("top regression range must be unbounded")
        if self.text_mode not in TEXT_MODES:
            raise ConfigError(f"unknown text_mode {self.text_mode!r}")
        if self.pyramid_style not in PYRAMID_STYLES:
            raise ConfigError(f"unknown pyramid_style {self.pyramid_style!r}")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss_kind {self.loss_kind!r}")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.M < 0:
            raise ConfigError("M must be >= 0")
        if self.K % self.fusion_heads:
            raise ConfigError("K must be divisible by fusion_heads")
        if self.N < 2 ** (self.L - 1):
            raise ConfigError(f"N={self.N} too small for L={self.L}")
        if self.text_mode == "no-text" and self.late_fusion:
            raise ConfigError("late fusion needs class text embeddings")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["regression_ranges"] = [[lo, "inf" if math.isinf(hi) else hi]
                                  for lo, hi in self.regression_ranges]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if d.get("regression_ranges") is not None:
            d["regression_ranges"] = tuple((float(lo), float(hi)) for lo, hi in d["regression_ranges"])
        return cls(**d)
