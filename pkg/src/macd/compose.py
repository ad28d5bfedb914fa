"""Counterfactual view composition.

Object masks are fused per pixel (pixelwise max by default, with
confidence-normalized and simple-average alternatives), combined with a
per-frame temporal mask by clamped sum into a perturbation field Z, and
rendered either by occlusion blending toward a fill value (default,
differentiable everywhere Z < 1) or by literal additive clamping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, LengthMismatch, ShapeMismatch, ValueOutOfRange
from .tracking import ObjectTrack
from .video import VideoTensor

FUSIONS = ("max", "confnorm", "avg")
RENDERS = ("blend", "addclamp")
POLICY_MODES = ("trainable", "subset", "none", "extract")

DEFAULT_FILL = 0.5


@dataclass(frozen=True)
class StrengthVector:
    """Per-object and per-frame mask strengths, all in [0, 1]."""

    object_r: np.ndarray
    frame_r: np.ndarray

    def __post_init__(self):
        obj = np.atleast_1d(np.asarray(self.object_r, dtype=np.float64))
        frm = np.atleast_1d(np.asarray(self.frame_r, dtype=np.float64)) \
            if np.size(self.frame_r) else np.zeros(0, dtype=np.float64)
        for name, arr in (("object_r", obj), ("frame_r", frm)):
            if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0):
                raise ValueOutOfRange(f"{name} values must lie in [0, 1]")
        obj.flags.writeable = False
        frm.flags.writeable = False
        object.__setattr__(self, "object_r", obj)
        object.__setattr__(self, "frame_r", frm)

    @property
    def n_objects(self) -> int:
        return int(self.object_r.size)

    @property
    def n_frames(self) -> int:
        return int(self.frame_r.size)

    def concat(self) -> np.ndarray:
        return np.concatenate([self.object_r, self.frame_r])

    @staticmethod
    def split(flat: np.ndarray, n_objects: int) -> "StrengthVector":
        flat = np.asarray(flat, dtype=np.float64)
        return StrengthVector(flat[:n_objects], flat[n_objects:])

    @staticmethod
    def filled(n_objects: int, n_frames: int, value: float) -> "StrengthVector":
        return StrengthVector(np.full(n_objects, value), np.full(n_frames, value))


@dataclass(frozen=True)
class FrameMaskPolicy:
    """Temporal mask behavior: trainable per-frame strength, a fixed
    frame subset, disabled, or stride-based frame extraction (off-grid
    frames are fully suppressed in the counterfactual)."""

    mode: str = "none"
    subset: tuple[int, ...] = ()
    keep_stride: int = 2

    def __post_init__(self):
        if self.mode not in POLICY_MODES:
            raise ConfigError(f"unknown frame mask mode {self.mode!r}")
        if self.keep_stride < 1:
            raise ConfigError("keep_stride must be >= 1")
        object.__setattr__(self, "subset", tuple(int(i) for i in self.subset))

    def validate_frames(self, n_frames: int):
        for i in self.subset:
            if not 0 <= i < n_frames:
                raise ConfigError(f"subset frame {i} outside [0, {n_frames})")

    def frame_value(self, frame_r: np.ndarray, t: int) -> float:
        if self.mode == "trainable":
            return float(frame_r[t])
        if self.mode == "subset":
            return 1.0 if t in self.subset else 0.0
        if self.mode == "extract":
            return 0.0 if t % self.keep_stride == 0 else 1.0
        return 0.0

    @property
    def trains_frames(self) -> bool:
        return self.mode == "trainable"


@dataclass(frozen=True)
class ComposeConfig:
    fusion: str = "max"
    render: str = "blend"
    policy: FrameMaskPolicy = field(default_factory=FrameMaskPolicy)
    fill: float = DEFAULT_FILL

    def __post_init__(self):
        if self.fusion not in FUSIONS:
            raise ConfigError(f"unknown fusion {self.fusion!r}; expected {FUSIONS}")
        if self.render not in RENDERS:
            raise ConfigError(f"unknown render {self.render!r}; expected {RENDERS}")
        if not 0.0 <= self.fill <= 1.0:
            raise ConfigError("fill must lie in [0, 1]")


@dataclass(frozen=True)
class CounterfactualView:
    """The rendered masked video plus the perturbation field and the
    strengths that produced it."""

    video: VideoTensor
    perturbation: np.ndarray  # T,H,W float64 in [0,1]
    strengths: StrengthVector
    fusion: str
    render: str
    fill: float = DEFAULT_FILL

    def __post_init__(self):
        z = np.asarray(self.perturbation, dtype=np.float64)
        if z.ndim != 3 or z.shape != self.video.shape[:3]:
            raise ShapeMismatch("perturbation must be T,H,W matching the video")
        if z.size and (z.min() < 0.0 or z.max() > 1.0):
            raise ValueOutOfRange("perturbation values must lie in [0, 1]")
        z.flags.writeable = False
        object.__setattr__(self, "perturbation", z)


def _covering(tracks: list[ObjectTrack], t: int) -> list[int]:
    return [k for k, tr in enumerate(tracks) if t in tr.masks]


def union_object_mask(tracks: list[ObjectTrack], strengths: StrengthVector,
                      fusion: str, t: int, shape: tuple[int, int]) -> np.ndarray:
    """Fuse strength-scaled per-object masks for frame t into one field."""
    if strengths.n_objects != len(tracks):
        raise LengthMismatch(
            f"{strengths.n_objects} object strengths for {len(tracks)} tracks")
    if fusion not in FUSIONS:
        raise ConfigError(f"unknown fusion {fusion!r}")
    idx = _covering(tracks, t)
    if not idx:
        return np.zeros(shape, dtype=np.float64)
    stack = np.stack([tracks[k].masks[t] for k in idx])
    sub = strengths.object_r[idx]
    if fusion == "max":
        mask, _ = kernels.union_max(stack, sub)
        return mask
    if fusion == "confnorm":
        confs = np.array([tracks[k].confidence for k in idx], dtype=np.float64)
        return kernels.union_confnorm(stack, sub, confs)
    return kernels.union_avg(stack, sub)


def frame_mask(policy: FrameMaskPolicy, frame_r: np.ndarray, t: int,
               shape: tuple[int, int]) -> np.ndarray:
    """The temporal mask for frame t as a constant H x W field."""
    return np.full(shape, policy.frame_value(np.asarray(frame_r, dtype=np.float64), t),
                   dtype=np.float64)


def perturbation_field(video_shape: tuple[int, int, int, int],
                       tracks: list[ObjectTrack], strengths: StrengthVector,
                       cfg: ComposeConfig) -> np.ndarray:
    """Z per frame: clamp(frame mask + fused object mask, 0, 1)."""
    t, h, w, _ = video_shape
    if cfg.policy.trains_frames and strengths.n_frames != t:
        raise LengthMismatch(f"{strengths.n_frames} frame strengths for T={t}")
    cfg.policy.validate_frames(t)
    z = np.empty((t, h, w), dtype=np.float64)
    for ti in range(t):
        mo = union_object_mask(tracks, strengths, cfg.fusion, ti, (h, w))
        z[ti] = kernels.compose_z(mo, cfg.policy.frame_value(strengths.frame_r, ti))
    return z


def render_view_f64(base: VideoTensor, z: np.ndarray, render: str,
                    fill: float) -> np.ndarray:
    """Float64 render used by the differentiable loss path."""
    if z.shape != base.shape[:3]:
        raise ShapeMismatch(f"Z shape {z.shape} vs video {base.shape}")
    if render == "blend":
        return kernels.occlusion_blend(base.frames, z, fill)
    return kernels.additive_clamp(base.frames, z)


def render_counterfactual(base: VideoTensor, tracks: list[ObjectTrack],
                          strengths: StrengthVector,
                          cfg: ComposeConfig) -> CounterfactualView:
    """Compose Z and render the masked video (float32 artifact view)."""
    z = perturbation_field(base.shape, tracks, strengths, cfg)
    out = render_view_f64(base, z, cfg.render, cfg.fill)
    video = VideoTensor(out.astype(np.float32))
    return CounterfactualView(video=video, perturbation=z, strengths=strengths,
                              fusion=cfg.fusion, render=cfg.render, fill=cfg.fill)
