"""Strength optimization and the counterfactual strategy family.

Mask strengths start at r_init, take `steps` gradient-ascent updates on
the mean query-reconstruction loss (clamped to [0,1] each step), and are
then discretized to the ternary levels {0, r0, 1} with an exact-tie band
around r0. The strategy builder also realizes the ablation variants:
fixed strengths, frame-mask removal/extraction, trainable noise at
global/object/frame granularity, and an area-matched random mask.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .backend import GradRequest
from .compose import (
    ComposeConfig,
    CounterfactualView,
    FrameMaskPolicy,
    StrengthVector,
    perturbation_field,
    render_counterfactual,
    render_view_f64,
)
from .errors import ConfigError, NoTracks, ValueOutOfRange
from .profiling import PassCounter
from .tracking import ObjectTrack
from .video import Seed, TokenSequence, VideoTensor

STRATEGIES = ("macd", "fixed", "noframe", "noframe-extract", "noise",
              "objnoise", "framenoise", "random", "baseline")

_OBJECT_DEPENDENT = ("macd", "fixed", "noframe", "noframe-extract",
                     "objnoise", "random")


@dataclass(frozen=True)
class OptimizerConfig:
    r_init: float = 0.75
    eta: float = 0.01
    steps: int = 1
    r0: float = 0.75
    tie_eps: float = 1e-9

    def __post_init__(self):
        if not 0.0 < self.r0 < 1.0:
            raise ConfigError("r0 must lie strictly inside (0, 1)")
        if not 0.0 <= self.r_init <= 1.0:
            raise ConfigError("r_init must lie in [0, 1]")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.eta <= 0:
            raise ConfigError("eta must be positive")
        if self.tie_eps < 0:
            raise ConfigError("tie_eps must be >= 0")


@dataclass(frozen=True)
class CounterfactualStrategy:
    kind: str = "macd"
    noise_seed: Seed = Seed(0)

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.kind!r}; expected {STRATEGIES}")


@dataclass(frozen=True)
class OptimizeResult:
    strengths: StrengthVector          # continuous, pre-discretization
    loss_trajectory: tuple[float, ...]  # loss at r before each update
    grad_passes: int


def optimize_strengths(base: VideoTensor, tracks: list[ObjectTrack],
                       query: TokenSequence, backend, cfg: OptimizerConfig,
                       compose: ComposeConfig,
                       counter: PassCounter | None = None) -> OptimizeResult:
    """Gradient ascent on the mean query loss, re-rendering the view at
    every step; returns the continuous strengths and loss trajectory."""
    r = StrengthVector.filled(len(tracks), base.n_frames, cfg.r_init)
    traj: list[float] = []
    for _ in range(cfg.steps):
        req = GradRequest(base=base, tracks=tracks, strengths=r, query=query,
                          compose=compose)
        loss, grad = backend.loss_and_grad(req)
        if counter is not None:
            counter.grad_passes += 1
        traj.append(loss)
        obj = np.clip(r.object_r + cfg.eta * grad.object_r, 0.0, 1.0)
        frm = np.clip(r.frame_r + cfg.eta * grad.frame_r, 0.0, 1.0)
        r = StrengthVector(obj, frm)
    return OptimizeResult(strengths=r, loss_trajectory=tuple(traj),
                          grad_passes=cfg.steps)


def discretize(r: StrengthVector, cfg: OptimizerConfig) -> StrengthVector:
    """Ternary levels: above r0 (outside the tie band) -> 1, below -> 0,
    within +-tie_eps of r0 -> r0."""
    def snap(arr: np.ndarray) -> np.ndarray:
        out = np.empty_like(arr)
        for i, x in enumerate(arr):
            if abs(x - cfg.r0) <= cfg.tie_eps:
                out[i] = cfg.r0
            elif x > cfg.r0:
                out[i] = 1.0
            else:
                out[i] = 0.0
        return out
    return StrengthVector(snap(r.object_r), snap(r.frame_r))


def _noise_field(shape: tuple[int, ...], seed: Seed) -> np.ndarray:
    return seed.numpy_rng().random(shape, dtype=np.float64)


def _noise_tracks_global(base: VideoTensor, seed: Seed) -> list[ObjectTrack]:
    t, h, w, _ = base.shape
    u = _noise_field((t, h, w), seed)
    masks = {ti: u[ti] for ti in range(t)}
    return [ObjectTrack(track_id=0, class_id=-1, confidence=1.0,
                        span=(0, t - 1), boxes={}, masks=masks)]


def _noise_tracks_per_object(base: VideoTensor, tracks: list[ObjectTrack],
                             seed: Seed) -> list[ObjectTrack]:
    out = []
    for k, tr in enumerate(tracks):
        rng = seed.derive(k).numpy_rng()
        masks = {f: rng.random(m.shape) * m for f, m in sorted(tr.masks.items())}
        out.append(replace(tr, masks=masks))
    return out


def _noise_tracks_per_frame(base: VideoTensor, seed: Seed) -> list[ObjectTrack]:
    t, h, w, _ = base.shape
    u = _noise_field((t, h, w), seed)
    return [ObjectTrack(track_id=ti, class_id=-1, confidence=1.0,
                        span=(ti, ti), boxes={}, masks={ti: u[ti]})
            for ti in range(t)]


def _identity_view(base: VideoTensor, compose: ComposeConfig) -> CounterfactualView:
    t = base.n_frames
    return CounterfactualView(
        video=base, perturbation=np.zeros(base.shape[:3]),
        strengths=StrengthVector.filled(0, t, 0.0),
        fusion=compose.fusion, render=compose.render, fill=compose.fill)


def build_counterfactual(strategy: CounterfactualStrategy, base: VideoTensor,
                         tracks: list[ObjectTrack], query: TokenSequence,
                         backend, cfg: OptimizerConfig, compose: ComposeConfig,
                         counter: PassCounter | None = None
                         ) -> tuple[CounterfactualView, dict]:
    """Build the strategy's counterfactual view plus a provenance record."""
    kind = strategy.kind
    if kind in _OBJECT_DEPENDENT and not tracks:
        warnings.warn(f"strategy {kind!r} needs object tracks but none were "
                      "given; falling back to framenoise", category=UserWarning,
                      stacklevel=2)
        raised = NoTracks(kind)  # recorded, not raised
        view, prov = build_counterfactual(replace(strategy, kind="framenoise"),
                                          base, tracks, query, backend, cfg,
                                          compose, counter)
        prov = dict(prov, fallback_from=kind, fallback_reason=str(raised))
        return view, prov

    if kind == "baseline":
        view = _identity_view(base, compose)
        return view, {"strategy": kind, "steps_used": 0, "object_r": [],
                      "frame_r": view.strengths.frame_r.tolist(),
                      "loss_trajectory": []}

    if kind in ("macd", "fixed", "noframe", "noframe-extract"):
        eff_compose = compose
        if kind == "noframe":
            eff_compose = replace(compose, policy=FrameMaskPolicy(mode="none"))
        elif kind == "noframe-extract":
            eff_compose = replace(compose, policy=FrameMaskPolicy(
                mode="extract", keep_stride=compose.policy.keep_stride))
        eff_cfg = cfg if kind != "fixed" else replace(cfg, steps=0)
        opt = optimize_strengths(base, tracks, query, backend, eff_cfg, eff_compose,
                                 counter)
        r_hat = discretize(opt.strengths, eff_cfg)
        view = render_counterfactual(base, tracks, r_hat, eff_compose)
        return view, {"strategy": kind, "steps_used": eff_cfg.steps,
                      "object_r": r_hat.object_r.tolist(),
                      "frame_r": r_hat.frame_r.tolist(),
                      "loss_trajectory": list(opt.loss_trajectory)}

    if kind in ("noise", "objnoise", "framenoise"):
        if kind == "noise":
            pseudo = _noise_tracks_global(base, strategy.noise_seed)
        elif kind == "objnoise":
            pseudo = _noise_tracks_per_object(base, tracks, strategy.noise_seed)
        else:
            pseudo = _noise_tracks_per_frame(base, strategy.noise_seed)
        eff_compose = replace(compose, policy=FrameMaskPolicy(mode="none"))
        opt = optimize_strengths(base, pseudo, query, backend, cfg, eff_compose,
                                 counter)
        r_hat = discretize(opt.strengths, cfg)
        view = render_counterfactual(base, pseudo, r_hat, eff_compose)
        return view, {"strategy": kind, "steps_used": cfg.steps,
                      "object_r": r_hat.object_r.tolist(),
                      "frame_r": r_hat.frame_r.tolist(),
                      "loss_trajectory": list(opt.loss_trajectory)}

    # random: a seeded binary mask matching the total occluded area of the
    # corresponding macd view
    macd_view, macd_prov = build_counterfactual(
        replace(strategy, kind="macd"), base, tracks, query, backend, cfg,
        compose, counter)
    target = float(macd_view.perturbation.sum())
    t, h, w, _ = base.shape
    n_pixels = t * h * w
    n_on = int(round(min(target, n_pixels)))
    flat = np.zeros(n_pixels, dtype=np.float64)
    if n_on > 0:
        idx = strategy.noise_seed.numpy_rng().choice(n_pixels, size=n_on,
                                                     replace=False)
        flat[idx] = 1.0
    z = flat.reshape(t, h, w)
    frames64 = render_view_f64(base, z, compose.render, compose.fill)
    view = CounterfactualView(
        video=VideoTensor(frames64.astype(np.float32)), perturbation=z,
        strengths=macd_view.strengths, fusion=compose.fusion,
        render=compose.render, fill=compose.fill)
    return view, {"strategy": kind, "steps_used": macd_prov["steps_used"],
                  "target_area": target, "matched_area": float(z.sum()),
                  "object_r": macd_prov["object_r"],
                  "frame_r": macd_prov["frame_r"],
                  "loss_trajectory": macd_prov["loss_trajectory"]}
