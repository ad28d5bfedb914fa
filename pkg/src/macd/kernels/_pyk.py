"""Pure-Python/numpy kernel implementations.

These are the reference semantics for the compiled core in _ckern.pyx.
Both implementations must produce bit-identical float64 results, so
every reduction here runs in a fixed sequential order (plain Python
sums, per-track loops) and elementwise numpy expressions mirror the
exact operation order of the C loops. Do not "optimize" a reduction
into np.sum/np.dot: pairwise summation changes low-order bits.
"""

from __future__ import annotations

import math

import numpy as np

SQRT1_2 = math.sqrt(0.5)


def _axis_profile(n: int, lo: float, hi: float, sigma: float) -> np.ndarray:
    """1-D response of the [lo, hi) interval indicator blurred with a
    Gaussian of width sigma, sampled at pixel centers, peak-normalized."""
    out = np.empty(n, dtype=np.float64)
    if sigma <= 0.0:
        for i in range(n):
            c = i + 0.5
            out[i] = 1.0 if lo <= c < hi else 0.0
        return out
    peak = 0.0
    for i in range(n):
        c = i + 0.5
        v = 0.5 * (math.erf((hi - c) / sigma * SQRT1_2) - math.erf((lo - c) / sigma * SQRT1_2))
        out[i] = v
        if v > peak:
            peak = v
    if peak > 0.0:
        for i in range(n):
            out[i] = out[i] / peak
    return out


def soft_box_mask(h: int, w: int, x1: float, y1: float, x2: float, y2: float,
                  sigma: float) -> np.ndarray:
    """Soft box indicator: separable Gaussian-blurred box, interior
    plateau renormalized to 1. sigma = 0 gives the binary indicator."""
    fy = _axis_profile(h, y1, y2, sigma)
    fx = _axis_profile(w, x1, x2, sigma)
    out = np.empty((h, w), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            out[i, j] = fy[i] * fx[j]
    return out


def pool_bounds(n: int, g: int) -> list[tuple[int, int]]:
    return [((gi * n) // g, ((gi + 1) * n) // g) for gi in range(g)]


def pool_sums(frames: np.ndarray, gh: int, gw: int) -> np.ndarray:
    """Per-pool sequential float64 sums over (t, h, w, c) scan order.

    frames is T,H,W,C float32; pools tile H x W on a gh x gw grid.
    """
    t, hh, ww, cc = frames.shape
    rows = pool_bounds(hh, gh)
    cols = pool_bounds(ww, gw)
    out = np.empty(gh * gw, dtype=np.float64)
    f64 = frames.astype(np.float64)
    for gy in range(gh):
        r0, r1 = rows[gy]
        for gx in range(gw):
            c0, c1 = cols[gx]
            # ravel of the C-ordered slice enumerates (t, h, w, c) exactly
            vals = f64[:, r0:r1, c0:c1, :].ravel().tolist()
            acc = 0.0
            for v in vals:
                acc += v
            out[gy * gw + gx] = acc
    return out


def pool_counts(t: int, hh: int, ww: int, cc: int, gh: int, gw: int) -> np.ndarray:
    rows = pool_bounds(hh, gh)
    cols = pool_bounds(ww, gw)
    out = np.empty(gh * gw, dtype=np.int64)
    for gy in range(gh):
        for gx in range(gw):
            out[gy * gw + gx] = t * (rows[gy][1] - rows[gy][0]) * (cols[gx][1] - cols[gx][0]) * cc
    return out


def union_max(masks: np.ndarray, strengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel max_k(strengths[k] * masks[k]); ties keep the lowest k.

    Returns (mask H,W, argmax H,W int32). Pixels covered by no track get
    argmax -1; an all-zero-strength pixel keeps the lowest covering k so
    subgradients stay defined there.
    """
    k, h, w = masks.shape
    best = np.zeros((h, w), dtype=np.float64)
    arg = np.full((h, w), -1, dtype=np.int32)
    for ki in range(k):
        cand = strengths[ki] * masks[ki]
        covering = masks[ki] > 0.0
        take = (cand > best) | ((arg == -1) & covering & (cand >= best))
        best = np.where(take, cand, best)
        arg = np.where(take, np.int32(ki), arg)
    return best, arg


def union_confnorm(masks: np.ndarray, strengths: np.ndarray,
                   confs: np.ndarray) -> np.ndarray:
    """Confidence-weighted blend over covering tracks, clamped to [0,1]."""
    k, h, w = masks.shape
    num = np.zeros((h, w), dtype=np.float64)
    den = np.zeros((h, w), dtype=np.float64)
    for ki in range(k):
        covering = masks[ki] > 0.0
        num = num + np.where(covering, confs[ki] * (strengths[ki] * masks[ki]), 0.0)
        den = den + np.where(covering, confs[ki], 0.0)
    out = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)
    return np.minimum(np.maximum(out, 0.0), 1.0)


def union_avg(masks: np.ndarray, strengths: np.ndarray) -> np.ndarray:
    """Plain mean of strength-scaled masks over covering tracks."""
    k, h, w = masks.shape
    num = np.zeros((h, w), dtype=np.float64)
    cnt = np.zeros((h, w), dtype=np.float64)
    for ki in range(k):
        covering = masks[ki] > 0.0
        num = num + np.where(covering, strengths[ki] * masks[ki], 0.0)
        cnt = cnt + np.where(covering, 1.0, 0.0)
    out = np.where(cnt > 0.0, num / np.where(cnt > 0.0, cnt, 1.0), 0.0)
    return np.minimum(np.maximum(out, 0.0), 1.0)


def normalize_overlaps_px(masks: np.ndarray, confs: np.ndarray) -> np.ndarray:
    """Where the per-pixel mask sum exceeds 1, split unit coverage by
    confidence-weighted mask mass; pixels with sum <= 1 are unchanged."""
    k, h, w = masks.shape
    total = np.zeros((h, w), dtype=np.float64)
    weighted = np.zeros((h, w), dtype=np.float64)
    for ki in range(k):
        total = total + masks[ki]
        weighted = weighted + confs[ki] * masks[ki]
    over = total > 1.0
    safe_w = np.where(weighted > 0.0, weighted, 1.0)
    safe_t = np.where(total > 0.0, total, 1.0)
    out = np.empty_like(masks)
    for ki in range(k):
        # degenerate all-zero-confidence overlap falls back to proportional
        share = np.where(weighted > 0.0, (masks[ki] * confs[ki]) / safe_w,
                         masks[ki] / safe_t)
        out[ki] = np.where(over, share, masks[ki])
    return out


def compose_z(object_mask: np.ndarray, frame_value: float) -> np.ndarray:
    """Z = clamp(M_frame + M_object, 0, 1); the frame mask is a constant
    field per frame."""
    z = frame_value + object_mask
    return np.minimum(np.maximum(z, 0.0), 1.0)


def occlusion_blend(frames: np.ndarray, z: np.ndarray, fill: float) -> np.ndarray:
    """V*(1-Z) + fill*Z in float64; channels share the per-pixel Z."""
    v = frames.astype(np.float64)
    zz = z[..., None]
    return v * (1.0 - zz) + fill * zz


def additive_clamp(frames: np.ndarray, z: np.ndarray) -> np.ndarray:
    """clamp(V + Z, 0, 1) in float64 (the literal additive composition)."""
    v = frames.astype(np.float64)
    out = v + z[..., None]
    return np.minimum(np.maximum(out, 0.0), 1.0)
