"""Core domain types: video tensors, boxes, token sequences, seeds, and
the VTNS tensor file format.

VTNS layout (all little-endian): magic b"VTNS", uint16 version = 1, four
uint32 dims (T, H, W, C), then T*H*W*C float32 values in row-major order
with the channel axis fastest.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyQuery,
    MalformedHeader,
    ShapeMismatch,
    ValueOutOfRange,
    VocabMismatch,
)

VTNS_MAGIC = b"VTNS"
VTNS_VERSION = 1


@dataclass(frozen=True)
class VideoTensor:
    """Dense T x H x W x C video with float32 values in [0, 1].

    Frames are stored float32 so a write/read round-trip through VTNS is
    bit-exact; downstream numerics widen to float64.
    """

    frames: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.float32)
        if arr.ndim != 4:
            raise ShapeMismatch(f"expected T,H,W,C frames, got shape {arr.shape}")
        t, h, w, c = arr.shape
        if t < 1 or h < 1 or w < 1:
            raise ShapeMismatch(f"degenerate dimensions {arr.shape}")
        if c not in (1, 3):
            raise ShapeMismatch(f"channel count must be 1 or 3, got {c}")
        if not np.all(np.isfinite(arr)):
            raise ValueOutOfRange("frames contain NaN or Inf")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueOutOfRange("frame values must lie in [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "frames", arr)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.frames.shape

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box with x1 < x2, y1 < y2 (positive area)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not np.isfinite(v):
                raise ValueOutOfRange(f"non-finite box coordinate {v!r}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueOutOfRange(
                f"box must satisfy x1<x2, y1<y2: ({self.x1},{self.y1},{self.x2},{self.y2})"
            )

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def clamped(self, height: int, width: int) -> "BoundingBox":
        x1 = min(max(self.x1, 0.0), width - 1e-6)
        y1 = min(max(self.y1, 0.0), height - 1e-6)
        x2 = max(min(self.x2, float(width)), x1 + 1e-6)
        y2 = max(min(self.y2, float(height)), y1 + 1e-6)
        return BoundingBox(x1, y1, x2, y2)

    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))


@dataclass(frozen=True)
class TokenSequence:
    """Ordered vocabulary ids; every id must lie in [0, vocab_size)."""

    ids: tuple[int, ...]
    vocab_size: int

    def __post_init__(self):
        ids = tuple(int(i) for i in self.ids)
        if self.vocab_size < 1:
            raise VocabMismatch(f"vocab_size must be positive, got {self.vocab_size}")
        for i in ids:
            if not 0 <= i < self.vocab_size:
                raise VocabMismatch(f"token id {i} outside [0, {self.vocab_size})")
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.ids)

    def require_nonempty(self):
        if not self.ids:
            raise EmptyQuery("token sequence is empty")


MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class Seed:
    """64-bit seed; equal seeds yield equal streams everywhere in the engine."""

    value: int

    def __post_init__(self):
        object.__setattr__(self, "value", int(self.value) & MASK64)

    def derive(self, tag: int) -> "Seed":
        """Stable sub-seed for independent streams (tag is a small int)."""
        return Seed((self.value ^ (0x9E3779B97F4A7C15 * (tag + 1))) & MASK64)

    def numpy_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.value)


class SplitMix64:
    """Deterministic 64-bit stream used where cross-language parity matters.

    uniform() maps the top 53 bits to [0, 1); every operation is exact
    IEEE double arithmetic, so any language reproduces the stream.
    """

    def __init__(self, seed: Seed | int):
        self.state = (seed.value if isinstance(seed, Seed) else int(seed)) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return (z ^ (z >> 31)) & MASK64

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform_signed(self, scale: float) -> float:
        return (self.uniform() * 2.0 - 1.0) * scale


def read_video_tensor(path) -> VideoTensor:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 22:
        raise MalformedHeader(f"{path}: file shorter than VTNS header")
    if raw[:4] != VTNS_MAGIC:
        raise MalformedHeader(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != VTNS_VERSION:
        raise MalformedHeader(f"{path}: unsupported version {version}")
    t, h, w, c = struct.unpack_from("<4I", raw, 6)
    expected = t * h * w * c * 4
    payload = raw[22:]
    if len(payload) != expected:
        raise ShapeMismatch(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    arr = flat.reshape(t, h, w, c).astype(np.float32)
    return VideoTensor(arr)  # constructor enforces range/finite invariants


def write_video_tensor(v: VideoTensor, path) -> None:
    t, h, w, c = v.shape
    header = VTNS_MAGIC + struct.pack("<H", VTNS_VERSION) + struct.pack("<4I", t, h, w, c)
    payload = np.ascontiguousarray(v.frames, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
