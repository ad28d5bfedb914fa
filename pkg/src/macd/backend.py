"""Autoregressive scorer backends.

The built-in toy surrogate scores next tokens from region-pooled frame
intensities concatenated with a bag of context-token embeddings through
one linear layer. Its weights carry a fixed "evidence zone" structure
(one pool whose brightness drives the yes/no answer and the probe token)
plus seeded noise, so masking that zone causally changes answers. The
biased variant adds a constant logit boost to designated tokens to
emulate an ungrounded prior.

Every arithmetic step of the seeded init and the logits forward runs in
a documented fixed order using only +,-,*,/ on IEEE doubles, so any
other implementation of the same recipe (e.g. a wire-protocol stub)
reproduces logits bit-for-bit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .compose import ComposeConfig, StrengthVector, perturbation_field, render_view_f64
from .errors import (
    BackendError,
    ConfigError,
    EmptyQuery,
    NonDifferentiableConfig,
    VocabMismatch,
)
from .tracking import ObjectTrack
from .video import Seed, SplitMix64, TokenSequence, VideoTensor

# Token/zone layout baked into the seeded toy weights. The evidence zone
# is one interior pool of the default 4x4 grid; its pooled brightness
# pushes the yes/no answer margin and (negatively) the probe token.
TOK_YES = 1
TOK_NO = 2
TOK_PROBE = 3
DEFAULT_VOCAB = 32
DEFAULT_EMBED = 16
DEFAULT_GRID = (4, 4)
ZONE_POOL_RC = (1, 1)
ANSWER_GAIN = 3.0
PROBE_GAIN = 2.0
PROBE_BIAS = -2.0
DEFAULT_BOOST = 4.0

NOISE_EMBED = 0.5
NOISE_WVIS = 0.05
NOISE_WTOK = 0.2
NOISE_BIAS = 0.05


@dataclass(frozen=True)
class BackendCapabilities:
    vocab_size: int
    supports_analytic_grad: bool
    max_frames: int


@dataclass(frozen=True)
class ToySurrogateParams:
    vocab_size: int
    embed_dim: int
    pool_grid: tuple[int, int]
    embed: np.ndarray   # vocab x embed_dim
    w_vis: np.ndarray   # vocab x (gh*gw)
    w_tok: np.ndarray   # vocab x embed_dim
    b: np.ndarray       # vocab
    bias_boost: float = 0.0
    hallucination_tokens: tuple[int, ...] = (TOK_YES,)

    def __post_init__(self):
        for name in ("embed", "w_vis", "w_tok", "b"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} contains non-finite values")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")

    @property
    def n_pools(self) -> int:
        return self.pool_grid[0] * self.pool_grid[1]

    @staticmethod
    def zeros(vocab_size: int = DEFAULT_VOCAB, embed_dim: int = DEFAULT_EMBED,
              pool_grid: tuple[int, int] = DEFAULT_GRID,
              bias_boost: float = 0.0) -> "ToySurrogateParams":
        p = pool_grid[0] * pool_grid[1]
        return ToySurrogateParams(
            vocab_size=vocab_size, embed_dim=embed_dim, pool_grid=pool_grid,
            embed=np.zeros((vocab_size, embed_dim)),
            w_vis=np.zeros((vocab_size, p)),
            w_tok=np.zeros((vocab_size, embed_dim)),
            b=np.zeros(vocab_size), bias_boost=bias_boost)

    @staticmethod
    def seeded(seed: Seed, biased: bool = False,
               vocab_size: int = DEFAULT_VOCAB, embed_dim: int = DEFAULT_EMBED,
               pool_grid: tuple[int, int] = DEFAULT_GRID) -> "ToySurrogateParams":
        """Structured zone weights plus SplitMix64 noise.

        Draw order (one stream): embed row-major, w_vis row-major, w_tok
        row-major, b; then the structural constants are added.
        """
        rng = SplitMix64(seed)
        p = pool_grid[0] * pool_grid[1]
        embed = np.empty((vocab_size, embed_dim))
        for v in range(vocab_size):
            for j in range(embed_dim):
                embed[v, j] = rng.uniform_signed(NOISE_EMBED)
        w_vis = np.empty((vocab_size, p))
        for v in range(vocab_size):
            for j in range(p):
                w_vis[v, j] = rng.uniform_signed(NOISE_WVIS)
        w_tok = np.empty((vocab_size, embed_dim))
        for v in range(vocab_size):
            for j in range(embed_dim):
                w_tok[v, j] = rng.uniform_signed(NOISE_WTOK)
        b = np.empty(vocab_size)
        for v in range(vocab_size):
            b[v] = rng.uniform_signed(NOISE_BIAS)
        zone = ZONE_POOL_RC[0] * pool_grid[1] + ZONE_POOL_RC[1]
        w_vis[TOK_YES, zone] += ANSWER_GAIN
        b[TOK_YES] += -(ANSWER_GAIN * 0.5)
        w_vis[TOK_NO, zone] += -ANSWER_GAIN
        b[TOK_NO] += ANSWER_GAIN * 0.5
        w_vis[TOK_PROBE, zone] += -PROBE_GAIN
        b[TOK_PROBE] += PROBE_BIAS
        return ToySurrogateParams(
            vocab_size=vocab_size, embed_dim=embed_dim, pool_grid=pool_grid,
            embed=embed, w_vis=w_vis, w_tok=w_tok, b=b,
            bias_boost=DEFAULT_BOOST if biased else 0.0)


@dataclass(frozen=True)
class GradRequest:
    base: VideoTensor
    tracks: list[ObjectTrack]
    strengths: StrengthVector
    query: TokenSequence
    compose: ComposeConfig = field(default_factory=ComposeConfig)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max()
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum())


class ToyBackend:
    """In-process analytic implementation of the scorer contract."""

    name = "toy"

    def __init__(self, params: ToySurrogateParams):
        self.params = params
        # python-float copies for the sequential forward loops (exact values)
        self._embed = [row.tolist() for row in params.embed]
        self._w_vis = [row.tolist() for row in params.w_vis]
        self._w_tok = [row.tolist() for row in params.w_tok]
        self._b = params.b.tolist()
        self._hall = frozenset(params.hallucination_tokens)

    def capabilities(self) -> BackendCapabilities:
        return BackendCapabilities(vocab_size=self.params.vocab_size,
                                   supports_analytic_grad=True, max_frames=1 << 16)

    # -- forward -----------------------------------------------------------

    def _check_tokens(self, seq: TokenSequence):
        for i in seq.ids:
            if i >= self.params.vocab_size:
                raise VocabMismatch(
                    f"token {i} outside backend vocab {self.params.vocab_size}")

    def _pool_means_f32(self, view: VideoTensor) -> np.ndarray:
        gh, gw = self.params.pool_grid
        t, h, w, c = view.shape
        sums = kernels.pool_sums(view.frames, gh, gw)
        counts = kernels.pool_counts(t, h, w, c, gh, gw)
        out = np.empty_like(sums)
        for i in range(sums.size):
            out[i] = sums[i] / counts[i]
        return out

    def _pool_means_f64(self, frames: np.ndarray) -> np.ndarray:
        gh, gw = self.params.pool_grid
        t, h, w, c = frames.shape
        rows = kernels.pool_bounds(h, gh)
        cols = kernels.pool_bounds(w, gw)
        out = np.empty(gh * gw)
        for gy in range(gh):
            for gx in range(gw):
                block = frames[:, rows[gy][0]:rows[gy][1], cols[gx][0]:cols[gx][1], :]
                out[gy * gw + gx] = block.sum() / block.size
        return out

    def _logits_from_pools(self, pools: np.ndarray, ctx: tuple[int, ...]) -> np.ndarray:
        pm = self.params
        n_e = pm.embed_dim
        e = [0.0] * n_e
        for tok in ctx:
            row = self._embed[tok]
            for j in range(n_e):
                e[j] += row[j]
        pool_vals = pools.tolist()
        n_p = len(pool_vals)
        boost = pm.bias_boost
        out = np.empty(pm.vocab_size)
        for v in range(pm.vocab_size):
            acc = self._b[v]
            wv = self._w_vis[v]
            for p in range(n_p):
                acc += wv[p] * pool_vals[p]
            wt = self._w_tok[v]
            for j in range(n_e):
                acc += wt[j] * e[j]
            if v in self._hall:
                acc += boost
            out[v] = acc
        return out

    def logits(self, view: VideoTensor, query: TokenSequence,
               prefix: TokenSequence) -> np.ndarray:
        self._check_tokens(query)
        self._check_tokens(prefix)
        pools = self._pool_means_f32(view)
        return self._logits_from_pools(pools, query.ids + prefix.ids)

    # -- losses and gradients ------------------------------------------------

    def _query_loss_from_pools(self, pools: np.ndarray, query: TokenSequence) -> float:
        query.require_nonempty()
        total = 0.0
        for n in range(len(query)):
            logits = self._logits_from_pools(pools, query.ids[:n])
            total += -float(_log_softmax(logits)[query.ids[n]])
        return total / len(query)

    def query_loss(self, view: VideoTensor, query: TokenSequence) -> float:
        """Mean next-token cross-entropy of reconstructing the query from
        the view."""
        self._check_tokens(query)
        return self._query_loss_from_pools(self._pool_means_f32(view), query)

    def loss_at_strengths(self, req: GradRequest, strengths: StrengthVector) -> float:
        """Query loss of the float64-composed view at given strengths; the
        single source of truth for both analytic and FD gradients."""
        z = perturbation_field(req.base.shape, req.tracks, strengths, req.compose)
        frames = render_view_f64(req.base, z, req.compose.render, req.compose.fill)
        return self._query_loss_from_pools(self._pool_means_f64(frames), req.query)

    def loss_and_grad(self, req: GradRequest) -> tuple[float, StrengthVector]:
        """Analytic chain gradient of the mean query loss w.r.t. strengths."""
        cfg = req.compose
        if cfg.render != "blend":
            warnings.warn("analytic gradients need the blend render; "
                          "falling back to finite differences",
                          category=UserWarning, stacklevel=2)
            loss = self.loss_at_strengths(req, req.strengths)
            return loss, fd_gradient(self, req).gradient
        pm = self.params
        base = req.base
        t, h, w, c = base.shape
        gh, gw = pm.pool_grid
        strengths = req.strengths

        z = perturbation_field(base.shape, req.tracks, strengths, cfg)
        frames = render_view_f64(base, z, cfg.render, cfg.fill)
        pools = self._pool_means_f64(frames)

        # dL/dlogit summed over query positions -> per-pool weights
        req.query.require_nonempty()
        n_q = len(req.query)
        loss = 0.0
        dlogit_total = np.zeros(pm.vocab_size)
        for n in range(n_q):
            logits = self._logits_from_pools(pools, req.query.ids[:n])
            ls = _log_softmax(logits)
            loss += -float(ls[req.query.ids[n]])
            probs = np.exp(ls)
            probs[req.query.ids[n]] -= 1.0
            dlogit_total += probs / n_q
        loss /= n_q
        w_pool = dlogit_total @ pm.w_vis  # (P,)

        # per-pixel dL/dZ
        rows = kernels.pool_bounds(h, gh)
        cols = kernels.pool_bounds(w, gw)
        pool_of = np.empty((h, w), dtype=np.int64)
        counts = kernels.pool_counts(t, h, w, c, gh, gw)
        for gy in range(gh):
            for gx in range(gw):
                pool_of[rows[gy][0]:rows[gy][1], cols[gx][0]:cols[gx][1]] = gy * gw + gx
        wpix = (w_pool / counts)[pool_of]  # (H,W)
        base64 = base.frames.astype(np.float64)
        dl_dz = wpix[None, :, :] * (cfg.fill - base64).sum(axis=3)  # (T,H,W)

        obj_grad = np.zeros(strengths.n_objects)
        frame_grad = np.zeros(strengths.n_frames)
        for ti in range(t):
            idx = [k for k, tr in enumerate(req.tracks) if ti in tr.masks]
            fv = cfg.policy.frame_value(strengths.frame_r, ti)
            if idx:
                stack = np.stack([req.tracks[k].masks[ti] for k in idx])
                sub = strengths.object_r[idx]
                if cfg.fusion == "max":
                    mo, arg = kernels.union_max(stack, sub)
                elif cfg.fusion == "confnorm":
                    confs = np.array([req.tracks[k].confidence for k in idx])
                    mo = kernels.union_confnorm(stack, sub, confs)
                else:
                    mo = kernels.union_avg(stack, sub)
            else:
                mo = np.zeros((h, w))
            s_field = fv + mo
            active = (s_field < 1.0).astype(np.float64)
            grad_z = dl_dz[ti] * active
            if cfg.policy.trains_frames and strengths.n_frames:
                frame_grad[ti] = grad_z.sum()
            if idx:
                if cfg.fusion == "max":
                    for j, k in enumerate(idx):
                        sel = arg == j
                        if sel.any():
                            obj_grad[k] += (grad_z * stack[j] * sel).sum()
                elif cfg.fusion == "confnorm":
                    confs = np.array([req.tracks[k].confidence for k in idx])
                    cov = stack > 0.0
                    den = (cov * confs[:, None, None]).sum(axis=0)
                    den = np.where(den > 0.0, den, 1.0)
                    for j, k in enumerate(idx):
                        obj_grad[k] += (grad_z * cov[j] * confs[j] * stack[j] / den).sum()
                else:
                    cov = stack > 0.0
                    cnt = cov.sum(axis=0)
                    cnt = np.where(cnt > 0, cnt, 1)
                    for j, k in enumerate(idx):
                        obj_grad[k] += (grad_z * cov[j] * stack[j] / cnt).sum()
        return loss, _raw_strengths(obj_grad, frame_grad)

    def loss_grad_wrt_strengths(self, req: GradRequest) -> StrengthVector:
        return self.loss_and_grad(req)[1]


def _raw_strengths(obj: np.ndarray, frm: np.ndarray) -> StrengthVector:
    """Gradient carrier shaped like a StrengthVector but without the
    [0,1] range check (gradients are unbounded)."""
    sv = object.__new__(StrengthVector)
    obj = np.asarray(obj, dtype=np.float64)
    frm = np.asarray(frm, dtype=np.float64)
    obj.flags.writeable = False
    frm.flags.writeable = False
    object.__setattr__(sv, "object_r", obj)
    object.__setattr__(sv, "frame_r", frm)
    return sv


@dataclass(frozen=True)
class FdResult:
    gradient: StrengthVector
    one_sided: tuple[int, ...]   # flat indices where the step was clamped


def fd_gradient(backend, req: GradRequest, h: float = 1e-3) -> FdResult:
    """Central-difference oracle for d(query loss)/d(strengths).

    Components whose +-h step would leave [0,1] use the clamped one-sided
    difference and are flagged. The loss is evaluated through the same
    loss_at_strengths hook the analytic path differentiates.
    """
    if h <= 0:
        raise ConfigError("fd step h must be positive")
    flat = req.strengths.concat()
    n_obj = req.strengths.n_objects
    grad = np.zeros_like(flat)
    one_sided = []
    for i in range(flat.size):
        up = min(flat[i] + h, 1.0)
        dn = max(flat[i] - h, 0.0)
        eff = up - dn
        if eff < 2 * h - 1e-15:
            one_sided.append(i)
        if eff == 0.0:
            continue
        fp = flat.copy()
        fp[i] = up
        fm = flat.copy()
        fm[i] = dn
        lp = backend.loss_at_strengths(req, StrengthVector.split(fp, n_obj))
        lm = backend.loss_at_strengths(req, StrengthVector.split(fm, n_obj))
        grad[i] = (lp - lm) / eff
    return FdResult(gradient=_raw_strengths(grad[:n_obj], grad[n_obj:]),
                    one_sided=tuple(one_sided))


def make_backend(spec: str):
    """Resolve a backend selector: toy:<seed> | toy-biased:<seed> |
    proto:<host:port | stdio:cmd...>."""
    if spec.startswith("toy:") or spec.startswith("toy-biased:"):
        kind, _, seed_s = spec.partition(":")
        try:
            seed = Seed(int(seed_s))
        except ValueError as exc:
            raise ConfigError(f"bad backend seed in {spec!r}") from exc
        return ToyBackend(ToySurrogateParams.seeded(seed, biased=(kind == "toy-biased")))
    if spec.startswith("proto:"):
        from .proto import ProtoBackend
        return ProtoBackend.from_spec(spec[len("proto:"):])
    raise ConfigError(f"unknown backend spec {spec!r}")
