"""Token-level contrastive scoring and sampling.

Per emitted token the decoder takes one forward pass on the base view
and one on the counterfactual view, filters candidates by the adaptive
plausibility constraint computed from base-view probabilities only, then
scores tokens as (1+alpha)*base_logit - alpha*cf_logit (or the generic
log-prob contrast for the reference rule) and applies the sampling mode:
greedy, nucleus, or self-consistency majority voting.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .compose import CounterfactualView
from .errors import ConfigError, LengthMismatch
from .profiling import PassCounter
from .video import Seed, TokenSequence, VideoTensor

PROFILES = {
    "eventhallusion": (2.6, 0.0036),
    "mvbench": (1.0, 0.5),
    "perception": (1.5, 0.5),
}


@dataclass(frozen=True)
class DecodeConfig:
    alpha: float = 2.6
    beta: float = 0.0036
    lam: float = 1.0
    mode: str = "greedy"          # greedy | nucleus | sc
    nucleus_p: float = 0.9
    sc_samples: int = 5
    sc_inner: str = "nucleus"
    score_rule: str = "macd"      # macd | generic
    max_tokens: int = 8
    temperature: float = 1.0
    seed: Seed = Seed(0)

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must lie in [0, 1]")
        if self.mode not in ("greedy", "nucleus", "sc"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not 0.0 < self.nucleus_p <= 1.0:
            raise ConfigError("nucleus_p must lie in (0, 1]")
        if self.sc_samples < 1:
            raise ConfigError("sc_samples must be >= 1")
        if self.sc_inner not in ("greedy", "nucleus"):
            raise ConfigError(f"sc inner mode must be greedy or nucleus")
        if self.score_rule not in ("macd", "generic"):
            raise ConfigError(f"unknown score rule {self.score_rule!r}")
        if self.max_tokens < 1:
            raise ConfigError("max_tokens must be >= 1")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")

    @staticmethod
    def for_profile(profile: str, **overrides) -> "DecodeConfig":
        if profile not in PROFILES:
            raise ConfigError(f"unknown benchmark profile {profile!r}")
        alpha, beta = PROFILES[profile]
        return DecodeConfig(alpha=alpha, beta=beta, **overrides)

    @staticmethod
    def parse_mode(text: str) -> dict:
        """CLI mode strings: greedy | nucleus:<p> | sc:<n>."""
        if text == "greedy":
            return {"mode": "greedy"}
        if text.startswith("nucleus:"):
            return {"mode": "nucleus", "nucleus_p": float(text.split(":", 1)[1])}
        if text.startswith("sc:"):
            return {"mode": "sc", "sc_samples": int(text.split(":", 1)[1])}
        raise ConfigError(f"unknown mode string {text!r}")


@dataclass
class DecodeRecord:
    steps: list[dict] = field(default_factory=list)
    counters: PassCounter = field(default_factory=PassCounter)
    wall_time_ms: float = 0.0

    def to_json(self) -> dict:
        return {"steps": self.steps, "counters": self.counters.snapshot(),
                "wall_time_ms": self.wall_time_ms}


def macd_score(base_logits: np.ndarray, cf_logits: np.ndarray,
               alpha: float) -> np.ndarray:
    """(1+alpha)*base - alpha*cf, elementwise; no renormalization."""
    base_logits = np.asarray(base_logits, dtype=np.float64)
    cf_logits = np.asarray(cf_logits, dtype=np.float64)
    if base_logits.shape != cf_logits.shape:
        raise LengthMismatch(f"{base_logits.shape} vs {cf_logits.shape}")
    return (1.0 + alpha) * base_logits - alpha * cf_logits


def generic_cd_score(base_logp: np.ndarray, ref_logp: np.ndarray,
                     lam: float) -> np.ndarray:
    """log p_base - lambda * log p_ref (the generic two-view contrast)."""
    base_logp = np.asarray(base_logp, dtype=np.float64)
    ref_logp = np.asarray(ref_logp, dtype=np.float64)
    if base_logp.shape != ref_logp.shape:
        raise LengthMismatch(f"{base_logp.shape} vs {ref_logp.shape}")
    return base_logp - lam * ref_logp


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    return z - np.log(np.exp(z).sum())


def plausibility_head(base_probs: np.ndarray, beta: float) -> np.ndarray:
    """Token ids whose base-view probability reaches beta * max prob.

    beta = 0 keeps every token with positive probability; beta = 1 keeps
    exactly the argmax set. The argmax always qualifies, so the head is
    never empty.
    """
    base_probs = np.asarray(base_probs, dtype=np.float64)
    pmax = base_probs.max()
    if beta == 0.0:
        return np.flatnonzero(base_probs > 0.0)
    return np.flatnonzero(base_probs >= beta * pmax)


def _nucleus_pick(scores: np.ndarray, p: float, temperature: float,
                  rng: np.random.Generator) -> int:
    probs = softmax(scores / temperature)
    order = np.argsort(-probs, kind="stable")  # ties resolved by lowest id
    csum = np.cumsum(probs[order])
    cut = int(np.searchsorted(csum, p, side="left")) + 1
    keep = order[:cut]
    kp = probs[keep] / probs[keep].sum()
    return int(rng.choice(keep, p=kp))


def _decode_once(base: VideoTensor, cf: CounterfactualView, query: TokenSequence,
                 backend, cfg: DecodeConfig, mode: str,
                 rng: np.random.Generator, counter: PassCounter,
                 record: DecodeRecord) -> tuple[int, ...]:
    vocab = backend.capabilities().vocab_size
    prefix: list[int] = []
    for _ in range(cfg.max_tokens):
        pseq = TokenSequence(tuple(prefix), vocab)
        base_logits = backend.logits(base, query, pseq)
        counter.base_forwards += 1
        cf_logits = backend.logits(cf.video, query, pseq)
        counter.cf_forwards += 1

        base_probs = softmax(base_logits)
        head = plausibility_head(base_probs, cfg.beta)
        if cfg.score_rule == "macd":
            scores = macd_score(base_logits, cf_logits, cfg.alpha)
        else:
            scores = generic_cd_score(log_softmax(base_logits),
                                      log_softmax(cf_logits), cfg.lam)
        filtered = np.full(vocab, -np.inf)
        filtered[head] = scores[head]

        if mode == "greedy":
            chosen = int(np.argmax(filtered))  # first max = lowest id
        else:
            chosen = _nucleus_pick(filtered, cfg.nucleus_p, cfg.temperature, rng)
        record.steps.append({
            "base_argmax": int(np.argmax(base_logits)),
            "cf_argmax": int(np.argmax(cf_logits)),
            "plausible": int(head.size),
            "chosen": chosen,
            "score": float(scores[chosen]),
        })
        prefix.append(chosen)
    return tuple(prefix)


def decode(base: VideoTensor, cf: CounterfactualView, query: TokenSequence,
           backend, cfg: DecodeConfig,
           counter: PassCounter | None = None) -> tuple[TokenSequence, DecodeRecord]:
    """Autoregressive contrastive decode; counters tally exactly one base
    and one counterfactual forward per emitted token per sample."""
    query.require_nonempty()
    record = DecodeRecord()
    if counter is None:
        counter = record.counters
    else:
        record.counters = counter
    vocab = backend.capabilities().vocab_size
    rng = cfg.seed.numpy_rng()
    t0 = time.perf_counter()
    if cfg.mode == "sc":
        outcomes = [_decode_once(base, cf, query, backend, cfg, cfg.sc_inner,
                                 rng, counter, record)
                    for _ in range(cfg.sc_samples)]
        votes = Counter(outcomes)
        top = max(votes.values())
        ids = min(seq for seq, n in votes.items() if n == top)
    else:
        ids = _decode_once(base, cf, query, backend, cfg, cfg.mode, rng,
                           counter, record)
    record.wall_time_ms = (time.perf_counter() - t0) * 1e3
    return TokenSequence(ids, vocab), record
