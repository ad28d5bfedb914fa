"""Seeded synthetic benchmark with known ground truth, plus metrics,
bootstrap confidence intervals, McNemar's test, and the experiment runner.

Each synthetic case is a yes/no object-presence probe: a 16x16x4 video
whose "evidence zone" (one pool of the toy scorer's grid) holds either a
bright target block (label yes) or a dim co-occurring object (label no),
against a mid-gray background equal to the render fill value. The toy
scorer's zone weights make the answer causally derivable from zone
brightness, while the biased variant's constant yes-boost makes it
hallucinate on dim-zone cases; masking the zone is what lets the
contrast recover the grounded answer. Detection records cover the zone
object (and any distractor), so the full track->mask->optimize->decode
pipeline runs per case.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .backend import DEFAULT_GRID, TOK_NO, TOK_PROBE, TOK_YES, ZONE_POOL_RC, make_backend
from .compose import ComposeConfig, FrameMaskPolicy
from .decoding import DecodeConfig, decode
from .errors import EmptyInput, MacdError, MissingPrediction
from .optimizer import CounterfactualStrategy, OptimizerConfig, build_counterfactual
from .profiling import PassCounter
from .tracking import Detection, TrackerConfig, build_tracks, validate_frames
from .video import BoundingBox, Seed, TokenSequence, VideoTensor, write_video_tensor

SUITE_T, SUITE_H, SUITE_W = 4, 16, 16
SUITE_VOCAB = 32
BACKGROUND = 0.5
ZONE_CLASS = 1
COOCCUR_CLASS = 2
DISTRACTOR_CLASS = 3
QCLASS_BASE = 8

YES_BRIGHT = (0.80, 0.95)
NO_BRIGHT = (0.05, 0.45)
DISTRACTOR_BRIGHT = (0.55, 0.75)

# blur scaled to the suite's 4px objects (the tracker default targets
# full-size footage)
SUITE_TRACKER = TrackerConfig(blur_sigma=0.5)


def _pool_rect(row: int, col: int) -> tuple[int, int, int, int]:
    gh, gw = DEFAULT_GRID
    r0 = (row * SUITE_H) // gh
    r1 = ((row + 1) * SUITE_H) // gh
    c0 = (col * SUITE_W) // gw
    c1 = ((col + 1) * SUITE_W) // gw
    return r0, r1, c0, c1


@dataclass(frozen=True)
class SyntheticCase:
    case_id: int
    video: VideoTensor
    detections: list[Detection]
    query: TokenSequence
    label: str                  # "yes" | "no"
    case_seed: Seed

    def materialize(self, directory) -> tuple[Path, Path]:
        """Write the case's VTNS tensor and detections JSONL."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        vpath = directory / f"case_{self.case_id:05d}.vtns"
        dpath = directory / f"case_{self.case_id:05d}.jsonl"
        write_video_tensor(self.video, vpath)
        with open(dpath, "w", encoding="utf-8") as fh:
            for d in self.detections:
                fh.write(json.dumps({
                    "frame": d.frame,
                    "bbox": [d.box.x1, d.box.y1, d.box.x2, d.box.y2],
                    "class": d.class_id,
                    "conf": d.confidence,
                }) + "\n")
        return vpath, dpath


def generate_suite(n: int, bias_mix: float = 0.5,
                   seed: Seed = Seed(0)) -> list[SyntheticCase]:
    """Deterministic yes/no probe suite.

    bias_mix is the fraction of cases whose correct answer contradicts
    the biased scorer's constant yes-prior, i.e. the fraction labeled
    "no" (0.5 gives the balanced 50/50 split).
    """
    if n < 1:
        raise EmptyInput("suite size must be >= 1")
    if not 0.0 <= bias_mix <= 1.0:
        raise EmptyInput("bias_mix must lie in [0, 1]")
    n_no = round(n * bias_mix)
    labels = ["no"] * n_no + ["yes"] * (n - n_no)
    order = seed.derive(0xBEEF).numpy_rng().permutation(n)
    labels = [labels[i] for i in order]

    zr0, zr1, zc0, zc1 = _pool_rect(*ZONE_POOL_RC)
    gh, gw = DEFAULT_GRID
    cases = []
    for i in range(n):
        cseed = seed.derive(i + 1)
        rng = cseed.numpy_rng()
        label = labels[i]
        frames = np.full((SUITE_T, SUITE_H, SUITE_W, 1), BACKGROUND, dtype=np.float32)
        lo, hi = YES_BRIGHT if label == "yes" else NO_BRIGHT
        zone_brightness = rng.uniform(lo, hi)
        frames[:, zr0:zr1, zc0:zc1, 0] = zone_brightness
        zone_cls = ZONE_CLASS if label == "yes" else COOCCUR_CLASS
        zone_conf = float(rng.uniform(0.75, 0.95))
        dets = [Detection(f, BoundingBox(zc0, zr0, zc1, zr1), zone_cls, zone_conf)
                for f in range(SUITE_T)]

        if rng.random() < 0.5:
            # one distractor block in a non-zone pool
            while True:
                prc = (int(rng.integers(0, gh)), int(rng.integers(0, gw)))
                if prc != ZONE_POOL_RC:
                    break
            dr0, dr1, dc0, dc1 = _pool_rect(*prc)
            frames[:, dr0:dr1, dc0:dc1, 0] = rng.uniform(*DISTRACTOR_BRIGHT)
            dconf = float(rng.uniform(0.55, 0.9))
            dets += [Detection(f, BoundingBox(dc0, dr0, dc1, dr1),
                               DISTRACTOR_CLASS, dconf) for f in range(SUITE_T)]

        query = TokenSequence((TOK_PROBE, QCLASS_BASE + int(rng.integers(0, 8))),
                              SUITE_VOCAB)
        cases.append(SyntheticCase(case_id=i, video=VideoTensor(frames),
                                   detections=dets, query=query, label=label,
                                   case_seed=cseed))
    return cases


def answer_from_tokens(ids: tuple[int, ...]) -> str:
    if not ids:
        return "invalid"
    if ids[0] == TOK_YES:
        return "yes"
    if ids[0] == TOK_NO:
        return "no"
    return "invalid"


# --- statistics -------------------------------------------------------------

def bootstrap_ci(values, level: float = 0.95, b: int = 10000,
                 seed: Seed = Seed(0)) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of 0/1 outcomes."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise EmptyInput("bootstrap_ci needs at least one value")
    if not 0.0 < level < 1.0:
        raise EmptyInput("level must lie in (0, 1)")
    if b < 100:
        raise EmptyInput("need at least 100 resamples")
    rng = seed.numpy_rng()
    idx = rng.integers(0, arr.size, size=(b, arr.size))
    means = arr[idx].mean(axis=1)
    lo = float(np.quantile(means, (1.0 - level) / 2.0))
    hi = float(np.quantile(means, 1.0 - (1.0 - level) / 2.0))
    mean = float(arr.mean())
    return min(lo, mean), max(hi, mean)


def mcnemar_test(b_only: int, c_only: int) -> float:
    """Two-sided McNemar p-value on discordant counts.

    Exact binomial for b+c < 25, chi-square with continuity correction
    otherwise. b = c = 0 returns 1.0 by convention (flagged).
    """
    if b_only < 0 or c_only < 0:
        raise EmptyInput("discordant counts must be >= 0")
    n = b_only + c_only
    if n == 0:
        warnings.warn("no discordant pairs; p = 1.0 by convention",
                      category=UserWarning, stacklevel=2)
        return 1.0
    if n < 25:
        k = min(b_only, c_only)
        tail = sum(math.comb(n, i) for i in range(k + 1))
        return min(1.0, 2.0 * tail / (2.0 ** n))
    chi2 = max(0.0, abs(b_only - c_only) - 1.0) ** 2 / n
    return math.erfc(math.sqrt(chi2 / 2.0))


# --- metrics ----------------------------------------------------------------

@dataclass
class MetricsReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    n_cases: int = 0
    n_failed: int = 0
    n_invalid: int = 0
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    accuracy: float | None = None
    false_yes_rate_absent: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    ci_level: float = 0.95
    mcnemar_p: float | None = None
    latency_ms: dict = field(default_factory=dict)
    pass_counters: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return dict(self.__dict__)


def score_run(predictions, ci_level: float = 0.95, bootstrap_b: int = 10000,
              seed: Seed = Seed(0)) -> MetricsReport:
    """Confusion counts and derived metrics from (case, answer) pairs.

    A "yes" on a yes-label is a TP; any non-yes answer on a yes-label is
    an FN (invalid answers never score as correct). false_yes_rate_absent
    is FP over no-labeled cases only.
    """
    preds = list(predictions)
    if not preds:
        raise MissingPrediction("no predictions to score")
    rep = MetricsReport()
    correct_flags = []
    for case, answer in preds:
        if answer not in ("yes", "no", "invalid"):
            raise MissingPrediction(f"case {case.case_id}: bad answer {answer!r}")
        if answer == "invalid":
            rep.n_invalid += 1
        if case.label == "yes":
            if answer == "yes":
                rep.tp += 1
            else:
                rep.fn += 1
        else:
            if answer == "yes":
                rep.fp += 1
            else:
                rep.tn += 1
        correct_flags.append(1 if answer == case.label else 0)
    rep.n_cases = len(preds)
    total = rep.tp + rep.fp + rep.fn + rep.tn
    rep.accuracy = (rep.tp + rep.tn) / total
    if rep.tp + rep.fp > 0:
        rep.precision = rep.tp / (rep.tp + rep.fp)
    if rep.tp + rep.fn > 0:
        rep.recall = rep.tp / (rep.tp + rep.fn)
    if rep.precision is not None and rep.recall is not None \
            and (rep.precision + rep.recall) > 0:
        rep.f1 = 2 * rep.precision * rep.recall / (rep.precision + rep.recall)
    n_absent = rep.fp + rep.tn
    if n_absent > 0:
        rep.false_yes_rate_absent = rep.fp / n_absent
    rep.ci_level = ci_level
    rep.ci_low, rep.ci_high = bootstrap_ci(correct_flags, ci_level, bootstrap_b,
                                           seed)
    return rep


# --- experiment runner -------------------------------------------------------

@dataclass(frozen=True)
class RunSettings:
    strategy: CounterfactualStrategy = CounterfactualStrategy()
    decode: DecodeConfig = field(default_factory=lambda: DecodeConfig(max_tokens=1))
    tracker: TrackerConfig = SUITE_TRACKER
    optimizer: OptimizerConfig = OptimizerConfig()
    compose: ComposeConfig = field(default_factory=ComposeConfig)
    jobs: int = 1
    bootstrap_b: int = 2000
    report_seed: Seed = Seed(7)


def _run_case(case: SyntheticCase, backend, st: RunSettings) -> dict:
    t0 = time.perf_counter()
    counter = PassCounter()
    try:
        validate_frames(case.detections, case.video.n_frames)
        tracks = build_tracks(case.detections, case.video.shape[1:3], st.tracker)
        strategy = replace(st.strategy, noise_seed=case.case_seed.derive(2))
        view, prov = build_counterfactual(
            strategy, case.video, tracks, case.query, backend, st.optimizer,
            st.compose, counter)
        dcfg = replace(st.decode, seed=case.case_seed.derive(3))
        out, record = decode(case.video, view, case.query, backend, dcfg, counter)
        answer = answer_from_tokens(out.ids)
        return {"case_id": case.case_id, "label": case.label, "answer": answer,
                "correct": int(answer == case.label), "failed": False,
                "tokens": list(out.ids), "counters": counter.snapshot(),
                "strategy": prov.get("strategy"),
                "wall_ms": (time.perf_counter() - t0) * 1e3}
    except MacdError as exc:
        return {"case_id": case.case_id, "label": case.label, "answer": None,
                "correct": 0, "failed": True, "error": str(exc),
                "tokens": [], "counters": counter.snapshot(),
                "strategy": st.strategy.kind,
                "wall_ms": (time.perf_counter() - t0) * 1e3}


def run_experiment(suite: list[SyntheticCase], backend_spec: str,
                   settings: RunSettings) -> dict:
    """Per-case parse->track->counterfactual->decode pipeline with
    deterministic aggregation (case order fixes the fold, so --jobs
    does not change the report)."""
    backend = make_backend(backend_spec)
    t0 = time.perf_counter()
    if settings.jobs > 1:
        with ThreadPoolExecutor(max_workers=settings.jobs) as pool:
            results = list(pool.map(lambda c: _run_case(c, backend, settings), suite))
    else:
        results = [_run_case(c, backend, settings) for c in suite]
    results.sort(key=lambda r: r["case_id"])

    ok = [r for r in results if not r["failed"]]
    case_by_id = {c.case_id: c for c in suite}
    rep = score_run([(case_by_id[r["case_id"]], r["answer"]) for r in ok],
                    bootstrap_b=settings.bootstrap_b, seed=settings.report_seed) \
        if ok else MetricsReport(n_cases=0)
    rep.n_failed = len(results) - len(ok)

    total = PassCounter()
    for r in results:
        total.base_forwards += r["counters"]["base_forwards"]
        total.cf_forwards += r["counters"]["cf_forwards"]
        total.grad_passes += r["counters"]["grad_passes"]
    rep.pass_counters = total.snapshot()
    walls = [r["wall_ms"] for r in results]
    rep.latency_ms = {
        "mean": float(np.mean(walls)) if walls else 0.0,
        "min": float(np.min(walls)) if walls else 0.0,
        "max": float(np.max(walls)) if walls else 0.0,
        "total": (time.perf_counter() - t0) * 1e3,
    }

    report = rep.to_json()
    report["per_case"] = results
    report["config"] = {
        "backend": backend_spec,
        "strategy": settings.strategy.kind,
        "decode": {"alpha": settings.decode.alpha, "beta": settings.decode.beta,
                   "lambda": settings.decode.lam, "mode": settings.decode.mode,
                   "max_tokens": settings.decode.max_tokens,
                   "temperature": settings.decode.temperature,
                   "score_rule": settings.decode.score_rule},
        "tracker": dict(settings.tracker.__dict__),
        "optimizer": dict(settings.optimizer.__dict__),
        "compose": {"fusion": settings.compose.fusion,
                    "render": settings.compose.render,
                    "policy": settings.compose.policy.mode,
                    "fill": settings.compose.fill},
        "jobs": settings.jobs,
        "suite_size": len(suite),
    }
    return report


def strip_timing(report: dict) -> dict:
    """Remove wall-clock fields for byte-level determinism comparisons."""
    out = json.loads(json.dumps(report))
    out.pop("latency_ms", None)
    for case in out.get("per_case", []):
        case.pop("wall_ms", None)
    return out


def compare_reports(report_a: dict, report_b: dict) -> dict:
    """Paired comparison: discordant counts and McNemar p (a vs b)."""
    per_a = {c["case_id"]: c["correct"] for c in report_a["per_case"] if not c["failed"]}
    per_b = {c["case_id"]: c["correct"] for c in report_b["per_case"] if not c["failed"]}
    shared = sorted(set(per_a) & set(per_b))
    a_only = sum(1 for i in shared if per_a[i] and not per_b[i])
    b_only = sum(1 for i in shared if per_b[i] and not per_a[i])
    return {"n_paired": len(shared), "a_only_correct": a_only,
            "b_only_correct": b_only, "mcnemar_p": mcnemar_test(a_only, b_only)}
