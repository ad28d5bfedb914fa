"""Command-line entry point.

Subcommands: decode, eval, ablate, grid, profile, gen-suite. Options
resolve as CLI flag > config-file key (flat JSON with dotted keys) >
built-in default; the MACD_SEED environment variable overrides default
seeds wherever no explicit seed was given. Exit codes: 2 config error,
3 input error, 4 backend error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .backend import make_backend
from .compose import ComposeConfig, FrameMaskPolicy
from .decoding import PROFILES, DecodeConfig, decode
from .errors import BackendError, ConfigError, InputError, MacdError
from .harness import (
    RunSettings,
    SUITE_TRACKER,
    compare_reports,
    generate_suite,
    run_experiment,
)
from .optimizer import STRATEGIES, CounterfactualStrategy, OptimizerConfig, build_counterfactual
from .profiling import PassCounter
from .tracking import TrackerConfig, build_tracks, parse_detections, validate_frames
from .video import Seed, TokenSequence, read_video_tensor

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_BACKEND = 4

_KNOWN_KEYS = {
    "backend", "strategy", "jobs", "format", "preset",
    "suite.n", "suite.bias_mix", "suite.seed",
    "decode.alpha", "decode.beta", "decode.lambda", "decode.mode",
    "decode.max_tokens", "decode.temperature", "decode.seed", "decode.score_rule",
    "optimizer.steps", "optimizer.eta", "optimizer.r_init", "optimizer.r0",
    "optimizer.tie_eps",
    "tracker.iou_gate", "tracker.motion_gate", "tracker.max_gap",
    "tracker.min_length", "tracker.min_mean_conf", "tracker.blur_sigma",
    "tracker.det_threshold",
    "compose.fusion", "compose.render", "compose.fill", "compose.policy",
    "compose.keep_stride", "compose.subset",
}


class Resolver:
    """flag > config file > default, with unknown config keys rejected."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.cfg = {}
        path = getattr(args, "config", None)
        if path:
            try:
                with open(path, "r", encoding="utf-8") as fh:
                    self.cfg = json.load(fh)
            except OSError as exc:
                raise InputError(f"cannot read config file: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}") from exc
            unknown = sorted(set(self.cfg) - _KNOWN_KEYS)
            if unknown:
                raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    def get(self, flag: str, key: str, default, cast=None):
        v = getattr(self.args, flag, None)
        if v is None:
            v = self.cfg.get(key)
        if v is None:
            v = default
        if v is not None and cast is not None:
            try:
                v = cast(v)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {v!r}") from exc
        return v


def _env_seed(default: int) -> int:
    raw = os.environ.get("MACD_SEED")
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"MACD_SEED must be an integer, got {raw!r}") from exc


def _parse_ids(text: str, vocab: int) -> TokenSequence:
    if text.startswith("@"):
        try:
            text = Path(text[1:]).read_text(encoding="utf-8").strip()
        except OSError as exc:
            raise InputError(f"cannot read query file: {exc}") from exc
    try:
        ids = tuple(int(t) for t in text.replace(" ", "").split(",") if t)
    except ValueError as exc:
        raise InputError(f"query must be comma-separated token ids: {exc}") from exc
    return TokenSequence(ids, vocab)


def _decode_config(res: Resolver) -> DecodeConfig:
    profile = res.get("preset", "preset", None)
    if profile is not None and profile not in PROFILES:
        raise ConfigError(f"unknown benchmark profile {profile!r}")
    p_alpha, p_beta = PROFILES[profile] if profile else (2.6, 0.0036)
    mode_text = res.get("mode", "decode.mode", "greedy", str)
    mode_kw = DecodeConfig.parse_mode(mode_text)
    return DecodeConfig(
        alpha=res.get("alpha", "decode.alpha", p_alpha, float),
        beta=res.get("beta", "decode.beta", p_beta, float),
        lam=res.get("lam", "decode.lambda", 1.0, float),
        max_tokens=res.get("max_tokens", "decode.max_tokens", 1, int),
        temperature=res.get("temperature", "decode.temperature", 1.0, float),
        seed=Seed(res.get("seed", "decode.seed", _env_seed(0), int)),
        score_rule=res.get("score_rule", "decode.score_rule", "macd", str),
        **mode_kw,
    )


def _optimizer_config(res: Resolver) -> OptimizerConfig:
    return OptimizerConfig(
        r_init=res.get("r_init", "optimizer.r_init", 0.75, float),
        eta=res.get("eta", "optimizer.eta", 0.01, float),
        steps=res.get("steps", "optimizer.steps", 1, int),
        r0=res.get("r0", "optimizer.r0", 0.75, float),
        tie_eps=res.get("tie_eps", "optimizer.tie_eps", 1e-9, float),
    )


def _tracker_config(res: Resolver, default: TrackerConfig) -> TrackerConfig:
    return TrackerConfig(
        iou_gate=res.get("iou_gate", "tracker.iou_gate", default.iou_gate, float),
        motion_gate=res.get("motion_gate", "tracker.motion_gate",
                            default.motion_gate, float),
        max_gap=res.get("max_gap", "tracker.max_gap", default.max_gap, int),
        min_length=res.get("min_length", "tracker.min_length",
                           default.min_length, int),
        min_mean_conf=res.get("min_mean_conf", "tracker.min_mean_conf",
                              default.min_mean_conf, float),
        blur_sigma=res.get("blur_sigma", "tracker.blur_sigma",
                           default.blur_sigma, float),
        det_threshold=res.get("det_threshold", "tracker.det_threshold",
                              default.det_threshold, float),
    )


def _compose_config(res: Resolver) -> ComposeConfig:
    subset = res.get("subset", "compose.subset", "", str)
    policy = FrameMaskPolicy(
        mode=res.get("policy", "compose.policy", "none", str),
        subset=tuple(int(s) for s in subset.split(",") if s),
        keep_stride=res.get("keep_stride", "compose.keep_stride", 2, int),
    )
    return ComposeConfig(
        fusion=res.get("fusion", "compose.fusion", "max", str),
        render=res.get("render", "compose.render", "blend", str),
        policy=policy,
        fill=res.get("fill", "compose.fill", 0.5, float),
    )


def _settings(res: Resolver, strategy_kind: str) -> RunSettings:
    return RunSettings(
        strategy=CounterfactualStrategy(kind=strategy_kind),
        decode=_decode_config(res),
        tracker=_tracker_config(res, SUITE_TRACKER),
        optimizer=_optimizer_config(res),
        compose=_compose_config(res),
        jobs=res.get("jobs", "jobs", 1, int),
    )


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


_CSV_FIELDS = ["part", "strategy", "alpha", "beta", "steps", "fusion",
               "accuracy", "precision", "recall", "f1",
               "false_yes_rate_absent", "ci_low", "ci_high", "mcnemar_p",
               "base_forwards", "cf_forwards", "grad_passes", "n_failed"]


def _csv_row(report: dict, **extra) -> dict:
    row = {k: "" for k in _CSV_FIELDS}
    for k in ("accuracy", "precision", "recall", "f1", "false_yes_rate_absent",
              "ci_low", "ci_high", "mcnemar_p", "n_failed"):
        v = report.get(k)
        row[k] = "" if v is None else v
    row.update(report.get("pass_counters", {}))
    cfgd = report.get("config", {}).get("decode", {})
    row["alpha"] = cfgd.get("alpha", "")
    row["beta"] = cfgd.get("beta", "")
    row["strategy"] = report.get("config", {}).get("strategy", "")
    row["steps"] = report.get("config", {}).get("optimizer", {}).get("steps", "")
    row["fusion"] = report.get("config", {}).get("compose", {}).get("fusion", "")
    row.update(extra)
    return row


def _write_rows(path: str, rows: list[dict], fmt: str) -> None:
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: row.get(k, "") for k in _CSV_FIELDS})
    else:
        _write_json(path, {"rows": rows})


def _require(args, *names) -> None:
    for name in names:
        if getattr(args, name.replace("-", "_"), None) is None:
            raise InputError(f"missing required flag --{name}")


# --- subcommands --------------------------------------------------------------


def cmd_decode(args) -> int:
    res = Resolver(args)
    _require(args, "video", "detections", "query")
    backend = make_backend(res.get("backend", "backend", "toy:0", str))
    vocab = backend.capabilities().vocab_size
    video = read_video_tensor(args.video)
    query = _parse_ids(args.query, vocab)
    tracker = _tracker_config(res, TrackerConfig())
    dets = parse_detections(args.detections, tracker)
    validate_frames(dets, video.n_frames)
    tracks = build_tracks(dets, video.shape[1:3], tracker)

    strategy = CounterfactualStrategy(
        kind=res.get("strategy", "strategy", "macd", str),
        noise_seed=Seed(_env_seed(0)))
    counter = PassCounter()
    view, prov = build_counterfactual(strategy, video, tracks, query, backend,
                                      _optimizer_config(res), _compose_config(res),
                                      counter)
    out, record = decode(video, view, query, backend, _decode_config(res), counter)
    report = {
        "answer_tokens": list(out.ids),
        "counters": counter.snapshot(),
        "provenance": prov,
        "n_tracks": len(tracks),
    }
    if args.profile_record:
        report["decode_record"] = record.to_json()
    _write_json(args.report, report)
    print(",".join(str(i) for i in out.ids))
    return EXIT_OK


def _suite_from(res: Resolver):
    n = res.get("n", "suite.n", 200, int)
    bias_mix = res.get("bias_mix", "suite.bias_mix", 0.5, float)
    seed = Seed(res.get("suite_seed", "suite.seed", _env_seed(0), int))
    return generate_suite(n, bias_mix, seed)


def cmd_eval(args) -> int:
    res = Resolver(args)
    suite = _suite_from(res)
    backend_spec = res.get("backend", "backend", "toy-biased:0", str)
    kinds = [s for s in res.get("strategies", "strategy", "macd", str).split(",") if s]
    reports, rows = [], []
    for kind in kinds:
        rep = run_experiment(suite, backend_spec, _settings(res, kind))
        if reports:
            rep["mcnemar_p"] = compare_reports(rep, reports[0])["mcnemar_p"]
        reports.append(rep)
        rows.append(_csv_row(rep))
    fmt = res.get("format", "format", "json", str)
    if fmt == "csv":
        _write_rows(args.report, rows, "csv")
    else:
        _write_json(args.report, reports[0] if len(reports) == 1 else
                    {"runs": reports})
    for kind, rep in zip(kinds, reports):
        print(f"{kind}: accuracy={rep['accuracy']:.4f} "
              f"false_yes={rep['false_yes_rate_absent']} "
              f"ci=({rep['ci_low']:.4f},{rep['ci_high']:.4f})")
    return EXIT_OK


def cmd_ablate(args) -> int:
    res = Resolver(args)
    suite = _suite_from(res)
    backend_spec = res.get("backend", "backend", "toy-biased:0", str)
    kinds = [s for s in (args.strategies or "macd,fixed,noframe,noise").split(",") if s]
    for k in kinds:
        if k not in STRATEGIES:
            raise ConfigError(f"unknown strategy {k!r}")
    rows, runs = [], []
    for kind in kinds:
        rep = run_experiment(suite, backend_spec, _settings(res, kind))
        runs.append(rep)
        rows.append(_csv_row(rep))
        print(f"{kind:16s} acc={rep['accuracy']:.4f} "
              f"f1={rep['f1'] if rep['f1'] is None else round(rep['f1'], 4)} "
              f"false_yes={rep['false_yes_rate_absent']}")
    fmt = res.get("format", "format", "json", str)
    _write_rows(args.report, rows, fmt) if fmt == "csv" else \
        _write_json(args.report, {"runs": runs})
    return EXIT_OK


def cmd_grid(args) -> int:
    res = Resolver(args)
    suite = _suite_from(res)
    backend_spec = res.get("backend", "backend", "toy-biased:0", str)
    base = _settings(res, res.get("strategy", "strategy", "macd", str))
    alphas = [float(a) for a in (args.alphas or "").split(",") if a]
    betas = [float(b) for b in (args.betas or "").split(",") if b]
    if not alphas and not betas:
        raise ConfigError("grid needs --alphas and/or --betas")
    rows, runs = [], []
    if alphas:
        beta = base.decode.beta
        for a in alphas:  # part I: vary alpha at fixed beta
            st = replace(base, decode=replace(base.decode, alpha=a, beta=beta))
            rep = run_experiment(suite, backend_spec, st)
            runs.append(rep)
            rows.append(_csv_row(rep, part="alpha"))
    if betas:
        alpha = base.decode.alpha
        for b in betas:  # part II: vary beta at fixed alpha
            st = replace(base, decode=replace(base.decode, alpha=alpha, beta=b))
            rep = run_experiment(suite, backend_spec, st)
            runs.append(rep)
            rows.append(_csv_row(rep, part="beta"))
    fmt = res.get("format", "format", "csv", str)
    _write_rows(args.report, rows, fmt) if fmt == "csv" else \
        _write_json(args.report, {"runs": runs})
    for row in rows:
        print(f"part={row['part']} alpha={row['alpha']} beta={row['beta']} "
              f"accuracy={row['accuracy']}")
    return EXIT_OK


def cmd_profile(args) -> int:
    res = Resolver(args)
    suite = _suite_from(res)
    backend_spec = res.get("backend", "backend", "toy-biased:0", str)
    steps_list = [int(s) for s in (args.steps_list or "0,1,3").split(",") if s != ""]
    base = _settings(res, res.get("strategy", "strategy", "macd", str))
    rows, runs = [], []
    for steps in steps_list:
        st = replace(base, optimizer=replace(base.optimizer, steps=steps))
        rep = run_experiment(suite, backend_spec, st)
        runs.append(rep)
        row = _csv_row(rep)
        row["steps"] = steps
        rows.append(row)
        lat = rep["latency_ms"]
        print(f"steps={steps} accuracy={rep['accuracy']:.4f} "
              f"grad_passes={rep['pass_counters']['grad_passes']} "
              f"mean_latency_ms={lat['mean']:.3f}")
    fmt = res.get("format", "format", "json", str)
    _write_rows(args.report, rows, fmt) if fmt == "csv" else \
        _write_json(args.report, {"runs": runs})
    return EXIT_OK


def cmd_gen_suite(args) -> int:
    res = Resolver(args)
    suite = _suite_from(res)
    outdir = Path(args.out)
    manifest = []
    for case in suite:
        vpath, dpath = case.materialize(outdir)
        manifest.append({"case_id": case.case_id, "label": case.label,
                         "query": list(case.query.ids),
                         "video": vpath.name, "detections": dpath.name})
    _write_json(str(outdir / "manifest.json"), {"cases": manifest})
    print(f"wrote {len(suite)} cases to {outdir}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flat dotted keys)")
    p.add_argument("--backend", help="toy:<seed> | toy-biased:<seed> | proto:<addr>")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lam", "--lambda", dest="lam", type=float)
    p.add_argument("--mode", help="greedy | nucleus:<p> | sc:<n>")
    p.add_argument("--max-tokens", dest="max_tokens", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--score-rule", dest="score_rule", choices=["macd", "generic"])
    p.add_argument("--preset", dest="preset", choices=sorted(PROFILES),
                   help="benchmark profile presetting alpha/beta")
    p.add_argument("--steps", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--r-init", dest="r_init", type=float)
    p.add_argument("--r0", type=float)
    p.add_argument("--tie-eps", dest="tie_eps", type=float)
    p.add_argument("--fusion", choices=["max", "confnorm", "avg"])
    p.add_argument("--render", choices=["blend", "addclamp"])
    p.add_argument("--policy", choices=["trainable", "subset", "none", "extract"])
    p.add_argument("--subset")
    p.add_argument("--keep-stride", dest="keep_stride", type=int)
    p.add_argument("--fill", type=float)
    p.add_argument("--iou-gate", dest="iou_gate", type=float)
    p.add_argument("--motion-gate", dest="motion_gate", type=float)
    p.add_argument("--max-gap", dest="max_gap", type=int)
    p.add_argument("--min-length", dest="min_length", type=int)
    p.add_argument("--min-mean-conf", dest="min_mean_conf", type=float)
    p.add_argument("--blur-sigma", dest="blur_sigma", type=float)
    p.add_argument("--det-threshold", dest="det_threshold", type=float)
    p.add_argument("--jobs", type=int)
    p.add_argument("--format", choices=["json", "csv"])


def _add_suite(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int)
    p.add_argument("--bias-mix", dest="bias_mix", type=float)
    p.add_argument("--suite-seed", dest="suite_seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="macd",
                                 description="counterfactual-mask contrastive "
                                             "decoding engine")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decode", help="decode one video/query pair")
    p.add_argument("--video")
    p.add_argument("--detections")
    p.add_argument("--query", help="comma-separated token ids or @file")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--report", default="macd_decode_report.json")
    p.add_argument("--profile", dest="profile_record", action="store_true",
                   help="include per-step decode records in the report")
    _add_common(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="run the synthetic suite")
    p.add_argument("--strategies", help="comma list; first is the reference")
    p.add_argument("--report", default="macd_eval_report.json")
    _add_suite(p)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="strategy ablation table")
    p.add_argument("--strategies")
    p.add_argument("--report", default="macd_ablate_report.json")
    _add_suite(p)
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grid", help="alpha/beta sweep")
    p.add_argument("--alphas")
    p.add_argument("--betas")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--report", default="macd_grid_report.csv")
    _add_suite(p)
    _add_common(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("profile", help="step-count latency/pass profiling")
    p.add_argument("--steps-list", dest="steps_list",
                   help="comma list of optimization step counts")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--report", default="macd_profile_report.json")
    _add_suite(p)
    _add_common(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("gen-suite", help="materialize suite cases to disk")
    p.add_argument("--out", required=True)
    _add_suite(p)
    p.add_argument("--config")
    p.set_defaults(func=cmd_gen_suite)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (InputError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except MacdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
