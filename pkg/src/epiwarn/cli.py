"""Command-line orchestration for panel experiments.

Subcommands: ``synth`` (emit a synthetic panel), ``detect`` (run one
detector), ``select`` (replicated forward selection with per-replicate
checkpoints), ``evaluate`` (model comparison), ``sweep`` (parameter grids).
Exit codes: 0 success, 1 runtime failure, 2 usage/validation problem.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import baselines, calibrate, evaluate, pipeline
from .config import ExperimentConfig, load_config
from .events import build_windows, detect_events, write_events_csv
from .mewma import DetectorConfig, run_scan, estimate_null, write_trace_csv
from .panel import (
    SyntheticPanelSpec,
    generate_synthetic,
    load_panel_from_manifest,
    write_panel,
)
from .selection import SelectionStep, SelectionTrace, aggregate_replicates, make_folds
from .selection import write_aggregate_csv, write_traces_csv


class UsageError(Exception):
    """Bad user input that argparse cannot catch itself."""


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epiwarn",
        description="Multivariate EWMA early-warning experiments on weekly panels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic seasonal panel")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seasons", type=int, default=6)
    p.add_argument("--weeks-per-season", type=int, default=52)
    p.add_argument("--baseline", type=float, default=0.8)
    p.add_argument("--peak", type=float, default=4.0)
    p.add_argument("--jitter", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--predictors", type=int, default=5)
    p.add_argument("--lead", type=int, default=3)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--start", default="2010-W01")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("detect", help="run one detector and write its trace")
    p.add_argument("--config", required=True)
    p.add_argument("--subset", help="comma-separated candidate names for a MEWMA run")
    p.add_argument("--baseline", dest="baseline_spec",
                   help="baseline detector, e.g. week:34 or rise:4")
    p.add_argument("--lam", type=float, help="explicit smoothing parameter")
    p.add_argument("--h", type=float, help="explicit alarm threshold")
    p.add_argument("--out")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("select", help="replicated forward feature selection")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("evaluate", help="compare optimized and baseline models")
    p.add_argument("--config", required=True)
    p.add_argument("--models",
                   default="optimized,week-trigger,rise-trigger,univariate-gold")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="grid experiments along one axis")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", required=True,
                   choices=["epsilon", "window", "atfs", "train"])
    p.add_argument("--values", required=True,
                   help="comma-separated grid, train axis takes LENGTH:GAP pairs")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    return parser


def _prepare_out(config: ExperimentConfig, command: str, override) -> Path:
    out = config.output_dir(command, override)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_resolved.txt").write_text(config.resolved_text())
    return out


def cmd_synth(args) -> int:
    spec = SyntheticPanelSpec(
        seasons=args.seasons,
        weeks_per_season=args.weeks_per_season,
        baseline_level=args.baseline,
        peak_height=args.peak,
        peak_week_jitter=args.jitter,
        noise_scale=args.noise,
        predictor_count=args.predictors,
        predictor_lead=args.lead,
        rng_seed=args.seed,
        start_week=args.start,
    )
    manifest = write_panel(generate_synthetic(spec), args.out)
    print(manifest)
    return 0


def _parse_baseline_spec(text: str):
    kind, _, param = text.partition(":")
    if kind not in ("week", "rise") or not param:
        raise UsageError(f"bad baseline spec {text!r}; expected week:N or rise:N")
    try:
        value = int(param)
    except ValueError:
        raise UsageError(f"bad baseline parameter {param!r}; expected an integer") from None
    return kind, value


def cmd_detect(args) -> int:
    config = load_config(args.config)
    panel = load_panel_from_manifest(config.manifest)
    if bool(args.subset) == bool(args.baseline_spec):
        raise UsageError("pass exactly one of --subset or --baseline")

    events = detect_events(panel.gold, config.epsilon, config.min_duration)
    windows = build_windows(events, config.window, config.lead, panel.gold)
    out = _prepare_out(config, "detect", args.out)

    if args.baseline_spec:
        kind, param = _parse_baseline_spec(args.baseline_spec)
        try:
            trace = baselines._trace_for(panel, kind, param)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        label = f"{kind}-trigger"
    else:
        subset = tuple(s.strip() for s in args.subset.split(",") if s.strip())
        scan_panel = panel.with_gold_candidate()
        known = scan_panel.candidate_names()
        for name in subset:
            if name not in known:
                raise UsageError(f"unknown candidate series {name!r}")
        if (args.lam is None) != (args.h is None):
            raise UsageError("pass --lam and --h together, or neither")
        null = estimate_null(scan_panel, events, subset)
        if args.lam is not None:
            trace = run_scan(scan_panel, null, DetectorConfig(subset, args.lam, args.h))
        else:
            curve: list = []
            point = calibrate.optimize_params(
                scan_panel, events, windows, subset, config.atfs,
                config.lambda_grid, sims=config.sims, seed=config.seed,
                null=null, curve=curve,
            )
            calibrate.write_calibration_csv(curve, out / "calibration.csv")
            trace = run_scan(scan_panel, null, DetectorConfig(subset, point.lam, point.h))
        label = "mewma"

    write_trace_csv(trace, panel.axis, out / f"{label}_trace.csv")
    write_events_csv(windows, panel.axis, out / "events.csv")
    if len(events):
        report = evaluate.score(trace, windows)
        leads = None
        if config.reporting_threshold >= config.epsilon:
            leads = evaluate.lead_vs_threshold(
                trace, panel.gold, config.reporting_threshold, events, windows
            )
        evaluate.write_event_report_csv(report, leads, out / "event_report.csv")
        evaluate.write_summary_csv(report, out / "summary.csv")
    print(out)
    return 0


def _trace_to_json(trace: SelectionTrace) -> dict:
    return {
        "stop_reason": trace.stop_reason,
        "steps": [
            {
                "chosen": s.chosen,
                "score": s.score,
                "candidate_scores": [[n, v] for n, v in s.candidate_scores],
            }
            for s in trace.steps
        ],
    }


def _trace_from_json(payload: dict) -> SelectionTrace:
    steps = tuple(
        SelectionStep(
            chosen=s["chosen"],
            score=s["score"],
            candidate_scores=tuple((n, v) for n, v in s["candidate_scores"]),
        )
        for s in payload["steps"]
    )
    return SelectionTrace(steps=steps, stop_reason=payload["stop_reason"])


def _replicate_params(config: ExperimentConfig) -> dict:
    return {
        "epsilon": config.epsilon,
        "min_duration": config.min_duration,
        "window": config.window,
        "lead": config.lead,
        "phi": config.atfs,
        "sims": config.sims,
        "lambda_grid": config.lambda_grid,
        "k_max": config.k_max,
        "min_improvement": config.min_improvement,
    }


def _run_replicate(manifest: Path, params: dict, held_out: int, seed: int) -> SelectionTrace:
    """Worker entry point: everything rebuilt from paths so it pickles cheaply."""
    panel = load_panel_from_manifest(manifest)
    events = detect_events(panel.gold, params["epsilon"], params["min_duration"])
    folds = make_folds(events, held_out, panel.n_weeks)
    return pipeline.run_selection(
        panel,
        panel.candidate_names(),
        folds,
        epsilon=params["epsilon"],
        min_duration=params["min_duration"],
        window=params["window"],
        lead=params["lead"],
        phi=params["phi"],
        sims=params["sims"],
        lambda_grid=params["lambda_grid"],
        k_max=params["k_max"],
        replicates=1,
        seed=seed,
        min_improvement=params["min_improvement"],
    )[0]


def cmd_select(args) -> int:
    config = load_config(args.config)
    out = _prepare_out(config, "select", args.out)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    fingerprint = config.fingerprint()
    params = _replicate_params(config)

    traces: dict[int, SelectionTrace] = {}
    pending: list[int] = []
    for r in range(config.replicates):
        path = ckpt_dir / f"replicate_{r:03d}.json"
        if path.exists():
            payload = json.loads(path.read_text())
            if payload.get("fingerprint") == fingerprint:
                traces[r] = _trace_from_json(payload)
                continue
        pending.append(r)

    def _store(r: int, trace: SelectionTrace) -> None:
        traces[r] = trace
        payload = {"fingerprint": fingerprint, "replicate": r, **_trace_to_json(trace)}
        path = ckpt_dir / f"replicate_{r:03d}.json"
        path.write_text(json.dumps(payload, sort_keys=True))

    workers = max(1, min(args.workers, len(pending) or 1))
    if workers == 1 or len(pending) <= 1:
        for r in pending:
            _store(r, _run_replicate(config.manifest, params, config.held_out, config.seed + r))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                r: pool.submit(
                    _run_replicate, config.manifest, params, config.held_out, config.seed + r
                )
                for r in pending
            }
            for r, fut in futures.items():
                _store(r, fut.result())

    ordered = [traces[r] for r in range(config.replicates)]
    aggregate = aggregate_replicates(ordered, config.k_max)
    write_traces_csv(ordered, out / "selection_trace.csv")
    write_aggregate_csv(aggregate, out / "selection_aggregate.csv")
    print(out)
    return 0


def cmd_evaluate(args) -> int:
    config = load_config(args.config)
    panel = load_panel_from_manifest(config.manifest)
    model_names = [m.strip() for m in args.models.split(",") if m.strip()]
    known = {"optimized", "week-trigger", "rise-trigger", "univariate-gold"}
    for m in model_names:
        if m not in known:
            raise UsageError(f"unknown model {m!r}; choose from {sorted(known)}")

    events = detect_events(panel.gold, config.epsilon, config.min_duration)
    if len(events) < 2:
        raise ValueError(f"found {len(events)} event(s); comparison needs >= 2")
    windows = build_windows(events, config.window, config.lead, panel.gold)
    compare_folds = make_folds(events, 2 if len(events) > 2 else 1, panel.n_weeks)

    results = []
    for m in model_names:
        if m == "optimized":
            select_folds = make_folds(events, config.held_out, panel.n_weeks)
            traces = pipeline.run_selection(
                panel, panel.candidate_names(), select_folds,
                epsilon=config.epsilon, min_duration=config.min_duration,
                window=config.window, lead=config.lead, phi=config.atfs,
                sims=config.sims, lambda_grid=config.lambda_grid,
                k_max=config.k_max, replicates=config.replicates,
                seed=config.seed, min_improvement=config.min_improvement,
            )
            subset = aggregate_replicates(traces, config.k_max).selected()[: config.k_max]
            results.append(
                pipeline.evaluate_mewma_cv(
                    panel, subset, events, windows, compare_folds, config.atfs,
                    sims=config.sims, lambda_grid=config.lambda_grid,
                    seed=config.seed, reporting_threshold=config.reporting_threshold,
                    name="optimized",
                )
            )
        elif m == "univariate-gold":
            gpanel = panel.with_gold_candidate()
            results.append(
                pipeline.evaluate_mewma_cv(
                    gpanel, (gpanel.gold.name,), events, windows, compare_folds,
                    config.atfs, sims=config.sims, lambda_grid=config.lambda_grid,
                    seed=config.seed, reporting_threshold=config.reporting_threshold,
                    name="univariate-gold",
                )
            )
        elif m == "week-trigger":
            results.append(
                pipeline.evaluate_baseline_cv(
                    panel, "week", range(1, 54), events, windows, compare_folds,
                    config.reporting_threshold,
                )
            )
        else:
            results.append(
                pipeline.evaluate_baseline_cv(
                    panel, "rise", range(2, 21), events, windows, compare_folds,
                    config.reporting_threshold,
                )
            )

    out = _prepare_out(config, "evaluate", args.out)
    with open(out / "model_comparison.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "model", "parameter", "performance", "precision", "recall",
            "mean_lead_weeks", "events_detected", "false_onsets",
        ])
        for r in results:
            mean_lead = r.leads.mean_lead if r.leads is not None else None
            writer.writerow([
                r.name,
                r.parameter,
                repr(r.report.performance),
                repr(r.report.precision),
                repr(r.report.recall),
                "" if mean_lead is None else repr(mean_lead),
                len(r.report.delta_t) - len(r.report.missed_events),
                r.report.false_onset_count,
            ])
    for r in results:
        evaluate.write_event_report_csv(r.report, r.leads, out / f"{r.name}_events.csv")
    print(out)
    return 0


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    panel = load_panel_from_manifest(config.manifest)
    if args.axis == "train":
        values = []
        for item in args.values.split(","):
            length, _, gap = item.partition(":")
            values.append((int(length), int(gap) if gap else 0))
        values = tuple(values)
    elif args.axis == "window":
        values = tuple(int(v) for v in args.values.split(","))
    else:
        values = tuple(float(v) for v in args.values.split(","))
    spec = evaluate.SweepSpec(
        axis=args.axis,
        values=values,
        epsilon=config.epsilon,
        min_duration=config.min_duration,
        window=config.window,
        lead=config.lead,
        phi=config.atfs,
        sims=config.sims,
        lambda_grid=config.lambda_grid,
        k_max=config.k_max,
        replicates=config.replicates,
        held_out=config.held_out,
        seed=config.seed,
        reporting_threshold=config.reporting_threshold,
    )
    rows = evaluate.sweep(panel, spec)
    out = _prepare_out(config, "sweep", args.out)
    evaluate.write_sweep_csv(rows, out / "sweep.csv")
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
