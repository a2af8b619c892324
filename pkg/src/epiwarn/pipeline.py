"""End-to-end orchestration: select predictors, then evaluate detectors out of sample.

The two-stage protocol selects predictor combinations under one fold plan
(by default one season held out per fold) and compares finished models under
a coarser plan (two seasons held out). Out-of-sample results are pooled over
folds so every event is scored exactly once, by the fold that held it out.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import calibrate, evaluate
from .baselines import fit_baseline, _trace_for
from .events import DetectionWindowSet, EventSet, build_windows, detect_events
from .mewma import AlarmTrace
from .panel import AlignedPanel
from .selection import (
    AuditLog,
    Fold,
    FoldPlan,
    SelectionTrace,
    aggregate_replicates,
    forward_select,
    make_folds,
    prepare_fold_contexts,
)


@dataclass(frozen=True)
class ModelEvaluation:
    """Pooled out-of-sample evaluation of one detector across folds."""

    name: str
    parameter: str
    report: evaluate.EvaluationReport
    leads: evaluate.LeadReport | None
    fold_params: tuple = ()


@dataclass(frozen=True)
class PipelineResult:
    subset: tuple[str, ...]
    traces: tuple[SelectionTrace, ...]
    report: evaluate.EvaluationReport
    leads: evaluate.LeadReport | None


def _restrict_trace(trace: AlarmTrace, mask: np.ndarray) -> AlarmTrace:
    return AlarmTrace(
        E=trace.E,
        alarm_weeks=trace.alarm_weeks[mask[trace.alarm_weeks]],
        cluster_onsets=trace.cluster_onsets[mask[trace.cluster_onsets]],
        S=trace.S,
    )


def pooled_cv_report(
    panel: AlignedPanel,
    events: EventSet,
    windows: DetectionWindowSet,
    folds: FoldPlan,
    traces_per_fold: Sequence[AlarmTrace],
    reporting_threshold: float | None = None,
) -> tuple[evaluate.EvaluationReport, evaluate.LeadReport | None]:
    """Pool per-fold out-of-sample scores into one report.

    Each fold's trace is evaluated only on that fold's held-out weeks and
    events; timeliness entries are keyed back to global event order, onset
    classifications and leads are summed across folds. Events no fold holds
    out (possible with custom train/gap plans) are not scored at all.
    """
    n = panel.n_weeks
    K = len(events)
    t_w = windows.window_length
    tested = sorted(
        {k for f in range(len(traces_per_fold)) for k in folds.folds[f].test_seasons}
    )
    delta_t: list[float] = [float(t_w)] * K
    first_onsets: list[int | None] = [None] * K
    leads: list[float | None] = [None] * K
    crossed: list[bool] = [False] * K
    true_n = false_n = late_n = 0

    for f, trace in enumerate(traces_per_fold):
        test_ids = folds.folds[f].test_seasons
        tmask = folds.test_mask(f, n)
        test_windows = windows.select(test_ids)
        rep = evaluate.score(trace, test_windows, onset_mask=tmask)
        true_n += rep.true_onset_count
        false_n += rep.false_onset_count
        late_n += rep.late_onset_count
        for local_i, k in enumerate(test_ids):
            delta_t[k] = rep.delta_t[local_i]
            first_onsets[k] = rep.onsets[local_i]
        if reporting_threshold is not None:
            lead_rep = evaluate.lead_vs_threshold(
                _restrict_trace(trace, tmask),
                panel.gold,
                reporting_threshold,
                events.select(test_ids),
                test_windows,
            )
            for local_i, k in enumerate(test_ids):
                leads[k] = lead_rep.leads[local_i]
                crossed[k] = lead_rep.crossed[local_i]

    # all per-event fields index into `tested` in global event order
    missed = tuple(i for i, k in enumerate(tested) if first_onsets[k] is None)
    classified = true_n + false_n
    precision_undefined = classified == 0
    report = evaluate.EvaluationReport(
        performance=sum(1.0 - delta_t[k] / t_w for k in tested) / len(tested),
        delta_t=tuple(delta_t[k] for k in tested),
        onsets=tuple(first_onsets[k] for k in tested),
        precision=1.0 if precision_undefined else true_n / classified,
        recall=(len(tested) - len(missed)) / len(tested),
        missed_events=missed,
        true_onset_count=true_n,
        false_onset_count=false_n,
        late_onset_count=late_n,
        precision_undefined=precision_undefined,
    )
    lead_report = None
    if reporting_threshold is not None:
        lead_report = evaluate.LeadReport(
            leads=tuple(leads[k] for k in tested),
            crossed=tuple(crossed[k] for k in tested),
            missed_events=tuple(i for i in missed if crossed[tested[i]]),
        )
    return report, lead_report


def evaluate_mewma_cv(
    panel: AlignedPanel,
    subset: Sequence[str],
    events: EventSet,
    windows: DetectionWindowSet,
    folds: FoldPlan,
    phi: float,
    *,
    sims: int = calibrate.DEFAULT_SIMS,
    lambda_grid: Sequence[float] = calibrate.DEFAULT_LAMBDA_GRID,
    seed=0,
    reporting_threshold: float | None = None,
    contexts=None,
    name: str = "mewma",
    audit: AuditLog | None = None,
) -> ModelEvaluation:
    """Calibrate a fixed subset per fold on training weeks, score held-out events."""
    subset = tuple(subset)
    if contexts is None:
        contexts = prepare_fold_contexts(panel, events, windows, folds, lambda_grid)
    traces = []
    fold_params = []
    for ctx in contexts:
        point = calibrate.optimize_params(
            panel,
            EventSet(events.threshold, events.min_duration, ctx.train_windows.events),
            ctx.train_windows,
            subset,
            phi,
            lambda_grid,
            sims=sims,
            seed=(*calibrate._seed_tuple(seed), ctx.fold),
            table=ctx.table,
        )
        traces.append(ctx.table.scan(point.lam, subset, point.h))
        fold_params.append((ctx.fold, point.lam, point.h))
        if audit is not None:
            audit.entries.append(
                {
                    "fold": ctx.fold,
                    "subset": subset,
                    "baseline_weeks": ctx.baseline_weeks.copy(),
                    "train_mask": ctx.train_mask.copy(),
                    "test_mask": ctx.test_mask.copy(),
                    "lam": point.lam,
                    "h": point.h,
                }
            )
    report, leads = pooled_cv_report(panel, events, windows, folds, traces, reporting_threshold)
    return ModelEvaluation(
        name=name,
        parameter="+".join(subset),
        report=report,
        leads=leads,
        fold_params=tuple(fold_params),
    )


def evaluate_baseline_cv(
    panel: AlignedPanel,
    kind: str,
    grid: Sequence[int],
    events: EventSet,
    windows: DetectionWindowSet,
    folds: FoldPlan,
    reporting_threshold: float | None = None,
) -> ModelEvaluation:
    """Grid-fit a trigger baseline and report its pooled out-of-sample scores."""
    config = fit_baseline(panel, events, windows, grid, kind, folds)
    param = config.trigger_week if kind == "week" else config.n_consecutive
    trace = _trace_for(panel, kind, param)
    report, leads = pooled_cv_report(
        panel, events, windows, folds, [trace] * folds.n_folds, reporting_threshold
    )
    return ModelEvaluation(
        name=f"{kind}-trigger",
        parameter=str(param),
        report=report,
        leads=leads,
    )


def run_selection(
    panel: AlignedPanel,
    candidates: Sequence[str],
    folds: FoldPlan,
    *,
    epsilon: float,
    min_duration: int,
    window: int,
    lead: int | None,
    phi: float,
    sims: int,
    lambda_grid: Sequence[float],
    k_max: int,
    replicates: int,
    seed: int,
    min_improvement: float = 0.0,
) -> tuple[SelectionTrace, ...]:
    """Run replicate forward selections serially; replicate r seeds with seed + r."""
    events = detect_events(panel.gold, epsilon, min_duration)
    windows = build_windows(events, window, lead, panel.gold)
    contexts = prepare_fold_contexts(panel, events, windows, folds, lambda_grid)
    traces = []
    for r in range(replicates):
        traces.append(
            forward_select(
                panel,
                candidates,
                k_max,
                phi,
                folds,
                seed=seed + r,
                epsilon=epsilon,
                window=window,
                min_duration=min_duration,
                lead=lead,
                sims=sims,
                lambda_grid=lambda_grid,
                min_improvement=min_improvement,
                contexts=contexts,
            )
        )
    return tuple(traces)


def train_spec_folds(
    events: EventSet, n_weeks: int, train_seasons: int, gap: int
) -> tuple[FoldPlan, FoldPlan]:
    """Fold plans for a training-length/gap experiment.

    The evaluation plan has a single fold: train on ``train_seasons``
    consecutive seasons ending ``gap`` seasons before the last season, test
    on the last season (gap seasons belong to neither). The selection plan
    cross-validates within the training seasons only, holding out one of
    them per fold, so the test season never influences which predictors win.
    """
    K = len(events)
    if train_seasons < 2 or gap < 0:
        raise ValueError("train length must be >= 2 and gap >= 0")
    if train_seasons + gap + 1 > K:
        raise ValueError(
            f"need {train_seasons + gap + 1} seasons for train={train_seasons}, "
            f"gap={gap}; have {K}"
        )
    base = make_folds(events, 1, n_weeks)
    train = tuple(range(K - 1 - gap - train_seasons, K - 1 - gap))
    eval_plan = FoldPlan(
        seasons=base.seasons, folds=(Fold(train, (K - 1,)),), held_out=1
    )
    select_plan = FoldPlan(
        seasons=base.seasons,
        folds=tuple(
            Fold(tuple(s for s in train if s != held), (held,)) for held in train
        ),
        held_out=1,
    )
    return select_plan, eval_plan


def select_and_evaluate(
    panel: AlignedPanel,
    *,
    epsilon: float,
    min_duration: int,
    window: int,
    lead: int | None,
    phi: float,
    sims: int,
    lambda_grid: Sequence[float],
    k_max: int,
    replicates: int,
    held_out: int,
    seed: int,
    train_spec: tuple[int, int] | None = None,
    reporting_threshold: float | None = None,
) -> PipelineResult:
    """Full pipeline for one parameter point: select predictors, then score them.

    Selection runs under ``held_out`` seasons per fold (or the single custom
    fold from ``train_spec``); the aggregated subset is then evaluated out of
    sample under two-held-out folds when enough events exist.
    """
    events = detect_events(panel.gold, epsilon, min_duration)
    if len(events) < 2:
        raise ValueError(
            f"found {len(events)} event(s) at threshold {epsilon}; need >= 2"
        )
    windows = build_windows(events, window, lead, panel.gold)
    if train_spec is not None:
        select_folds, compare_folds = train_spec_folds(events, panel.n_weeks, *train_spec)
    else:
        select_folds = make_folds(events, held_out, panel.n_weeks)
        compare_held_out = 2 if len(events) > 2 else 1
        compare_folds = make_folds(events, compare_held_out, panel.n_weeks)

    traces = run_selection(
        panel,
        panel.candidate_names(),
        select_folds,
        epsilon=epsilon,
        min_duration=min_duration,
        window=window,
        lead=lead,
        phi=phi,
        sims=sims,
        lambda_grid=lambda_grid,
        k_max=k_max,
        replicates=replicates,
        seed=seed,
    )
    aggregate = aggregate_replicates(traces, k_max)
    subset = aggregate.selected()[:k_max]
    if not subset:
        raise ValueError("selection chose no predictors")

    model = evaluate_mewma_cv(
        panel,
        subset,
        events,
        windows,
        compare_folds,
        phi,
        sims=sims,
        lambda_grid=lambda_grid,
        seed=seed,
        reporting_threshold=reporting_threshold,
    )
    return PipelineResult(
        subset=subset, traces=traces, report=model.report, leads=model.leads
    )
