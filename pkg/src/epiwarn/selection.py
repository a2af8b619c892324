"""Greedy forward feature selection under season-wise cross-validation.

Seasons are anchored to events (one event per season, boundaries midway
between consecutive events). Each fold holds out whole seasons; the null
model and the (lambda, h) pair are fit on training weeks only, and the
held-out events are scored out of sample. Replicate runs differ only in
their Monte-Carlo calibration seeds and are aggregated by median rank.
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import calibrate, evaluate
from .events import DetectionWindowSet, EventSet, build_windows, detect_events
from .mewma import NullModel, SharedScanTable, estimate_null, precompute_shared_states
from .panel import AlignedPanel


@dataclass(frozen=True)
class Fold:
    """Season indices used for training and testing in one fold."""

    train_seasons: tuple[int, ...]
    test_seasons: tuple[int, ...]


@dataclass(frozen=True)
class FoldPlan:
    """Event-anchored season spans plus the train/test split per fold."""

    seasons: tuple[tuple[int, int], ...]
    folds: tuple[Fold, ...]
    held_out: int

    @property
    def n_folds(self) -> int:
        return len(self.folds)

    def season_mask(self, season_ids: Sequence[int], n_weeks: int) -> np.ndarray:
        mask = np.zeros(n_weeks, dtype=bool)
        for sid in season_ids:
            lo, hi = self.seasons[sid]
            mask[lo : hi + 1] = True
        return mask

    def train_mask(self, fold: int, n_weeks: int) -> np.ndarray:
        return self.season_mask(self.folds[fold].train_seasons, n_weeks)

    def test_mask(self, fold: int, n_weeks: int) -> np.ndarray:
        return self.season_mask(self.folds[fold].test_seasons, n_weeks)


def make_folds(events: EventSet, held_out: int, n_weeks: int) -> FoldPlan:
    """Partition the axis into one season per event and group seasons into folds.

    Season boundaries sit midway between consecutive events. With
    ``held_out`` seasons per fold, folds take consecutive seasons in order;
    the last fold absorbs any remainder. Training seasons are the complement
    of the held-out seasons.
    """
    K = len(events)
    if K < 2:
        raise ValueError("cross-validation needs at least 2 events")
    if held_out < 1 or held_out >= K:
        raise ValueError(
            f"held-out count must be in [1, {K - 1}] for {K} events, got {held_out}"
        )
    cuts = [0]
    for (s0, e0), (s1, _) in zip(events.events, events.events[1:]):
        cuts.append((e0 + s1 + 1) // 2)
    cuts.append(n_weeks)
    seasons = tuple((cuts[k], cuts[k + 1] - 1) for k in range(K))

    n_folds = -(-K // held_out)
    folds = []
    for f in range(n_folds):
        test = tuple(k for k in range(K) if min(k // held_out, n_folds - 1) == f)
        train = tuple(k for k in range(K) if k not in test)
        folds.append(Fold(train_seasons=train, test_seasons=test))
    return FoldPlan(seasons=seasons, folds=tuple(folds), held_out=held_out)


@dataclass(frozen=True, eq=False)
class FoldContext:
    """Everything one fold needs to score subsets: training null, shared states."""

    fold: int
    train_mask: np.ndarray
    test_mask: np.ndarray
    train_windows: DetectionWindowSet
    test_windows: DetectionWindowSet
    null: NullModel
    table: SharedScanTable
    baseline_weeks: np.ndarray


def prepare_fold_contexts(
    panel: AlignedPanel,
    events: EventSet,
    windows: DetectionWindowSet,
    folds: FoldPlan,
    lambda_grid: Sequence[float],
    *,
    candidates: Sequence[str] | None = None,
    reset_folds: bool = False,
) -> list[FoldContext]:
    """Estimate per-fold training nulls and precompute shared scan states.

    With ``reset_folds`` the scan state restarts at every season boundary so
    folds do not bleed into each other; the default scans the panel in one
    unbroken pass, matching the reset-free detector.
    """
    names = tuple(candidates) if candidates is not None else panel.candidate_names()
    n = panel.n_weeks
    segments = None
    if reset_folds:
        segments = tuple((lo, hi) for lo, hi in folds.seasons)
    contexts = []
    for f in range(folds.n_folds):
        train = folds.train_mask(f, n)
        test = folds.test_mask(f, n)
        null = estimate_null(panel, events, names, week_mask=train)
        table = precompute_shared_states(panel, null, lambda_grid, segments)
        base = events.baseline_mask(n) & train
        contexts.append(
            FoldContext(
                fold=f,
                train_mask=train,
                test_mask=test,
                train_windows=windows.select(folds.folds[f].train_seasons),
                test_windows=windows.select(folds.folds[f].test_seasons),
                null=null,
                table=table,
                baseline_weeks=np.flatnonzero(base),
            )
        )
    return contexts


@dataclass
class AuditLog:
    """Record of which weeks and parameters each fold's fit actually used."""

    entries: list[dict] = field(default_factory=list)


def score_subset(
    panel: AlignedPanel,
    subset: Sequence[str],
    folds: FoldPlan,
    phi: float,
    epsilon: float,
    window: int,
    *,
    min_duration: int = 3,
    lead: int | None = None,
    sims: int = calibrate.DEFAULT_SIMS,
    seed=0,
    lambda_grid: Sequence[float] = calibrate.DEFAULT_LAMBDA_GRID,
    contexts: Sequence[FoldContext] | None = None,
    audit: AuditLog | None = None,
) -> float:
    """Mean out-of-sample timeliness of a predictor subset across folds.

    Per fold: the null model and the (lambda, h) pair come from training
    weeks only; the chosen detector's trace is then scored on the held-out
    events' windows.
    """
    subset = tuple(subset)
    if not subset:
        raise ValueError("predictor subset must be nonempty")
    if contexts is None:
        events = detect_events(panel.gold, epsilon, min_duration)
        windows = build_windows(events, window, lead, panel.gold)
        contexts = prepare_fold_contexts(panel, events, windows, folds, lambda_grid)

    fold_scores = []
    for ctx in contexts:
        point = calibrate.optimize_params(
            panel,
            EventSet(epsilon, min_duration, ctx.train_windows.events),
            ctx.train_windows,
            subset,
            phi,
            lambda_grid,
            sims=sims,
            seed=(*calibrate._seed_tuple(seed), ctx.fold),
            table=ctx.table,
        )
        trace = ctx.table.scan(point.lam, subset, point.h)
        fold_scores.append(evaluate.performance(trace, ctx.test_windows))
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
                    "fold_score": fold_scores[-1],
                }
            )
    return float(np.mean(fold_scores))


@dataclass(frozen=True)
class SelectionStep:
    """One greedy step: the chosen predictor and every candidate's score."""

    chosen: str
    score: float
    candidate_scores: tuple[tuple[str, float], ...]


@dataclass(frozen=True)
class SelectionTrace:
    steps: tuple[SelectionStep, ...]
    stop_reason: str  # "reached-k" | "performance-leveled-off"

    def selected(self) -> tuple[str, ...]:
        return tuple(s.chosen for s in self.steps)


def forward_select(
    panel: AlignedPanel,
    candidates: Sequence[str],
    k_max: int,
    phi: float,
    folds: FoldPlan,
    seed=0,
    *,
    epsilon: float = 1.25,
    window: int = 16,
    min_duration: int = 3,
    lead: int | None = None,
    sims: int = calibrate.DEFAULT_SIMS,
    lambda_grid: Sequence[float] = calibrate.DEFAULT_LAMBDA_GRID,
    min_improvement: float = 0.0,
    contexts: Sequence[FoldContext] | None = None,
    audit: AuditLog | None = None,
) -> SelectionTrace:
    """Greedy forward selection: repeatedly add the candidate that most
    improves the cross-validated score.

    The first step always picks the best singleton; afterwards selection
    stops at ``k_max`` predictors or when the best marginal improvement is
    <= ``min_improvement``. Ties go to the earlier candidate in the given
    order.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("candidate pool must be nonempty")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if contexts is None:
        events = detect_events(panel.gold, epsilon, min_duration)
        windows = build_windows(events, window, lead, panel.gold)
        contexts = prepare_fold_contexts(
            panel, events, windows, folds, lambda_grid, candidates=panel.candidate_names()
        )

    chosen: list[str] = []
    steps: list[SelectionStep] = []
    remaining = list(candidates)
    current_score: float | None = None
    stop_reason = "reached-k"
    while remaining and len(chosen) < k_max:
        scored = []
        for cand in remaining:
            s = score_subset(
                panel,
                chosen + [cand],
                folds,
                phi,
                epsilon,
                window,
                min_duration=min_duration,
                lead=lead,
                sims=sims,
                seed=seed,
                lambda_grid=lambda_grid,
                contexts=contexts,
                audit=audit,
            )
            scored.append((cand, s))
        best_cand, best_score = max(scored, key=lambda cs: cs[1])
        if current_score is not None and best_score - current_score <= min_improvement:
            stop_reason = "performance-leveled-off"
            break
        steps.append(
            SelectionStep(chosen=best_cand, score=best_score, candidate_scores=tuple(scored))
        )
        chosen.append(best_cand)
        remaining.remove(best_cand)
        current_score = best_score
    return SelectionTrace(steps=tuple(steps), stop_reason=stop_reason)


@dataclass(frozen=True)
class ReplicateAggregate:
    """Median-rank ordering of predictors across replicate selection runs."""

    replicate_count: int
    traces: tuple[SelectionTrace, ...]
    ranking: tuple[tuple[str, float, int], ...]  # (name, median rank, times selected)

    def selected(self) -> tuple[str, ...]:
        return tuple(name for name, _, _ in self.ranking)


def aggregate_replicates(
    traces: Sequence[SelectionTrace], k_max: int | None = None
) -> ReplicateAggregate:
    """Order predictors by the median of their selection ranks over replicates.

    A predictor's rank in a replicate is its (1-based) selection position, or
    k_max + 1 when it was not selected there. Ties break by selection
    frequency (more is better), then name. Predictors never selected in any
    replicate are omitted.
    """
    if not traces:
        raise ValueError("need at least one selection trace")
    if k_max is None:
        k_max = max(len(t.steps) for t in traces)
    names = sorted({s.chosen for t in traces for s in t.steps})
    absent_rank = k_max + 1
    ranking = []
    for name in names:
        ranks = []
        freq = 0
        for t in traces:
            sel = t.selected()
            if name in sel:
                ranks.append(sel.index(name) + 1)
                freq += 1
            else:
                ranks.append(absent_rank)
        ranking.append((name, float(statistics.median(ranks)), freq))
    ranking.sort(key=lambda r: (r[1], -r[2], r[0]))
    return ReplicateAggregate(
        replicate_count=len(traces), traces=tuple(traces), ranking=tuple(ranking)
    )


def audit_leakage(folds: FoldPlan, n_weeks: int, audit: AuditLog) -> list[str]:
    """Check the recorded fits for held-out-week leakage.

    Returns a list of violation descriptions (empty means clean): a fold's
    null estimation must not have touched held-out weeks, its training mask
    must exclude every held-out-season week, and the two masks must agree
    with the fold plan recomputed from scratch.
    """
    problems = []
    for entry in audit.entries:
        f = entry["fold"]
        expected_test = folds.test_mask(f, n_weeks)
        expected_train = folds.train_mask(f, n_weeks)
        if not np.array_equal(entry["test_mask"], expected_test):
            problems.append(f"fold {f}: recorded test mask differs from fold plan")
        if not np.array_equal(entry["train_mask"], expected_train):
            problems.append(f"fold {f}: recorded train mask differs from fold plan")
        held_out = np.flatnonzero(expected_test)
        overlap = np.intersect1d(entry["baseline_weeks"], held_out)
        if overlap.size:
            problems.append(
                f"fold {f}: null estimation used held-out weeks {overlap[:5].tolist()}"
            )
        if np.any(entry["train_mask"] & expected_test):
            problems.append(f"fold {f}: training mask includes held-out weeks")
    return problems


def write_traces_csv(traces: Sequence[SelectionTrace], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replicate", "step", "chosen", "score"])
        for r, trace in enumerate(traces):
            for i, step in enumerate(trace.steps, start=1):
                writer.writerow([r, i, step.chosen, repr(step.score)])


def write_aggregate_csv(aggregate: ReplicateAggregate, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["predictor", "median_rank", "frequency"])
        for name, median_rank, freq in aggregate.ranking:
            writer.writerow([name, repr(median_rank), freq])
