"""Scoring of alarm traces against events: timeliness, precision, recall.

The headline score averages, over events, how early the first in-window
cluster onset lands: 1 at the window start, 0.5 at the event start for the
default half-window lead, 0 when the window passes with no onset. Precision
and recall count cluster onsets, never raw alarm weeks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .events import DetectionWindowSet, EventSet
from .mewma import AlarmTrace
from .panel import Series


def performance(trace: AlarmTrace, windows: DetectionWindowSet) -> float:
    """Mean timeliness over events: (1/N) sum(1 - dT_n / T_w).

    dT_n is the lag from window start to the first cluster onset inside
    window n, with dT_n = T_w when no onset falls inside the window.
    """
    if len(windows) == 0:
        raise ValueError("cannot score against an empty window set")
    onsets = trace.cluster_onsets
    t_w = windows.window_length
    total = 0.0
    for ws, we in windows.windows:
        inside = onsets[(onsets >= ws) & (onsets <= we)]
        dt = float(inside[0] - ws) if inside.size else float(t_w)
        total += 1.0 - dt / t_w
    return total / len(windows)


@dataclass(frozen=True)
class EvaluationReport:
    """Timeliness plus onset classification for one trace against one window set."""

    performance: float
    delta_t: tuple[float, ...]
    onsets: tuple[int | None, ...]
    precision: float
    recall: float
    missed_events: tuple[int, ...]
    true_onset_count: int
    false_onset_count: int
    late_onset_count: int
    precision_undefined: bool


def score(
    trace: AlarmTrace,
    windows: DetectionWindowSet,
    *,
    onset_mask: np.ndarray | None = None,
    raw_alarm_precision: bool = False,
) -> EvaluationReport:
    """Full evaluation of a trace against a window set.

    Onsets inside any window are true; onsets inside an event but after its
    window are "late-true" and dropped from the precision ratio entirely;
    everything else is false. With no onsets at all, precision is reported
    as 1 with the ``precision_undefined`` flag set so sweeps never divide by
    zero. ``onset_mask`` restricts which weeks' onsets are considered (e.g.
    held-out weeks only); ``raw_alarm_precision`` classifies every alarm week
    instead of cluster onsets, as a diagnostic.
    """
    if len(windows) == 0:
        raise ValueError("cannot score against an empty window set")
    onsets = trace.cluster_onsets
    marks = trace.alarm_weeks if raw_alarm_precision else onsets
    if onset_mask is not None:
        onset_mask = np.asarray(onset_mask, dtype=bool)
        onsets = onsets[onset_mask[onsets]]
        marks = marks[onset_mask[marks]]

    t_w = windows.window_length
    delta_t: list[float] = []
    first_onsets: list[int | None] = []
    missed: list[int] = []
    for k, (ws, we) in enumerate(windows.windows):
        inside = onsets[(onsets >= ws) & (onsets <= we)]
        if inside.size:
            first_onsets.append(int(inside[0]))
            delta_t.append(float(inside[0] - ws))
        else:
            first_onsets.append(None)
            delta_t.append(float(t_w))
            missed.append(k)

    true_count = false_count = late_count = 0
    for w in marks:
        in_window = any(ws <= w <= we for ws, we in windows.windows)
        if in_window:
            true_count += 1
            continue
        late = any(
            es <= w <= ee and w > we
            for (es, ee), (ws, we) in zip(windows.events, windows.windows)
        )
        if late:
            late_count += 1
        else:
            false_count += 1

    classified = true_count + false_count
    precision_undefined = classified == 0
    precision = 1.0 if precision_undefined else true_count / classified
    recall = (len(windows) - len(missed)) / len(windows)
    perf = sum(1.0 - dt / t_w for dt in delta_t) / len(windows)
    return EvaluationReport(
        performance=perf,
        delta_t=tuple(delta_t),
        onsets=tuple(first_onsets),
        precision=precision,
        recall=recall,
        missed_events=tuple(missed),
        true_onset_count=true_count,
        false_onset_count=false_count,
        late_onset_count=late_count,
        precision_undefined=precision_undefined,
    )


@dataclass(frozen=True)
class LeadReport:
    """Per-event advance warning relative to a reporting threshold."""

    leads: tuple[float | None, ...]
    crossed: tuple[bool, ...]
    missed_events: tuple[int, ...]

    @property
    def mean_lead(self) -> float | None:
        defined = [l for l in self.leads if l is not None]
        return sum(defined) / len(defined) if defined else None


def lead_vs_threshold(
    trace: AlarmTrace,
    gold: Series,
    reporting_threshold: float,
    events: EventSet,
    windows: DetectionWindowSet,
) -> LeadReport:
    """Weeks between each event's first in-window onset and the gold series
    reaching the reporting threshold inside that event.

    Events that never reach the reporting threshold are excluded (lead None,
    ``crossed`` False); events with no in-window onset are listed as missed.
    """
    if reporting_threshold < events.threshold:
        raise ValueError(
            f"reporting threshold {reporting_threshold} below event threshold "
            f"{events.threshold}"
        )
    onsets = trace.cluster_onsets
    leads: list[float | None] = []
    crossed: list[bool] = []
    missed: list[int] = []
    values = gold.values
    for k, ((es, ee), (ws, we)) in enumerate(zip(events.events, windows.windows)):
        hits = np.flatnonzero(values[es : ee + 1] >= reporting_threshold)
        if hits.size == 0:
            leads.append(None)
            crossed.append(False)
            continue
        crossed.append(True)
        cross_week = es + int(hits[0])
        inside = onsets[(onsets >= ws) & (onsets <= we)]
        if inside.size == 0:
            leads.append(None)
            missed.append(k)
            continue
        leads.append(float(cross_week - int(inside[0])))
    return LeadReport(leads=tuple(leads), crossed=tuple(crossed), missed_events=tuple(missed))


def write_event_report_csv(report: EvaluationReport, leads: LeadReport | None, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["event", "onset_week", "delta_t", "lead_weeks", "detected"])
        for k, (onset, dt) in enumerate(zip(report.onsets, report.delta_t)):
            lead = leads.leads[k] if leads is not None else None
            writer.writerow([
                k,
                "" if onset is None else onset,
                repr(dt),
                "" if lead is None else repr(lead),
                0 if onset is None else 1,
            ])


def write_summary_csv(report: EvaluationReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["performance", "precision", "recall"])
        writer.writerow([repr(report.performance), repr(report.precision), repr(report.recall)])


# ---------------------------------------------------------------------------
# Sweep harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    """A grid of pipeline runs along one experimental axis.

    ``axis`` is one of ``epsilon`` (event threshold), ``window`` (detection
    window length), ``atfs`` (false-signal budget), or ``train`` (training
    length in seasons, optionally (length, gap-to-test) pairs). All other
    parameters stay at the given base values.
    """

    axis: str
    values: tuple
    epsilon: float = 1.25
    min_duration: int = 3
    window: int = 16
    lead: int | None = None
    phi: float = 20.0
    sims: int = 1000
    lambda_grid: tuple[float, ...] = tuple(round(0.1 * k, 1) for k in range(1, 10))
    k_max: int = 8
    replicates: int = 1
    held_out: int = 1
    seed: int = 0
    reporting_threshold: float | None = None

    def __post_init__(self):
        if self.axis not in ("epsilon", "window", "atfs", "train"):
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        if not self.values:
            raise ValueError("sweep grid must be nonempty")


def sweep(panel, spec: SweepSpec) -> list[dict]:
    """Run the select-and-evaluate pipeline once per grid point.

    Returns one row (dict) per point; per-point failures are recorded in the
    row's ``error`` field and the sweep continues.
    """
    from . import pipeline  # deferred: pipeline builds on this module

    rows: list[dict] = []
    for value in spec.values:
        params = {
            "epsilon": spec.epsilon,
            "window": spec.window,
            "phi": spec.phi,
        }
        train_spec = None
        if spec.axis == "train":
            train_spec = value if isinstance(value, tuple) else (int(value), 0)
        elif spec.axis == "window":
            params["window"] = int(value)
        elif spec.axis == "atfs":
            params["phi"] = float(value)
        else:
            params["epsilon"] = float(value)
        row = {
            "axis": spec.axis,
            "value": repr(value),
            "epsilon": params["epsilon"],
            "window": params["window"],
            "phi": params["phi"],
            "selected": "",
            "performance": "",
            "precision": "",
            "recall": "",
            "error": "",
        }
        try:
            result = pipeline.select_and_evaluate(
                panel,
                epsilon=params["epsilon"],
                min_duration=spec.min_duration,
                window=params["window"],
                lead=spec.lead,
                phi=params["phi"],
                sims=spec.sims,
                lambda_grid=spec.lambda_grid,
                k_max=spec.k_max,
                replicates=spec.replicates,
                held_out=spec.held_out,
                seed=spec.seed,
                train_spec=train_spec,
                reporting_threshold=spec.reporting_threshold,
            )
            row["selected"] = "|".join(result.subset)
            row["performance"] = repr(result.report.performance)
            row["precision"] = repr(result.report.precision)
            row["recall"] = repr(result.report.recall)
        except Exception as exc:  # per-point failures must not kill the sweep
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def write_sweep_csv(rows: Sequence[dict], path) -> None:
    fields = ["axis", "value", "epsilon", "window", "phi",
              "selected", "performance", "precision", "recall", "error"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
