"""Alarm-threshold calibration against a false-signal budget.

The average time between false signals (ATFS) of a detector is estimated by
Monte Carlo: draw i.i.d. multivariate-normal sequences from the null model,
scan them, and average the spacing between successive alarm weeks. For a
fixed smoothing parameter the threshold meeting a target ATFS is found with
a bracketed secant solve over a single set of simulated statistic paths
(common random numbers), exploiting that ATFS is monotone in the threshold.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from . import evaluate
from .events import DetectionWindowSet, EventSet
from .mewma import DetectorConfig, NullModel, SharedScanTable, estimate_null, run_scan
from .panel import AlignedPanel

DEFAULT_LAMBDA_GRID: tuple[float, ...] = tuple(round(0.1 * k, 1) for k in range(1, 10))
DEFAULT_ATFS = 20.0
DEFAULT_SIMS = 1000


class CalibrationError(RuntimeError):
    """Threshold calibration failed."""


class ThresholdSolveError(CalibrationError):
    """Secant solve did not converge; carries the last bracket."""

    def __init__(self, message: str, bracket: tuple[float, float]):
        super().__init__(message)
        self.bracket = bracket


@dataclass(frozen=True)
class AtfsEstimate:
    """One simulated ATFS measurement for a (lambda, h) pair."""

    lam: float
    h: float
    atfs: float
    simulation_count: int
    sequence_length: int
    rng_seed: object
    target: float | None = None

    def __post_init__(self):
        if not self.atfs > 0.0:
            raise ValueError("estimated ATFS must be positive")
        if self.simulation_count < 1:
            raise ValueError("simulation count must be >= 1")


@dataclass(frozen=True)
class ConstraintCurvePoint:
    """A (lambda, h) pair on the target-ATFS curve with its in-sample score."""

    lam: float
    h: float
    performance: float
    atfs: float


def simulate_statistic_paths(
    null: NullModel, lam: float, sims: int, length: int, seed
) -> np.ndarray:
    """Simulate (sims, length) test-statistic paths under the null model.

    Draws are i.i.d. multivariate normal with the null mean and covariance;
    since the scan only sees deviations from the mean, centered draws are
    used directly. Deterministic for a fixed seed.
    """
    if sims < 1 or length < 1:
        raise ValueError("sims and length must be >= 1")
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lam must be in (0, 1), got {lam}")
    d = null.dim
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(null.sigma)
    deviations = rng.standard_normal((sims, length, d)) @ L.T

    Ls = np.linalg.cholesky(null.smoothed_cov(lam))
    E = np.empty((sims, length))
    s = np.zeros((sims, d))
    for t in range(length):
        s = np.maximum(0.0, lam * deviations[:, t, :] + (1.0 - lam) * s)
        z = solve_triangular(Ls, s.T, lower=True, check_finite=False)
        E[:, t] = np.einsum("ij,ij->j", z, z)
    return E


def atfs_from_paths(E: np.ndarray, h: float, cluster_spacing: bool = False) -> float:
    """Time-average spacing between alarms: observed scan weeks per alarm.

    Equals the long-run mean alarm-to-alarm gap (1 / alarm rate) and is
    exactly nondecreasing in h, which pairwise gap averages are not once
    finite windows censor the long inter-cluster gaps. Thresholds h <= 0
    alarm every week by convention (ATFS = 1 exactly); with no alarms at
    all the sentinel +inf is returned. ``cluster_spacing`` divides by
    cluster onsets instead of raw alarm weeks.
    """
    if h <= 0.0:
        return 1.0
    alarms = E > h
    if cluster_spacing:
        onsets = alarms.copy()
        onsets[:, 1:] &= ~alarms[:, :-1]
        count = int(onsets.sum())
    else:
        count = int(alarms.sum())
    if count == 0:
        return math.inf
    return E.size / count


def simulate_atfs(
    null: NullModel,
    lam: float,
    h: float,
    sims: int = DEFAULT_SIMS,
    length: int | None = None,
    seed=0,
    *,
    target: float | None = None,
    cluster_spacing: bool = False,
) -> AtfsEstimate:
    """Estimate ATFS for a (lambda, h) pair by fresh simulation."""
    if length is None:
        length = int(10 * (target if target is not None else DEFAULT_ATFS))
    E = simulate_statistic_paths(null, lam, sims, length, seed)
    atfs = atfs_from_paths(E, h, cluster_spacing)
    return AtfsEstimate(
        lam=lam,
        h=h,
        atfs=atfs,
        simulation_count=sims,
        sequence_length=length,
        rng_seed=seed,
        target=target,
    )


def solve_threshold(
    null: NullModel,
    lam: float,
    phi: float,
    tol: float = 0.5,
    max_iter: int = 100,
    *,
    sims: int = DEFAULT_SIMS,
    length: int | None = None,
    seed=0,
    cluster_spacing: bool = False,
    history: list | None = None,
) -> float:
    """Find h with |simulated ATFS(h) - phi| <= tol at smoothing ``lam``.

    One set of statistic paths is simulated up front and reused for every
    threshold evaluation (common random numbers), so the secant objective is
    deterministic and monotone. ``history`` (if given) collects the
    (h, atfs) evaluations in order. Targets phi <= 1 return the boundary
    solution h = 0, where every week alarms.
    """
    if phi < 1.0:
        raise CalibrationError(f"target ATFS must be >= 1 week, got {phi}")
    if length is None:
        length = max(int(10 * phi), 50)
    E = simulate_statistic_paths(null, lam, sims, length, seed)

    def f(h: float) -> float:
        atfs = atfs_from_paths(E, h, cluster_spacing)
        if history is not None:
            history.append((h, atfs))
        return atfs - phi

    if phi <= 1.0:
        f(0.0)
        return 0.0

    # bracket the root; h=0 sits below any phi > 1, the first guess comes from
    # the pooled statistic quantile matching the target alarm rate
    h_lo, f_lo = 0.0, 1.0 - phi
    h_hi = float(np.quantile(E, 1.0 - 1.0 / phi))
    f_hi = f(h_hi)
    expansions = 0
    while f_hi < 0.0:
        h_lo, f_lo = h_hi, f_hi
        h_hi = 2.0 * h_hi + 1.0
        f_hi = f(h_hi)
        expansions += 1
        if expansions > 200:
            raise ThresholdSolveError(
                f"could not bracket ATFS target {phi} at lam={lam}", (h_lo, h_hi)
            )
    if abs(f_hi) <= tol:
        return h_hi

    # safeguarded secant within [h_lo, h_hi]; bisection when the secant step
    # is unusable (infinite objective or step outside the bracket)
    h_prev, f_prev = h_lo, f_lo
    h_cur, f_cur = h_hi, f_hi
    for _ in range(max_iter):
        if math.isfinite(f_cur) and math.isfinite(f_prev) and f_cur != f_prev:
            h_next = h_cur - f_cur * (h_cur - h_prev) / (f_cur - f_prev)
        else:
            h_next = 0.5 * (h_lo + h_hi)
        if not h_lo < h_next < h_hi:
            h_next = 0.5 * (h_lo + h_hi)
        f_next = f(h_next)
        if abs(f_next) <= tol:
            return h_next
        if f_next < 0.0:
            h_lo, f_lo = h_next, f_next
        else:
            h_hi, f_hi = h_next, f_next
        h_prev, f_prev = h_cur, f_cur
        h_cur, f_cur = h_next, f_next
    raise ThresholdSolveError(
        f"no h with |ATFS - {phi}| <= {tol} within {max_iter} iterations at lam={lam}",
        (h_lo, h_hi),
    )


def optimize_params(
    panel: AlignedPanel,
    events: EventSet,
    windows: DetectionWindowSet,
    subset: Sequence[str],
    phi: float = DEFAULT_ATFS,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    *,
    sims: int = DEFAULT_SIMS,
    seed=0,
    tol: float = 0.5,
    week_mask: np.ndarray | None = None,
    segments=None,
    table: SharedScanTable | None = None,
    null: NullModel | None = None,
    curve: list | None = None,
) -> ConstraintCurvePoint:
    """Pick the (lambda, h) pair on the target-ATFS curve with the best in-sample score.

    For each lambda in the grid the threshold is solved at the target ATFS,
    the scan is run in-sample, and the mean-timeliness score over ``windows``
    is computed; the argmax is returned, ties broken by smaller lambda then
    smaller h. ``table``/``null`` let callers reuse precomputed shared states
    and a training null model; ``curve`` (if given) collects every solved
    grid point, not just the winner.
    """
    subset = tuple(subset)
    if not subset:
        raise ValueError("predictor subset must be nonempty")
    if len(events) == 0:
        raise ValueError("cannot optimize parameters without events")
    if null is None:
        if table is not None:
            null = table.null.subset(subset)
        else:
            null = estimate_null(panel, events, subset, week_mask)
    elif set(subset) - set(null.predictor_names):
        raise ValueError("null model does not cover the requested subset")
    if null.predictor_names != subset:
        null = null.subset(subset)

    best: ConstraintCurvePoint | None = None
    failures: list[str] = []
    for k, lam in enumerate(lambda_grid):
        lam = float(lam)
        evals: list[tuple[float, float]] = []
        try:
            h = solve_threshold(
                null, lam, phi, tol=tol, sims=sims, seed=(*_seed_tuple(seed), k),
                history=evals,
            )
        except CalibrationError as exc:
            failures.append(f"lam={lam}: {exc}")
            continue
        if h <= 0.0:
            failures.append(f"lam={lam}: boundary threshold h=0 is not a usable detector")
            continue
        if table is not None:
            trace = table.scan(lam, subset, h)
        else:
            trace = run_scan(panel, null, DetectorConfig(subset, lam, h), segments)
        perf = evaluate.performance(trace, windows)
        point = ConstraintCurvePoint(lam=lam, h=h, performance=perf, atfs=evals[-1][1])
        if curve is not None:
            curve.append(point)
        if best is None or (-point.performance, point.lam, point.h) < (
            -best.performance,
            best.lam,
            best.h,
        ):
            best = point
    if best is None:
        raise CalibrationError(
            "threshold solving failed for every lambda: " + "; ".join(failures)
        )
    return best


def _seed_tuple(seed) -> tuple:
    if isinstance(seed, (tuple, list)):
        return tuple(seed)
    return (seed,)


def write_calibration_csv(points: Sequence[ConstraintCurvePoint], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "h", "atfs_est", "performance"])
        for p in points:
            writer.writerow([repr(p.lam), repr(p.h), repr(p.atfs), repr(p.performance)])
