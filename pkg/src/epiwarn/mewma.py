"""Reset-free multivariate EWMA scan over candidate predictors.

The detector smooths standardized deviations of the candidate vector from a
baseline mean with a one-sided (elementwise max-with-zero) EWMA, then alarms
when the quadratic form of the smoothed state against the asymptotic EWMA
covariance exceeds a threshold. Because the recursion is elementwise, the
smoothed state of any predictor subset is the coordinate projection of the
full-dimension state, which lets one stored full scan serve every subset.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import csv
import numpy as np
from scipy.linalg import solve_triangular

from .events import EventSet
from .panel import AlignedPanel, WeekAxis


class EstimationError(ValueError):
    """Null-model estimation failed (too few baseline weeks, hopeless Sigma)."""


@dataclass(frozen=True, eq=False)
class NullModel:
    """Baseline mean vector and covariance matrix of the predictor subset.

    ``sigma`` is stored post-conditioning: symmetric positive definite, with
    ``ridge_applied``/``ridge_delta`` recording whether (and how much) ridge
    inflation was needed to get there.
    """

    predictor_names: tuple[str, ...]
    mu: np.ndarray
    sigma: np.ndarray
    baseline_week_count: int
    ridge_applied: bool = False
    ridge_delta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "predictor_names", tuple(self.predictor_names))
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        d = len(self.predictor_names)
        if mu.shape != (d,) or sigma.shape != (d, d):
            raise ValueError("mu/sigma dimensions do not match predictor names")
        if not np.allclose(sigma, sigma.T):
            raise ValueError("sigma must be symmetric")

    @property
    def dim(self) -> int:
        return len(self.predictor_names)

    def smoothed_cov(self, lam: float) -> np.ndarray:
        """Asymptotic covariance of the smoothed state: lam/(2-lam) * sigma."""
        return (lam / (2.0 - lam)) * self.sigma

    def subset(self, names: Sequence[str]) -> "NullModel":
        """Project onto a predictor subset (principal submatrix stays SPD)."""
        idx = [self.predictor_names.index(n) for n in names]
        return NullModel(
            predictor_names=tuple(names),
            mu=self.mu[idx],
            sigma=self.sigma[np.ix_(idx, idx)],
            baseline_week_count=self.baseline_week_count,
            ridge_applied=self.ridge_applied,
            ridge_delta=self.ridge_delta,
        )


@dataclass(frozen=True)
class DetectorConfig:
    """Predictor subset plus smoothing parameter and alarm threshold."""

    predictor_names: tuple[str, ...]
    lam: float
    h: float

    def __post_init__(self):
        object.__setattr__(self, "predictor_names", tuple(self.predictor_names))
        if not self.predictor_names:
            raise ValueError("predictor subset must be nonempty")
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lam must be in (0, 1), got {self.lam}")
        if not self.h > 0.0:
            raise ValueError(f"h must be > 0, got {self.h}")


@dataclass(frozen=True, eq=False)
class AlarmTrace:
    """Per-week test statistic with alarm weeks and clustered alarm onsets."""

    E: np.ndarray
    alarm_weeks: np.ndarray
    cluster_onsets: np.ndarray
    S: np.ndarray | None = None


def cluster_onsets(alarm_weeks) -> np.ndarray:
    """First week of each maximal run of consecutive alarm weeks."""
    aw = np.asarray(alarm_weeks, dtype=int)
    if aw.size == 0:
        return aw
    keep = np.ones(aw.size, dtype=bool)
    keep[1:] = np.diff(aw) > 1
    return aw[keep]


def condition_covariance(
    sigma: np.ndarray, max_condition: float = 1e12, delta: float = 1e-8
) -> tuple[np.ndarray, bool, float]:
    """Make a sample covariance usable in an SPD solve.

    Singular or badly conditioned matrices get ridge inflation
    delta * mean(diag) on the diagonal, doubling delta until the Cholesky
    factorization succeeds and the condition number is acceptable.
    """
    sigma = np.asarray(sigma, dtype=float)
    sym = 0.5 * (sigma + sigma.T)

    def usable(m: np.ndarray) -> bool:
        try:
            np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            return False
        return np.linalg.cond(m) <= max_condition

    if usable(sym):
        return sym, False, 0.0
    scale = float(np.mean(np.diag(sym)))
    if scale <= 0.0:
        scale = 1.0
    d = delta
    eye = np.eye(sym.shape[0])
    while d < 1e8:
        candidate = sym + (d * scale) * eye
        if usable(candidate):
            return candidate, True, d * scale
        d *= 2.0
    raise EstimationError("covariance matrix cannot be conditioned to SPD")


def estimate_null(
    panel: AlignedPanel,
    events: EventSet,
    subset: Sequence[str] | None = None,
    week_mask: np.ndarray | None = None,
) -> NullModel:
    """Sample mean and covariance of the subset over non-event weeks.

    ``week_mask`` further restricts the usable weeks (e.g. to a training
    fold). Requires at least d + 1 baseline weeks for d predictors, the
    minimum for a full-rank unbiased covariance.
    """
    names = tuple(subset) if subset is not None else panel.candidate_names()
    if not names:
        raise ValueError("predictor subset must be nonempty")
    base = events.baseline_mask(panel.n_weeks)
    if week_mask is not None:
        base = base & np.asarray(week_mask, dtype=bool)
    n_base = int(base.sum())
    d = len(names)
    if n_base < d + 1:
        raise EstimationError(
            f"need at least {d + 1} baseline weeks for {d} predictors, have {n_base}"
        )
    X = panel.candidate_matrix(names)[base]
    mu = X.mean(axis=0)
    sigma = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    sigma, ridged, delta = condition_covariance(sigma)
    return NullModel(
        predictor_names=names,
        mu=mu,
        sigma=sigma,
        baseline_week_count=n_base,
        ridge_applied=ridged,
        ridge_delta=delta,
    )


def _scan_state(X: np.ndarray, mu: np.ndarray, lam: float, segments) -> np.ndarray:
    """One-sided EWMA recursion over (n, d) observations.

    The state starts at zero at the beginning of each segment; weeks outside
    every segment are left NaN.
    """
    n, d = X.shape
    S = np.full((n, d), np.nan)
    for lo, hi in segments:
        s = np.zeros(d)
        for t in range(lo, hi + 1):
            s = np.maximum(0.0, lam * (X[t] - mu) + (1.0 - lam) * s)
            S[t] = s
    return S


def _quad_form(S: np.ndarray, smoothed_cov: np.ndarray) -> np.ndarray:
    """E_t = S_t' inv(smoothed_cov) S_t via a Cholesky solve, no explicit inverse."""
    L = np.linalg.cholesky(smoothed_cov)
    Z = solve_triangular(L, S.T, lower=True, check_finite=False)
    return np.einsum("ij,ij->j", Z, Z)


def _full_segments(n: int, segments) -> tuple[tuple[int, int], ...]:
    if segments is None:
        return ((0, n - 1),)
    segs = tuple((int(lo), int(hi)) for lo, hi in segments)
    prev_hi = -1
    for lo, hi in segs:
        if not (0 <= lo <= hi < n) or lo <= prev_hi:
            raise ValueError(f"bad scan segments {segs}")
        prev_hi = hi
    return segs


def run_scan(
    panel: AlignedPanel,
    null: NullModel,
    config: DetectorConfig,
    segments=None,
) -> AlarmTrace:
    """Run the scan over the panel; alarms are weeks with E > h, never reset.

    ``segments`` (optional, disjoint sorted (lo, hi) week spans) restarts the
    smoothed state from zero at each span, for fold-independent scans over
    concatenated seasons. The default is a single scan over all weeks.
    """
    if null.predictor_names != config.predictor_names:
        raise ValueError(
            f"null model covers {null.predictor_names}, config asks for "
            f"{config.predictor_names}"
        )
    missing = [n for n in config.predictor_names if n not in panel.candidate_names()]
    if missing:
        raise ValueError(f"panel has no candidate series {missing[0]!r}")

    X = panel.candidate_matrix(config.predictor_names)
    segs = _full_segments(panel.n_weeks, segments)
    S = _scan_state(X, null.mu, config.lam, segs)
    E = _quad_form(S, null.smoothed_cov(config.lam))
    return _trace_from_statistic(E, config.h, S)


def _trace_from_statistic(E: np.ndarray, h: float, S: np.ndarray | None = None) -> AlarmTrace:
    with np.errstate(invalid="ignore"):
        alarms = np.flatnonzero(E > h)
    return AlarmTrace(E=E, alarm_weeks=alarms, cluster_onsets=cluster_onsets(alarms), S=S)


@dataclass(frozen=True, eq=False)
class SharedScanTable:
    """Stored full-dimension smoothed states, one trajectory per lambda.

    Any subset's scan is recovered exactly by projecting the stored state
    onto the subset coordinates and forming the quadratic form with the
    subset's covariance block; no per-subset rescans are needed.
    """

    null: NullModel
    lambdas: tuple[float, ...]
    states: Mapping[float, np.ndarray]
    segments: tuple[tuple[int, int], ...]

    def scan(self, lam: float, subset: Sequence[str], h: float) -> AlarmTrace:
        if lam not in self.states:
            raise KeyError(f"lambda {lam} not in shared table grid {self.lambdas}")
        idx = [self.null.predictor_names.index(n) for n in subset]
        S = self.states[lam][:, idx]
        sub = self.null.subset(subset)
        E = _quad_form(S, sub.smoothed_cov(lam))
        return _trace_from_statistic(E, h, S)


def precompute_shared_states(
    panel: AlignedPanel,
    full_null: NullModel,
    lambda_grid: Sequence[float],
    segments=None,
) -> SharedScanTable:
    """Scan the full candidate set once per lambda and store the states."""
    X = panel.candidate_matrix(full_null.predictor_names)
    segs = _full_segments(panel.n_weeks, segments)
    states = {
        float(lam): _scan_state(X, full_null.mu, float(lam), segs)
        for lam in lambda_grid
    }
    return SharedScanTable(
        null=full_null,
        lambdas=tuple(float(l) for l in lambda_grid),
        states=states,
        segments=segs,
    )


def write_trace_csv(trace: AlarmTrace, axis: WeekAxis, path) -> None:
    """Serialize a trace: week, statistic, alarm and cluster-onset indicators."""
    alarm = np.zeros(axis.length, dtype=int)
    alarm[trace.alarm_weeks] = 1
    onset = np.zeros(axis.length, dtype=int)
    onset[trace.cluster_onsets] = 1
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["week", "E", "alarm", "cluster_onset"])
        for i in range(axis.length):
            writer.writerow([axis.label(i), repr(float(trace.E[i])), alarm[i], onset[i]])
