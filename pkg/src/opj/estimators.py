"""Point estimators: baseline, regression imputation and post-stratified."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Estimand, ExperimentData, as_estimand, g_apply
from .exceptions import DivisionByZero, EmptyCell
from .regression import fit_arm_models, predict
from .stratify import StrataAssignment


def arm_means(y: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    treated = w == 1
    return float(np.mean(y[~treated])), float(np.mean(y[treated]))


def baseline_estimate(data: ExperimentData, estimand: Estimand | str) -> float:
    """``g`` applied to the plain arm means."""
    m0, m1 = arm_means(data.y, data.w)
    return g_apply(estimand, m0, m1)


def baseline_se(data: ExperimentData, estimand: Estimand | str) -> float:
    """Closed-form standard error of :func:`baseline_estimate`.

    Difference: ``sqrt(s0^2/N0 + s1^2/N1)``. Ratio: the delta-method
    ``sqrt(s1^2/(N1*m0^2) + m1^2*s0^2/(N0*m0^4))``.
    """
    estimand = as_estimand(estimand)
    treated = data.w == 1
    y0, y1 = data.y[~treated], data.y[treated]
    if y0.size < 2 or y1.size < 2:
        raise ValueError("baseline standard error needs at least 2 units per arm")
    v0 = float(np.var(y0, ddof=1)) / y0.size
    v1 = float(np.var(y1, ddof=1)) / y1.size
    if estimand is Estimand.DIFFERENCE:
        return math.sqrt(v0 + v1)
    m0, m1 = float(np.mean(y0)), float(np.mean(y1))
    g_apply(estimand, m0, m1)  # zero-mean guard
    return math.sqrt(v1 / m0**2 + m1**2 * v0 / m0**4)


IMPUTE_AGGREGATES = ("unit", "mean")


def imputation_estimate(data: ExperimentData, estimand: Estimand | str, aggregate: str = "unit") -> float:
    """Regression-imputation estimate from arm-wise OLS fits.

    ``aggregate="unit"`` averages ``g`` over the per-unit predicted potential
    outcomes; ``"mean"`` applies ``g`` to the averaged predictions. The two
    agree for the difference. For the ratio the per-unit form breaks down
    once predicted control outcomes approach zero, which the mean form avoids.
    """
    estimand = as_estimand(estimand)
    if aggregate not in IMPUTE_AGGREGATES:
        raise ValueError(f"aggregate must be 'unit' or 'mean', got {aggregate!r}")
    model0, model1 = fit_arm_models(data)
    pred0 = predict(model0, data)
    pred1 = predict(model1, data)
    if estimand is Estimand.DIFFERENCE:
        return float(np.mean(pred1 - pred0))
    if aggregate == "mean":
        return g_apply(estimand, float(np.mean(pred0)), float(np.mean(pred1)))
    tiny = np.abs(pred0) < 1e-12 * np.maximum(1.0, np.abs(pred1))
    if tiny.any():
        raise DivisionByZero(f"predicted control outcome of unit {np.flatnonzero(tiny)[0]} is zero")
    return float(np.mean(pred1 / pred0))


@dataclass(frozen=True, eq=False)
class StrataSummary:
    """Stratum weights ``n_k / N`` and arm-wise stratum means (NaN for empty cells)."""

    weights: np.ndarray
    mean0: np.ndarray
    mean1: np.ndarray
    n: np.ndarray
    n0: np.ndarray
    n1: np.ndarray

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def empty_cells(self) -> np.ndarray:
        """Boolean ``(K, 2)`` mask of stratum/arm cells without units."""
        return np.column_stack([self.n0 == 0, self.n1 == 0])

    def stratified_means(self) -> tuple[float, float]:
        """``sum_k n_k * mean_k(w) / N`` per arm, accumulated without intermediate rounding."""
        if self.empty_cells.any():
            k = int(np.flatnonzero(self.empty_cells.any(axis=1))[0]) + 1
            raise EmptyCell(f"stratum {k} lacks units from one arm (n0={self.n0[k-1]}, n1={self.n1[k-1]})")
        if self.K == 1:
            return float(self.mean0[0]), float(self.mean1[0])
        total = int(self.n.sum())
        return (math.fsum(self.n * self.mean0) / total, math.fsum(self.n * self.mean1) / total)


def summarize(labels, y, w, K: int) -> StrataSummary:
    """Build a :class:`StrataSummary` from 1-based labels, outcomes and treatment."""
    idx = np.asarray(labels) - 1
    treated = np.asarray(w) == 1
    n = np.bincount(idx, minlength=K)
    n1 = np.bincount(idx, weights=treated, minlength=K).astype(np.int64)
    n0 = n - n1
    s1 = np.bincount(idx, weights=np.where(treated, y, 0.0), minlength=K)
    s0 = np.bincount(idx, weights=np.where(treated, 0.0, y), minlength=K)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean0 = np.where(n0 > 0, s0 / n0, np.nan)
        mean1 = np.where(n1 > 0, s1 / n1, np.nan)
    return StrataSummary(weights=n / n.sum(), mean0=mean0, mean1=mean1, n=n, n0=n0, n1=n1)


def strata_summary(data: ExperimentData, assignment: StrataAssignment) -> StrataSummary:
    if assignment.labels.shape[0] != data.n:
        raise ValueError(f"assignment covers {assignment.labels.shape[0]} units, data has {data.n}")
    return summarize(assignment.labels, data.y, data.w, assignment.K)


def post_stratified_estimate(summary: StrataSummary, estimand: Estimand | str) -> float:
    """``g`` applied to the weight-averaged stratum means of each arm."""
    m0, m1 = summary.stratified_means()
    return g_apply(estimand, m0, m1)


@dataclass(frozen=True, eq=False)
class VarianceDecomposition:
    """Observed-outcome approximation to the within/between strata variances.

    ``within[k, w]`` is the sample variance of arm ``w`` in stratum ``k + 1``
    (NaN where the cell has fewer than two units, see ``insufficient``);
    ``between[w]`` is ``sum_k n_k (mean_k(w) - mean(w))^2 / (N - 1)`` over
    strata where arm ``w`` is present.
    """

    within: np.ndarray
    between: np.ndarray
    insufficient: np.ndarray


def variance_decomposition(data: ExperimentData, assignment: StrataAssignment) -> VarianceDecomposition:
    K = assignment.K
    labels = assignment.labels
    within = np.full((K, 2), np.nan)
    insufficient = np.zeros((K, 2), dtype=bool)
    summary = strata_summary(data, assignment)
    for k in range(K):
        in_k = labels == k + 1
        for arm in (0, 1):
            cell = data.y[in_k & (data.w == arm)]
            if cell.size < 2:
                insufficient[k, arm] = True
            else:
                within[k, arm] = np.var(cell, ddof=1)
    overall = arm_means(data.y, data.w)
    between = np.empty(2)
    for arm, means in ((0, summary.mean0), (1, summary.mean1)):
        present = ~np.isnan(means)
        dev = means[present] - overall[arm]
        between[arm] = float(np.sum(summary.n[present] * dev * dev)) / (data.n - 1)
    return VarianceDecomposition(within=within, between=between, insufficient=insufficient)
