"""Out-of-bag post-stratified delete-D jackknife.

Units are dealt into ``B`` buckets (balanced within each arm). Each of the
``M`` iterations deletes ``D`` randomly chosen buckets: the deleted units
fix the strata boundaries, the retained units are post-stratified and give
one replicate estimate. The replicates are averaged for the point estimate
and their spread gives the delete-D standard error.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .core import Estimand, EstimateReport, ExperimentData, Method, as_estimand, g_apply
from .estimators import (
    arm_means,
    baseline_estimate,
    baseline_se,
    imputation_estimate,
    post_stratified_estimate,
    summarize,
)
from .exceptions import ArmSmallerThanB, DegenerateSample
from .regression import LinearModel, fit_control_model, predict
from .stratify import (
    StrataBoundaries,
    assign_labels,
    class_boundaries,
    kde_fit,
    quantile_boundaries,
    root_cum_boundaries,
)

PARTITION_STREAM = 0
ITERATION_STREAM = 1


@dataclass(frozen=True)
class JackknifeConfig:
    n_buckets: int = 20
    n_deleted: int = 4
    n_iter: int = 60
    n_strata: int = 5
    alpha: float = 0.05
    seed: int = 0
    kde_method: str = "exact"

    def __post_init__(self):
        if self.n_buckets < 2:
            raise ValueError(f"n_buckets must be >= 2, got {self.n_buckets}")
        if not 1 <= self.n_deleted < self.n_buckets:
            raise ValueError(f"n_deleted must satisfy 1 <= D < B, got D={self.n_deleted}, B={self.n_buckets}")
        if self.n_iter < 2:
            raise ValueError(f"n_iter must be >= 2, got {self.n_iter}")
        if self.n_strata < 1:
            raise ValueError(f"n_strata must be >= 1, got {self.n_strata}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.kde_method not in ("exact", "binned"):
            raise ValueError(f"unknown kde_method {self.kde_method!r}")

    def replace(self, **changes) -> "JackknifeConfig":
        return dataclasses.replace(self, **changes)

    def echo(self) -> dict:
        return {
            "K": self.n_strata,
            "B": self.n_buckets,
            "D": self.n_deleted,
            "M": self.n_iter,
            "seed": int(self.seed),
        }


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator derived from ``seed`` and a fixed integer path.

    Streams depend only on ``(seed, key)``, never on the order in which they
    are requested.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(key)))


@dataclass(frozen=True, eq=False)
class BucketPartition:
    labels: np.ndarray
    n_buckets: int

    def sizes(self, w=None, arm: int | None = None) -> np.ndarray:
        lab = self.labels if arm is None else self.labels[np.asarray(w) == arm]
        return np.bincount(lab - 1, minlength=self.n_buckets)


def partition_buckets(w, n_buckets: int, rng: np.random.Generator) -> BucketPartition:
    """Shuffle each arm and deal it round-robin into buckets ``1..B``."""
    w = np.asarray(w)
    labels = np.zeros(w.shape[0], dtype=np.int64)
    for arm in (0, 1):
        idx = np.flatnonzero(w == arm)
        if idx.size < n_buckets:
            name = "control" if arm == 0 else "treated"
            raise ArmSmallerThanB(f"{name} arm has {idx.size} units, fewer than B={n_buckets} buckets")
        labels[rng.permutation(idx)] = np.arange(idx.size) % n_buckets + 1
    return BucketPartition(labels=labels, n_buckets=n_buckets)


def jackknife_se(estimates, n_buckets: int, n_deleted: int) -> float:
    """``sqrt((B - D) / (D * M) * sum_m (est_m - mean(est))^2)``."""
    est = np.asarray(estimates, dtype=float)
    if est.size < 2:
        raise ValueError("need at least two replicate estimates")
    dev = est - est.mean()
    return math.sqrt((n_buckets - n_deleted) / (n_deleted * est.size) * float(dev @ dev))


def t_multiplier(n_buckets: int, alpha: float) -> float:
    return float(stats.t.ppf(1.0 - alpha / 2.0, n_buckets - 1))


def confidence_interval(point: float, se: float, n_buckets: int, alpha: float) -> tuple[float, float]:
    """``point -/+ t_{B-1, 1-alpha/2} * se``."""
    if se < 0:
        raise ValueError(f"se must be non-negative, got {se}")
    if se == 0:
        return point, point
    half = t_multiplier(n_buckets, alpha) * se
    return point - half, point + half


def merge_degenerate(n0, n1) -> tuple[np.ndarray, int]:
    """Collapse strata lacking one arm into a neighbour.

    A stratum with no control or no treated units is merged into the
    adjacent stratum with the smaller total count (ties go to the lower
    index), repeating from the lowest index until every stratum has both
    arms or a single stratum is left. Returns the 0-based map from old to
    new stratum and the number of merges.
    """
    groups = [[k] for k in range(len(n0))]
    c0 = [int(v) for v in n0]
    c1 = [int(v) for v in n1]
    merges = 0
    while len(groups) > 1:
        bad = next((i for i in range(len(groups)) if c0[i] == 0 or c1[i] == 0), None)
        if bad is None:
            break
        if bad == 0:
            target = 1
        elif bad == len(groups) - 1:
            target = bad - 1
        else:
            lo, hi = bad - 1, bad + 1
            target = hi if c0[hi] + c1[hi] < c0[lo] + c1[lo] else lo
        groups[target] = sorted(groups[target] + groups[bad])
        c0[target] += c0[bad]
        c1[target] += c1[bad]
        del groups[bad], c0[bad], c1[bad]
        merges += 1
    mapping = np.empty(len(n0), dtype=np.int64)
    for new, members in enumerate(groups):
        mapping[members] = new
    return mapping, merges


@dataclass(frozen=True, eq=False)
class ReplicateTrace:
    iteration: int
    deleted: tuple[int, ...]
    estimate: float
    cuts: np.ndarray
    merges: int
    strata_used: int


@dataclass(frozen=True, eq=False)
class DeleteDResult:
    estimates: np.ndarray
    deleted: list[tuple[int, ...]]
    inclusion_counts: np.ndarray
    partition: BucketPartition
    extras: list = field(default_factory=list)


def delete_d_replicates(
    w,
    cfg: JackknifeConfig,
    statistic: Callable[[np.ndarray, np.ndarray], tuple[float, object]],
) -> DeleteDResult:
    """Evaluate ``statistic(retained_idx, deleted_idx)`` on ``M`` delete-D splits.

    ``statistic`` returns ``(estimate, extra)``; extras are kept in order.
    The bucket partition uses substream ``(seed, 0)`` and iteration ``m``
    draws its deleted buckets from substream ``(seed, 1, m)``.
    """
    partition = partition_buckets(w, cfg.n_buckets, substream(cfg.seed, PARTITION_STREAM))
    n = partition.labels.shape[0]
    estimates = np.empty(cfg.n_iter)
    inclusion = np.zeros(n, dtype=np.int64)
    deleted_sets = []
    extras = []
    held_mask = np.empty(cfg.n_buckets + 1, dtype=bool)
    for m in range(cfg.n_iter):
        rng = substream(cfg.seed, ITERATION_STREAM, m)
        dropped = np.sort(rng.choice(cfg.n_buckets, size=cfg.n_deleted, replace=False)) + 1
        held_mask[:] = False
        held_mask[dropped] = True
        held = held_mask[partition.labels]
        retained = np.flatnonzero(~held)
        deleted = np.flatnonzero(held)
        inclusion[retained] += 1
        estimates[m], extra = statistic(retained, deleted)
        deleted_sets.append(tuple(int(b) for b in dropped))
        extras.append(extra)
    return DeleteDResult(estimates, deleted_sets, inclusion, partition, extras)


BoundaryRule = Callable[[np.ndarray, int], StrataBoundaries]


def _root_cum_rule(kde_method: str) -> BoundaryRule:
    def rule(values: np.ndarray, K: int) -> StrataBoundaries:
        if K == 1:
            return StrataBoundaries.from_interior([])
        try:
            return root_cum_boundaries(kde_fit(values, method=kde_method), K)
        except DegenerateSample:
            # constant scores carry no ordering information: one stratum
            return StrataBoundaries.from_interior([])

    return rule


def boundary_rule(name: str, kde_method: str = "exact") -> BoundaryRule:
    if name == "root-cum":
        return _root_cum_rule(kde_method)
    if name == "quantile":
        return quantile_boundaries
    if name == "class":
        return lambda values, K: class_boundaries(values)
    raise ValueError(f"unknown boundary rule {name!r}; expected root-cum, quantile or class")


def replicate_estimate(
    y: np.ndarray,
    w: np.ndarray,
    psf: np.ndarray,
    boundaries: StrataBoundaries,
    estimand: Estimand,
) -> tuple[float, int, int]:
    """Post-stratified estimate on the given units after merging degenerate strata.

    Returns the estimate, the number of merges and the number of strata
    actually used; when everything collapses into one stratum the estimate
    is the baseline estimate on these units.
    """
    labels = assign_labels(boundaries, psf)
    K = boundaries.K
    merges = 0
    if K > 1:
        n1 = np.bincount(labels - 1, weights=w, minlength=K)
        n0 = np.bincount(labels - 1, minlength=K) - n1
        if np.any(n0 == 0) or np.any(n1 == 0):
            mapping, merges = merge_degenerate(n0, n1)
            labels = mapping[labels - 1] + 1
            K = int(mapping.max()) + 1
    if K == 1:
        m0, m1 = arm_means(y, w)
        return g_apply(estimand, m0, m1), merges, 1
    return post_stratified_estimate(summarize(labels, y, w, K), estimand), merges, K


@dataclass(frozen=True, eq=False)
class OPJResult:
    report: EstimateReport
    replicates: np.ndarray
    traces: list[ReplicateTrace]
    inclusion_counts: np.ndarray
    psf: np.ndarray
    control_model: LinearModel | None
    partition: BucketPartition

    @property
    def merge_events(self) -> int:
        return sum(t.merges for t in self.traces)

    @property
    def degenerate_replicates(self) -> int:
        """Replicates that used fewer strata than boundaries they were given or requested."""
        K = self.report.config.get("K", 1)
        return sum(1 for t in self.traces if t.merges > 0 or t.strata_used < K)

    def retained(self, m: int) -> np.ndarray:
        """Indices of the units used for estimation in iteration ``m`` (1-based)."""
        dropped = np.asarray(self.traces[m - 1].deleted)
        return np.flatnonzero(~np.isin(self.partition.labels, dropped))


def opj_run(
    data: ExperimentData,
    estimand: Estimand | str = Estimand.DIFFERENCE,
    cfg: JackknifeConfig | None = None,
    psf=None,
    rule: str | BoundaryRule = "root-cum",
    method: Method = Method.OPJ,
) -> OPJResult:
    """Run the out-of-bag post-stratified jackknife.

    By default the PSF is the control-arm OLS prediction for every unit, fit
    once on all control units. Passing ``psf`` (one score per unit) skips the
    regression, which is how naive covariate post-stratification is run.
    """
    cfg = cfg or JackknifeConfig()
    estimand = as_estimand(estimand)
    model = None
    if psf is None:
        model = fit_control_model(data)
        psf = predict(model, data)
    else:
        psf = np.asarray(psf, dtype=float).ravel()
        if psf.shape[0] != data.n:
            raise ValueError(f"psf has {psf.shape[0]} entries, data has {data.n} units")
    make_cuts = boundary_rule(rule, cfg.kde_method) if isinstance(rule, str) else rule
    y = np.asarray(data.y)
    w = np.asarray(data.w, dtype=float)
    K = cfg.n_strata

    def statistic(retained, deleted):
        bounds = make_cuts(psf[deleted], K)
        est, merges, used = replicate_estimate(y[retained], w[retained], psf[retained], bounds, estimand)
        return est, (bounds.cuts, merges, used)

    res = delete_d_replicates(data.w, cfg, statistic)
    traces = [
        ReplicateTrace(iteration=m + 1, deleted=res.deleted[m], estimate=float(res.estimates[m]),
                       cuts=cuts, merges=merges, strata_used=used)
        for m, (cuts, merges, used) in enumerate(res.extras)
    ]
    point = float(math.fsum(res.estimates) / cfg.n_iter)
    se = jackknife_se(res.estimates, cfg.n_buckets, cfg.n_deleted)
    lo, hi = confidence_interval(point, se, cfg.n_buckets, cfg.alpha)
    report = EstimateReport(point=point, se=se, ci_low=lo, ci_high=hi, method=method,
                            estimand=estimand, alpha=cfg.alpha, config=cfg.echo())
    return OPJResult(report=report, replicates=res.estimates, traces=traces,
                     inclusion_counts=res.inclusion_counts, psf=psf, control_model=model,
                     partition=res.partition)


def imputation_jackknife(
    data: ExperimentData,
    estimand: Estimand | str = Estimand.DIFFERENCE,
    cfg: JackknifeConfig | None = None,
    aggregate: str = "unit",
) -> EstimateReport:
    """Regression-imputation estimate with a delete-D jackknife standard error.

    The point is the full-sample imputation estimate; each replicate refits
    both arm models on the retained buckets only. ``aggregate`` is passed to
    :func:`imputation_estimate`.
    """
    cfg = cfg or JackknifeConfig()
    estimand = as_estimand(estimand)
    point = imputation_estimate(data, estimand, aggregate)
    y, w, x = np.asarray(data.y), np.asarray(data.w), np.asarray(data.x)

    def statistic(retained, deleted):
        sub = ExperimentData(y[retained], w[retained], x[retained])
        return imputation_estimate(sub, estimand, aggregate), None

    res = delete_d_replicates(data.w, cfg, statistic)
    se = jackknife_se(res.estimates, cfg.n_buckets, cfg.n_deleted)
    lo, hi = confidence_interval(point, se, cfg.n_buckets, cfg.alpha)
    echo = {k: v for k, v in cfg.echo().items() if k != "K"}
    echo["aggregate"] = aggregate
    return EstimateReport(point=point, se=se, ci_low=lo, ci_high=hi, method=Method.IMPUTE,
                          estimand=estimand, alpha=cfg.alpha, config=echo)


def baseline_report(data: ExperimentData, estimand: Estimand | str = Estimand.DIFFERENCE,
                    alpha: float = 0.05) -> EstimateReport:
    """Baseline estimate with its closed-form SE and a normal-quantile interval."""
    estimand = as_estimand(estimand)
    point = baseline_estimate(data, estimand)
    se = baseline_se(data, estimand)
    half = float(stats.norm.ppf(1.0 - alpha / 2.0)) * se
    return EstimateReport(point=point, se=se, ci_low=point - half, ci_high=point + half,
                          method=Method.BASE, estimand=estimand, alpha=alpha, config={})
