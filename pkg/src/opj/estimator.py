"""scikit-learn style estimators wrapping the functional API.

Effect estimators take the treatment vector as a fit parameter::

    est = OPJEstimator(n_strata=5, random_state=7).fit(X, y, treatment=w)
    est.effect_, est.se_, est.ci_

``get_params`` / ``set_params`` / ``clone`` work as for any sklearn
estimator, and :class:`ControlArmPSF` and :class:`PostStratifier` expose the
two halves of the pipeline as a transformer and a clusterer.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import EstimateReport, ExperimentData, as_estimand
from .jackknife import (
    JackknifeConfig,
    baseline_report,
    boundary_rule,
    imputation_jackknife,
    opj_run,
)
from .regression import fit_control_model, predict
from .stratify import assign_labels, kde_fit


def check_experiment(X, y, treatment) -> ExperimentData:
    """Coerce ``X, y, treatment`` into a validated :class:`ExperimentData`."""
    if treatment is None:
        raise TypeError("fit() requires the treatment indicator: fit(X, y, treatment=w)")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return ExperimentData(np.asarray(y, dtype=float).ravel(), np.asarray(treatment).ravel(), X)


def _seed(random_state) -> int:
    if random_state is None:
        return int(np.random.SeedSequence().generate_state(1, dtype=np.uint64)[0])
    if isinstance(random_state, (int, np.integer)):
        return int(random_state)
    raise TypeError("random_state must be None or a non-negative integer")


class _EffectEstimator(BaseEstimator):
    def _store(self, report: EstimateReport):
        self.report_ = report
        self.effect_ = report.point
        self.se_ = report.se
        self.ci_ = (report.ci_low, report.ci_high)
        return self

    def summary(self) -> dict:
        check_is_fitted(self, "report_")
        return self.report_.to_dict()


class BaselineEstimator(_EffectEstimator):
    """Difference (or ratio) of arm means with its closed-form standard error."""

    def __init__(self, estimand="difference", alpha=0.05):
        self.estimand = estimand
        self.alpha = alpha

    def fit(self, X, y, treatment=None):
        data = check_experiment(X, y, treatment)
        return self._store(baseline_report(data, as_estimand(self.estimand), self.alpha))


class _JackknifeMixin:
    def _config(self) -> JackknifeConfig:
        return JackknifeConfig(
            n_buckets=self.n_buckets,
            n_deleted=self.n_deleted,
            n_iter=self.n_iter,
            n_strata=getattr(self, "n_strata", 1),
            alpha=self.alpha,
            seed=_seed(self.random_state),
            kde_method=getattr(self, "kde_method", "exact"),
        )


class ImputationEstimator(_JackknifeMixin, _EffectEstimator):
    """Regression imputation with separate OLS fits per arm; delete-D jackknife SE."""

    def __init__(self, estimand="difference", n_buckets=20, n_deleted=4, n_iter=60,
                 alpha=0.05, aggregate="unit", random_state=None):
        self.estimand = estimand
        self.aggregate = aggregate
        self.n_buckets = n_buckets
        self.n_deleted = n_deleted
        self.n_iter = n_iter
        self.alpha = alpha
        self.random_state = random_state

    def fit(self, X, y, treatment=None):
        data = check_experiment(X, y, treatment)
        report = imputation_jackknife(data, as_estimand(self.estimand), self._config(), self.aggregate)
        return self._store(report)


class OPJEstimator(_JackknifeMixin, _EffectEstimator):
    """Out-of-bag post-stratified jackknife treatment-effect estimator.

    Parameters
    ----------
    n_strata : int
        Number of strata built on the predicted control outcome.
    n_buckets, n_deleted, n_iter : int
        Buckets, buckets deleted per iteration, and number of iterations.
    estimand : {"difference", "ratio"}
    alpha : float
        The interval has nominal coverage ``1 - alpha``.
    rule : {"root-cum", "quantile", "class"}
        Boundary rule applied to the deleted buckets in each iteration.
    random_state : int or None
        Master seed; fixes the bucket partition and every deleted-bucket draw.

    Attributes
    ----------
    effect_, se_, ci_ : point estimate, standard error and interval.
    replicates_ : ndarray of shape (n_iter,)
    traces_ : list of ReplicateTrace
    control_model_ : LinearModel fit on the control arm.
    """

    def __init__(self, n_strata=5, n_buckets=20, n_deleted=4, n_iter=60, estimand="difference",
                 alpha=0.05, rule="root-cum", kde_method="exact", random_state=None):
        self.n_strata = n_strata
        self.n_buckets = n_buckets
        self.n_deleted = n_deleted
        self.n_iter = n_iter
        self.estimand = estimand
        self.alpha = alpha
        self.rule = rule
        self.kde_method = kde_method
        self.random_state = random_state

    def fit(self, X, y, treatment=None, psf=None):
        data = check_experiment(X, y, treatment)
        result = opj_run(data, as_estimand(self.estimand), self._config(), psf=psf, rule=self.rule)
        self.result_ = result
        self.replicates_ = result.replicates
        self.traces_ = result.traces
        self.control_model_ = result.control_model
        return self._store(result.report)


class ControlArmPSF(TransformerMixin, BaseEstimator):
    """Map covariates to the predicted control outcome (the post-stratification factor)."""

    def fit(self, X, y, treatment=None):
        data = check_experiment(X, y, treatment)
        self.model_ = fit_control_model(data)
        self.coef_ = self.model_.slopes
        self.intercept_ = self.model_.intercept
        self.n_features_in_ = data.q
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return predict(self.model_, np.asarray(X, dtype=float)).reshape(-1, 1)


class PostStratifier(ClusterMixin, BaseEstimator):
    """Learn strata boundaries on a one-dimensional score and label new scores 1..K."""

    def __init__(self, n_strata=5, rule="root-cum", kde_method="exact"):
        self.n_strata = n_strata
        self.rule = rule
        self.kde_method = kde_method

    def fit(self, X, y=None):
        values = np.asarray(X, dtype=float).ravel()
        self.boundaries_ = boundary_rule(self.rule, self.kde_method)(values, self.n_strata)
        self.kde_ = kde_fit(values, method=self.kde_method) if self.rule == "root-cum" else None
        self.labels_ = assign_labels(self.boundaries_, values)
        return self

    def predict(self, X):
        check_is_fitted(self, "boundaries_")
        return assign_labels(self.boundaries_, np.asarray(X, dtype=float).ravel())
