"""Ordinary least squares on a subset of units, used for the PSF and for imputation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .core import ExperimentData
from .exceptions import DimensionMismatch, RankDeficient, SubsetTooSmall

RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Intercept first, then one coefficient per covariate."""

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float).ravel()
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    @property
    def slopes(self) -> np.ndarray:
        return self.coefficients[1:]

    def predict(self, x) -> np.ndarray:
        return predict(self, x)


def design_matrix(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    return np.column_stack([np.ones(x.shape[0]), x])


def _lstsq_qr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(a)
    sv = np.linalg.svd(r, compute_uv=False)
    if sv[-1] < RANK_TOL * sv[0]:
        raise RankDeficient(
            f"design is rank deficient (singular value ratio {sv[-1] / sv[0]:.3g})"
        )
    return solve_triangular(r, q.T @ b, lower=False)


def fit_ols(data: ExperimentData, subset=None) -> LinearModel:
    """Least-squares fit of ``y`` on ``[1, x]`` over ``subset`` (all units when None).

    Solved through a QR factorisation of the design. Raises
    :class:`SubsetTooSmall` with fewer than ``q + 2`` units and
    :class:`RankDeficient` when the singular value ratio drops below 1e-10.
    """
    if subset is None:
        idx = np.arange(data.n)
    else:
        idx = np.asarray(subset)
        if idx.dtype == bool:
            if idx.shape != (data.n,):
                raise DimensionMismatch(f"boolean subset has shape {idx.shape}, expected ({data.n},)")
            idx = np.flatnonzero(idx)
        elif idx.size and (idx.min() < -data.n or idx.max() >= data.n):
            raise IndexError(f"subset indices out of range for {data.n} units")
    p = data.q + 1
    if idx.size < p + 1:
        raise SubsetTooSmall(f"need at least {p + 1} units to fit {p} coefficients, got {idx.size}")
    return LinearModel(_lstsq_qr(design_matrix(data.x[idx]), data.y[idx]))


def fit_control_model(data: ExperimentData) -> LinearModel:
    """Fit on every control unit; the result is the PSF model."""
    try:
        return fit_ols(data, data.w == 0)
    except (RankDeficient, SubsetTooSmall) as exc:
        raise type(exc)(f"control arm: {exc}", arm=0) from exc


def fit_arm_models(data: ExperimentData) -> tuple[LinearModel, LinearModel]:
    """Separate fits for the control and treated arms, in that order."""
    models = []
    for arm, name in ((0, "control"), (1, "treated")):
        try:
            models.append(fit_ols(data, data.w == arm))
        except (RankDeficient, SubsetTooSmall) as exc:
            raise type(exc)(f"{name} arm: {exc}", arm=arm) from exc
    return models[0], models[1]


def predict(model: LinearModel, data) -> np.ndarray:
    """Linear prediction for every row of ``data`` (ExperimentData or covariate matrix)."""
    x = data.x if isinstance(data, ExperimentData) else np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[1] + 1 != model.coefficients.shape[0]:
        raise DimensionMismatch(
            f"model has {model.coefficients.shape[0]} coefficients but data has {x.shape[1]} covariates"
        )
    return model.coefficients[0] + x @ model.coefficients[1:]
