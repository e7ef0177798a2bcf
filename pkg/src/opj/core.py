"""Shared data model: experiment data, estimands and estimate reports."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from os import PathLike
from typing import Any

import numpy as np

from .exceptions import (
    DivisionByZero,
    EmptyArm,
    InvalidTreatmentIndicator,
    MalformedInput,
    NonFiniteValue,
    ShapeMismatch,
)

RATIO_ZERO_TOL = 1e-12


class Estimand(str, enum.Enum):
    """Contrast between the two arm means."""

    DIFFERENCE = "difference"
    RATIO = "ratio"

    def __call__(self, mean0: float, mean1: float) -> float:
        return g_apply(self, mean0, mean1)


class Method(str, enum.Enum):
    BASE = "base"
    IMPUTE = "impute"
    OPJ = "opj"
    NAIVE_PS = "naive-ps"


def as_estimand(value: Estimand | str) -> Estimand:
    if isinstance(value, Estimand):
        return value
    try:
        return Estimand(str(value).lower())
    except ValueError:
        raise ValueError(f"unknown estimand {value!r}; expected 'difference' or 'ratio'") from None


def g_apply(estimand: Estimand | str, mean0: float, mean1: float) -> float:
    """Apply the contrast ``g(mean0, mean1)``.

    Difference gives ``mean1 - mean0``; ratio gives ``mean1 / mean0`` and
    raises :class:`DivisionByZero` when ``|mean0|`` is below
    ``1e-12 * max(1, |mean1|)``.
    """
    estimand = as_estimand(estimand)
    if estimand is Estimand.DIFFERENCE:
        return float(mean1 - mean0)
    if abs(mean0) < RATIO_ZERO_TOL * max(1.0, abs(mean1)):
        raise DivisionByZero(f"ratio estimand undefined: control mean {mean0!r} is zero")
    return float(mean1 / mean0)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ExperimentData:
    """Outcomes ``y``, binary treatment ``w`` and covariates ``x`` (no intercept column).

    Arrays are copied and made read-only; the invariants are checked by
    :func:`validate` on construction.
    """

    y: np.ndarray
    w: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        w_raw = np.asarray(self.w)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(self, "w", w_raw)
        validate(self)
        object.__setattr__(self, "w", _readonly(w_raw.astype(np.int8)))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def q(self) -> int:
        return self.x.shape[1]

    @property
    def n0(self) -> int:
        return int(np.count_nonzero(self.w == 0))

    @property
    def n1(self) -> int:
        return int(np.count_nonzero(self.w == 1))

    def subset(self, idx) -> "ExperimentData":
        idx = np.asarray(idx)
        return ExperimentData(self.y[idx], self.w[idx], self.x[idx])


def validate(data: ExperimentData) -> None:
    """Raise if ``data`` breaks any invariant of :class:`ExperimentData`."""
    y, w, x = np.asarray(data.y), np.asarray(data.w), np.asarray(data.x)
    if y.ndim != 1:
        raise ShapeMismatch(f"y must be one-dimensional, got shape {y.shape}")
    if w.ndim != 1:
        raise ShapeMismatch(f"w must be one-dimensional, got shape {w.shape}")
    if x.ndim != 2:
        raise ShapeMismatch(f"x must be two-dimensional, got shape {x.shape}")
    n = y.shape[0]
    if w.shape[0] != n or x.shape[0] != n:
        raise ShapeMismatch(f"row counts differ: y={n}, w={w.shape[0]}, x={x.shape[0]}")
    if n < 2:
        raise ShapeMismatch(f"need at least 2 units, got {n}")
    if w.dtype.kind not in "biuf":
        raise InvalidTreatmentIndicator(f"treatment indicators must be numeric, got dtype {w.dtype}")
    bad = np.flatnonzero((w != 0) & (w != 1))
    if bad.size:
        raise InvalidTreatmentIndicator(
            f"treatment indicator at unit {bad[0]} is {w[bad[0]]!r}; expected 0 or 1"
        )
    if not np.all(np.isfinite(y)):
        raise NonFiniteValue(f"non-finite outcome at unit {np.flatnonzero(~np.isfinite(y))[0]}")
    if not np.all(np.isfinite(x)):
        row = np.flatnonzero(~np.all(np.isfinite(x), axis=1))[0]
        raise NonFiniteValue(f"non-finite covariate at unit {row}")
    n1 = int(np.count_nonzero(w == 1))
    if n1 == 0:
        raise EmptyArm("treated arm is empty")
    if n1 == n:
        raise EmptyArm("control arm is empty")


@dataclass(frozen=True)
class EstimateReport:
    point: float
    se: float
    ci_low: float
    ci_high: float
    method: Method
    estimand: Estimand
    alpha: float
    config: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.se >= 0:
            raise ValueError(f"standard error must be non-negative, got {self.se}")
        if not self.ci_low <= self.point <= self.ci_high:
            raise ValueError(
                f"interval ({self.ci_low}, {self.ci_high}) does not contain point {self.point}"
            )

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method.value,
            "estimand": self.estimand.value,
            "point": self.point,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "alpha": self.alpha,
            "config": dict(self.config),
        }


def read_experiment_csv(path: str | PathLike) -> ExperimentData:
    """Load a ``w,y,x1,...,xq`` CSV (header required)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedInput(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[:2] != ["w", "y"]:
            raise MalformedInput(f"{path}: header must start with 'w,y', got {','.join(header[:2])!r}")
        width = len(header)
        ws, ys, xs = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise MalformedInput(f"{path}: row {lineno} has {len(row)} fields, expected {width}")
            cells = [c.strip() for c in row]
            for col, cell in zip(header, cells):
                if cell == "":
                    raise MalformedInput(f"{path}: row {lineno} column {col!r} is missing")
            try:
                w = int(cells[0])
            except ValueError:
                raise MalformedInput(
                    f"{path}: row {lineno} column 'w' is {cells[0]!r}; expected integer 0 or 1"
                ) from None
            if w not in (0, 1):
                raise MalformedInput(f"{path}: row {lineno} column 'w' is {w}; expected 0 or 1")
            vals = []
            for col, cell in zip(header[1:], cells[1:]):
                try:
                    v = float(cell)
                except ValueError:
                    raise MalformedInput(
                        f"{path}: row {lineno} column {col!r} is {cell!r}; expected a number"
                    ) from None
                if not math.isfinite(v):
                    raise MalformedInput(f"{path}: row {lineno} column {col!r} is not finite")
                vals.append(v)
            ws.append(w)
            ys.append(vals[0])
            xs.append(vals[1:])
    if not ys:
        raise MalformedInput(f"{path}: no data rows")
    x = np.array(xs, dtype=float).reshape(len(ys), width - 2)
    return ExperimentData(np.array(ys), np.array(ws), x)
