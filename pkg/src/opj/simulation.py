"""Monte Carlo harness for the simulation study.

Covariates: ``X1, X2 ~ N(0, 1)``, ``X3`` uniform on
``{-sqrt2, -sqrt2/2, 0, sqrt2/2, sqrt2}``, noise ``eps ~ N(0, 1)``.
Each replication draws a fresh dataset with exactly ``n0`` controls and
``n1`` treated units, and every requested method is run on that same
dataset.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Estimand, ExperimentData, as_estimand
from .exceptions import OPJError
from .jackknife import JackknifeConfig, baseline_report, imputation_jackknife, opj_run

SQRT2 = math.sqrt(2.0)
X3_SUPPORT = np.array([-SQRT2, -SQRT2 / 2, 0.0, SQRT2 / 2, SQRT2])

DATA_STREAM = 0
METHOD_STREAM = 1


class OutcomeForm(str, enum.Enum):
    INDEPENDENT = "independent"
    LINEAR = "linear"
    QUADRATIC = "quadratic"


class EffectForm(str, enum.Enum):
    NONE = "none"
    LINEAR = "linear"
    QUADRATIC = "quadratic"
    CONSTANT = "constant"


LEGAL_FORMS = {
    (OutcomeForm.INDEPENDENT, EffectForm.NONE),
    (OutcomeForm.LINEAR, EffectForm.LINEAR),
    (OutcomeForm.LINEAR, EffectForm.CONSTANT),
    (OutcomeForm.QUADRATIC, EffectForm.QUADRATIC),
    (OutcomeForm.QUADRATIC, EffectForm.CONSTANT),
}

SCENARIOS = {
    "independent": (OutcomeForm.INDEPENDENT, EffectForm.NONE),
    "lin-lin": (OutcomeForm.LINEAR, EffectForm.LINEAR),
    "lin-const": (OutcomeForm.LINEAR, EffectForm.CONSTANT),
    "quad-quad": (OutcomeForm.QUADRATIC, EffectForm.QUADRATIC),
    "quad-const": (OutcomeForm.QUADRATIC, EffectForm.CONSTANT),
}

METHODS = ("base", "impute", "opj", "naive-x1", "naive-x2", "naive-x3")


@dataclass(frozen=True)
class ScenarioSpec:
    outcome_form: OutcomeForm
    effect_form: EffectForm
    estimand: Estimand = Estimand.DIFFERENCE
    n0: int = 1000
    n1: int = 1000
    reps: int = 2000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "outcome_form", OutcomeForm(self.outcome_form))
        object.__setattr__(self, "effect_form", EffectForm(self.effect_form))
        object.__setattr__(self, "estimand", as_estimand(self.estimand))
        if (self.outcome_form, self.effect_form) not in LEGAL_FORMS:
            raise ValueError(f"illegal scenario: {self.outcome_form.value} outcome with "
                             f"{self.effect_form.value} effect")
        if self.n0 < 1 or self.n1 < 1 or self.reps < 1:
            raise ValueError("n0, n1 and reps must be positive")

    @classmethod
    def named(cls, name: str, **kwargs) -> "ScenarioSpec":
        try:
            outcome, effect = SCENARIOS[name]
        except KeyError:
            raise ValueError(f"unknown scenario {name!r}; expected one of {sorted(SCENARIOS)}") from None
        return cls(outcome, effect, **kwargs)


def gen_covariates(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n x 3`` matrix with columns X1, X2 (standard normal) and X3 (five-point uniform)."""
    if n < 1:
        raise ValueError("n must be positive")
    x = np.empty((n, 3))
    x[:, :2] = rng.standard_normal((n, 2))
    x[:, 2] = X3_SUPPORT[rng.integers(0, 5, size=n)]
    return x


def _base_and_effect(spec: ScenarioSpec, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
    n = x.shape[0]
    if spec.outcome_form is OutcomeForm.INDEPENDENT:
        return np.zeros(n), np.zeros(n)
    base = 1 + 3 * x1 - 2 * x2 + x3
    if spec.outcome_form is OutcomeForm.QUADRATIC:
        base = base + 2 * x1**2 + 3 * x2**2 + x3**2
    if spec.effect_form is EffectForm.CONSTANT:
        effect = np.full(n, 0.2)
    elif spec.effect_form is EffectForm.LINEAR:
        effect = (1 + x1 + 2 * x2 + 3 * x3) / 5
    else:
        effect = (1 + x1 + 2 * x2 + 3 * x3 - x1**2 - 2 * x2**2 + 3 * x3**2) / 5
    return base, effect


def gen_outcome(spec: ScenarioSpec, x, w, rng: np.random.Generator | None = None, eps=None) -> np.ndarray:
    """Outcome ``base(x) + effect(x) * w + eps``; ``eps`` is drawn from ``rng`` unless given."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    w = np.asarray(w, dtype=float)
    if eps is None:
        eps = rng.standard_normal(x.shape[0])
    base, effect = _base_and_effect(spec, x)
    return base + effect * w + np.asarray(eps, dtype=float)


def population_means(spec: ScenarioSpec) -> tuple[float, float]:
    """Analytic ``E Y(0)`` and ``E Y(1)`` (``E X^2 = 1`` for all three covariates)."""
    if spec.outcome_form is OutcomeForm.INDEPENDENT:
        return 0.0, 0.0
    ey0 = 1.0 if spec.outcome_form is OutcomeForm.LINEAR else 7.0
    if spec.effect_form is EffectForm.QUADRATIC:
        effect = (1 - 1 - 2 + 3) / 5
    else:
        effect = 0.2
    return ey0, ey0 + effect


def true_tau(spec: ScenarioSpec) -> float:
    ey0, ey1 = population_means(spec)
    if spec.estimand is Estimand.DIFFERENCE:
        return ey1 - ey0
    return ey1 / ey0


def simulate_dataset(spec: ScenarioSpec, rng: np.random.Generator) -> ExperimentData:
    n = spec.n0 + spec.n1
    x = gen_covariates(n, rng)
    w = np.zeros(n, dtype=np.int8)
    w[rng.permutation(n)[: spec.n1]] = 1
    y = gen_outcome(spec, x, w, rng)
    return ExperimentData(y, w, x)


@dataclass(frozen=True)
class SimulationMetrics:
    mean_bias: float
    mean_se: float
    rmse: float
    coverage: float
    reps: int


def aggregate_metrics(points, ses, cis, tau: float) -> SimulationMetrics:
    """Mean bias, mean SE, RMSE and interval coverage of ``tau``."""
    points = np.asarray(points, dtype=float)
    ses = np.asarray(ses, dtype=float)
    cis = np.asarray(cis, dtype=float).reshape(-1, 2)
    if not points.size or not points.size == ses.size == cis.shape[0]:
        raise ValueError("points, ses and cis must have the same non-zero length")
    err = points - tau
    covered = (cis[:, 0] <= tau) & (tau <= cis[:, 1])
    return SimulationMetrics(
        mean_bias=float(np.mean(err)),
        mean_se=float(np.mean(ses)),
        rmse=float(np.sqrt(np.mean(err * err))),
        coverage=float(np.mean(covered)),
        reps=int(points.size),
    )


def replication_seed(seed: int, rep: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=(rep, METHOD_STREAM))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# g of the mean predictions: the per-unit ratio is unstable once predicted
# control outcomes straddle zero, as they do under the linear outcome
SIM_IMPUTE_AGGREGATE = "mean"


def run_replication(spec: ScenarioSpec, rep: int, methods, cfg: JackknifeConfig,
                    impute_aggregate: str = SIM_IMPUTE_AGGREGATE) -> dict:
    """Run every method on replication ``rep``; returns ``{method: (point, se, lo, hi)}``."""
    rng = np.random.default_rng(np.random.SeedSequence(int(spec.seed), spawn_key=(rep, DATA_STREAM)))
    data = simulate_dataset(spec, rng)
    jk = cfg.replace(seed=replication_seed(spec.seed, rep))
    out = {}
    for method in methods:
        if method == "base":
            r = baseline_report(data, spec.estimand, cfg.alpha)
        elif method == "impute":
            r = imputation_jackknife(data, spec.estimand, jk, impute_aggregate)
        elif method == "opj":
            r = opj_run(data, spec.estimand, jk).report
        elif method in ("naive-x1", "naive-x2", "naive-x3"):
            col = int(method[-1]) - 1
            rule = "class" if col == 2 else "quantile"
            r = opj_run(data, spec.estimand, jk, psf=data.x[:, col], rule=rule).report
        else:
            raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
        out[method] = (r.point, r.se, r.ci_low, r.ci_high)
    return out


class ReplicationFailed(RuntimeError):
    def __init__(self, rep: int, seed: int, cause: Exception):
        super().__init__(f"replication {rep} (scenario seed {seed}) failed: {cause}")
        self.rep = rep
        self.seed = seed
        self.cause = cause


@dataclass(frozen=True, eq=False)
class SimulationResult:
    spec: ScenarioSpec
    tau: float
    metrics: dict[str, SimulationMetrics]
    estimates: dict[str, np.ndarray] = field(repr=False)

    def errors(self, method: str) -> np.ndarray:
        return self.estimates[method][:, 0] - self.tau


def _run_one(spec, rep, methods, cfg, impute_aggregate):
    try:
        return run_replication(spec, rep, methods, cfg, impute_aggregate)
    except OPJError as exc:
        raise ReplicationFailed(rep, spec.seed, exc) from exc


def run_monte_carlo(
    spec: ScenarioSpec,
    methods=("base", "impute", "opj"),
    cfg: JackknifeConfig | None = None,
    n_jobs: int = 1,
    impute_aggregate: str = SIM_IMPUTE_AGGREGATE,
) -> SimulationResult:
    """Repeat the scenario ``spec.reps`` times and aggregate per-method metrics.

    Replications draw from streams derived from ``(spec.seed, rep)`` so the
    result does not depend on ``n_jobs``. ``impute_aggregate`` selects how
    the imputation estimator combines predictions for the ratio.
    """
    cfg = cfg or JackknifeConfig()
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
    if n_jobs == 1:
        rows = [_run_one(spec, rep, methods, cfg, impute_aggregate) for rep in range(spec.reps)]
    else:
        from joblib import Parallel, delayed

        rows = Parallel(n_jobs=n_jobs)(
            delayed(_run_one)(spec, rep, methods, cfg, impute_aggregate) for rep in range(spec.reps)
        )
    tau = true_tau(spec)
    estimates = {m: np.array([row[m] for row in rows]) for m in methods}
    metrics = {
        m: aggregate_metrics(est[:, 0], est[:, 1], est[:, 2:], tau) for m, est in estimates.items()
    }
    return SimulationResult(spec=spec, tau=tau, metrics=metrics, estimates=estimates)


def naive_psf_run(spec: ScenarioSpec, covariate: int, cfg: JackknifeConfig | None = None,
                  n_jobs: int = 1) -> SimulationMetrics:
    """Post-stratify on a raw covariate (1-3) instead of the model PSF.

    X1 and X2 use equally spaced quantile cuts, X3 one stratum per level.
    """
    if covariate not in (1, 2, 3):
        raise ValueError(f"covariate must be 1, 2 or 3, got {covariate}")
    method = f"naive-x{covariate}"
    return run_monte_carlo(spec, (method,), cfg, n_jobs).metrics[method]
