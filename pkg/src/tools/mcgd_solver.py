"""
Markov chain gradient descent and the SGD-T baseline.

MCGD takes one chain step per iteration and uses the component at the new
state:

    x^k = Proj_X( x^{k-1} - gamma_k (grad f_{j_k}(x^{k-1}) + e^k) ),  k = 1..K

SGD-T restarts a fresh trajectory from a fixed state every iteration and uses
its T-th state, paying T samples per gradient. Both report the objective at
x^k and at the gamma-weighted ergodic average

    xbar^k = sum_{i<=k} gamma_i x^i / sum_{i<=k} gamma_i.
"""

from typing import Any, Dict, List, Optional, Sequence
from dataclasses import dataclass, field
from enum import Enum
import logging
import math

import numpy as np
import pandas as pd
from scipy import stats

from ..core.errors import (
    InsufficientData, NonFiniteIterate, NonPositiveValues, PreconditionViolation, StepBoundExceeded,
)
from ..core.markov_chain import ChainWalker, TransitionMatrix, classify_chain
from ..core.random_streams import Stream, make_rng
from .data_gen import ARStream, ar_trajectory_sample
from .objectives import FeasibleSet, FiniteSumObjective, LossComponent, LossFamily, project

logger = logging.getLogger(__name__)

GAP_CLIP_TOL = 1e-9
MIN_RATE_POINTS = 10
_STEP_BOUND_SLACK = 1e-12


class Setting(str, Enum):
    CONVEX = "convex"
    NONCONVEX = "nonconvex"


class ScheduleFamily(str, Enum):
    POWER = "power"
    CONSTANT = "constant"


class NoiseFamily(str, Enum):
    NONE = "none"
    POWER = "power"


class NoiseDirection(str, Enum):
    SEEDED_RANDOM_UNIT = "seeded_random_unit"
    FIXED_VECTOR = "fixed_vector"


class Condition(str, Enum):
    """Convergence conditions a run can be checked against"""
    ERGODIC_CHAIN = "ergodic_chain"
    CONVEX_STEP = "convex_step_condition"
    NONCONVEX_STEP = "nonconvex_step_condition"
    CONVEX_NOISE = "convex_noise_condition"
    NONCONVEX_NOISE = "nonconvex_noise_condition"
    CONVEX_SET = "convex_compact_set"
    CONVEX_OBJECTIVE = "convex_objective"
    NONCONVEX_SET = "nonconvex_full_space"


@dataclass(frozen=True)
class StepSchedule:
    family: ScheduleFamily
    a: float
    q: float = 0.0

    @classmethod
    def power(cls, a: float, q: float) -> "StepSchedule":
        return cls(ScheduleFamily.POWER, float(a), float(q))

    @classmethod
    def constant(cls, a: float) -> "StepSchedule":
        return cls(ScheduleFamily.CONSTANT, float(a), 0.0)

    def gamma(self, k: int) -> float:
        if self.family == ScheduleFamily.CONSTANT:
            return self.a
        return self.a * k ** (-self.q)

    @property
    def decay_exponent(self) -> float:
        return self.q if self.family == ScheduleFamily.POWER else 0.0


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    family: NoiseFamily = NoiseFamily.NONE
    c: float = 0.0
    p: float = 1.0
    direction: NoiseDirection = NoiseDirection.SEEDED_RANDOM_UNIT
    fixed_vector: Optional[np.ndarray] = None

    @classmethod
    def none(cls) -> "NoiseSchedule":
        return cls()

    @classmethod
    def power(cls, c: float, p: float, direction: NoiseDirection = NoiseDirection.SEEDED_RANDOM_UNIT,
              fixed_vector: Optional[Sequence[float]] = None) -> "NoiseSchedule":
        vector = None if fixed_vector is None else np.asarray(fixed_vector, dtype=float)
        return cls(NoiseFamily.POWER, float(c), float(p), direction, vector)

    @property
    def active(self) -> bool:
        return self.family == NoiseFamily.POWER and self.c != 0

    def magnitude(self, k: int) -> float:
        return self.c * k ** (-self.p) if self.active else 0.0

    def vector(self, k: int, dim: int, rng: np.random.Generator) -> np.ndarray:
        """e^k with ||e^k|| = c k^{-p}"""
        if not self.active:
            return np.zeros(dim)
        if self.direction == NoiseDirection.FIXED_VECTOR:
            direction = self.fixed_vector
        else:
            direction = rng.standard_normal(dim)
        return self.magnitude(k) * direction / np.linalg.norm(direction)


@dataclass(frozen=True)
class ScheduleValidation:
    valid: bool
    condition: Condition
    reason: Optional[str] = None


def validate_schedule(schedule: StepSchedule, setting: Setting) -> ScheduleValidation:
    """
    Convex: sum gamma_k = inf and sum ln(k) gamma_k^2 < inf.
    Nonconvex: sum gamma_k = inf and sum gamma_k^2 < inf.
    For gamma_k = a k^{-q} both hold exactly when 1/2 < q <= 1.
    """
    condition = Condition.CONVEX_STEP if setting == Setting.CONVEX else Condition.NONCONVEX_STEP
    if not schedule.a > 0:
        return ScheduleValidation(False, condition, f"step scale a={schedule.a} must be positive")
    if schedule.family == ScheduleFamily.CONSTANT:
        return ScheduleValidation(False, condition, "constant steps have a divergent sum of squares")
    if schedule.q > 1:
        return ScheduleValidation(False, condition, f"q={schedule.q} > 1: sum of steps converges")
    if 2 * schedule.q <= 1:
        squares = "sum of ln(k) gamma_k^2" if setting == Setting.CONVEX else "sum of gamma_k^2"
        return ScheduleValidation(False, condition, f"q={schedule.q} <= 1/2: {squares} diverges")
    return ScheduleValidation(True, condition)


def validate_noise(noise: NoiseSchedule, setting: Setting, schedule: StepSchedule) -> ScheduleValidation:
    """
    Convex: sum ||e^k||^2 / ln k < inf, i.e. p > 1/2.
    Nonconvex: sum gamma_k ||e^k|| < inf, i.e. p + q > 1.
    """
    if setting == Setting.CONVEX:
        if noise.active and 2 * noise.p <= 1:
            return ScheduleValidation(False, Condition.CONVEX_NOISE,
                                      f"p={noise.p} <= 1/2: sum of ||e^k||^2 / ln k diverges")
        return ScheduleValidation(True, Condition.CONVEX_NOISE)
    if noise.active and noise.p + schedule.decay_exponent <= 1:
        return ScheduleValidation(False, Condition.NONCONVEX_NOISE,
                                  f"p + q = {noise.p + schedule.decay_exponent} <= 1: sum of gamma_k ||e^k|| diverges")
    return ScheduleValidation(True, Condition.NONCONVEX_NOISE)


@dataclass
class RunRecord:
    method: str
    setting: Setting
    seed: int
    chain_id: str
    T: Optional[int]
    iterations: int
    initial_objective: float
    initial_grad_norm_sq: float
    k: List[int] = field(default_factory=list)
    samples_consumed: List[int] = field(default_factory=list)
    gradient_evaluations: List[int] = field(default_factory=list)
    objective_series: List[float] = field(default_factory=list)
    ergodic_objective_series: List[float] = field(default_factory=list)
    grad_norm_series: List[float] = field(default_factory=list)
    min_grad_norm_series: List[float] = field(default_factory=list)
    step_norm_series: List[float] = field(default_factory=list)
    gamma_series: List[float] = field(default_factory=list)
    iterates_logged: List[np.ndarray] = field(default_factory=list, repr=False)
    final_iterate: Optional[np.ndarray] = field(default=None, repr=False)
    final_ergodic_iterate: Optional[np.ndarray] = field(default=None, repr=False)
    step_bound_violations: int = 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "k": self.k,
            "samples_consumed": self.samples_consumed,
            "gradient_evaluations": self.gradient_evaluations,
            "f_value": self.objective_series,
            "ergodic_f_value": self.ergodic_objective_series,
            "grad_norm": self.grad_norm_series,
            "min_grad_norm_sq": self.min_grad_norm_series,
            "step_norm": self.step_norm_series,
            "gamma_k": self.gamma_series,
        })


@dataclass(frozen=True, eq=False)
class GapSeries:
    k: np.ndarray
    samples_consumed: np.ndarray
    gap: np.ndarray
    ergodic_gap: np.ndarray
    clipped: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"k": self.k, "samples_consumed": self.samples_consumed,
                             "gap": self.gap, "ergodic_gap": self.ergodic_gap})


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int


# Sample sources: draw() returns the component for the next gradient

class _ChainSource:
    def __init__(self, objective: FiniteSumObjective, chain: TransitionMatrix, start_state: int,
                 rng: np.random.Generator, T: Optional[int] = None):
        self.objective = objective
        self.walker = ChainWalker(chain, start_state, rng)
        self.start_state = start_state
        self.T = T
        self.cost = 1 if T is None else T

    def draw(self) -> LossComponent:
        if self.T is None:
            return self.objective.components[self.walker.step()]
        self.walker.restart(self.start_state)
        return self.objective.components[int(self.walker.walk(self.T)[-1])]


class _StreamSource:
    def __init__(self, family: LossFamily, stream: ARStream,
                 rng: Optional[np.random.Generator] = None, T: Optional[int] = None):
        self.family = family
        self.stream = stream
        self.rng = rng
        self.T = T
        self.cost = 1 if T is None else T

    def draw(self) -> LossComponent:
        if self.T is None:
            features, label = self.stream.next()
        else:
            features, label = ar_trajectory_sample(self.stream, self.T, self.rng)
        return LossComponent(self.family, features, float(label))


def _infer_setting(objective: FiniteSumObjective, setting: Optional[Setting]) -> Setting:
    if setting is None:
        return Setting.CONVEX if objective.convex else Setting.NONCONVEX
    return Setting(setting)


def _check_preconditions(objective: FiniteSumObjective, feasible: FeasibleSet, schedule: StepSchedule,
                         noise: NoiseSchedule, setting: Setting, unsafe: bool) -> None:
    problems = []
    if setting == Setting.CONVEX:
        if not objective.convex:
            problems.append((Condition.CONVEX_OBJECTIVE, "convex setting declared for a nonconvex objective"))
        if not feasible.is_compact:
            problems.append((Condition.CONVEX_SET, "convex runs need a compact feasible set"))
    else:
        if feasible.is_compact:
            problems.append((Condition.NONCONVEX_SET, "nonconvex runs are unconstrained"))
        if objective.grad_bound_D is None:
            problems.append((Condition.NONCONVEX_SET, "nonconvex runs need a gradient bound D"))

    for check in (validate_schedule(schedule, setting), validate_noise(noise, setting, schedule)):
        if not check.valid:
            problems.append((check.condition, check.reason))

    for condition, detail in problems:
        if not unsafe:
            raise PreconditionViolation(condition.value, detail)
        logger.warning(f"Unsafe run ignores {condition.value}: {detail}")


def _require_ergodic(chain: TransitionMatrix) -> None:
    classification = classify_chain(chain)
    if not classification.ergodic:
        raise PreconditionViolation(
            Condition.ERGODIC_CHAIN.value,
            f"chain must be irreducible and aperiodic (irreducible={classification.irreducible}, "
            f"aperiodic={classification.aperiodic})")


def _iterate(source, metrics: FiniteSumObjective, feasible: FeasibleSet, schedule: StepSchedule,
             noise: NoiseSchedule, iterations: int, x0: Optional[np.ndarray], seed: int, log_every: int,
             record: RunRecord, grad_bound: Optional[float], unsafe: bool = False) -> RunRecord:
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    if log_every < 1:
        raise ValueError(f"log_every must be >= 1, got {log_every}")

    dim = metrics.dimension
    start = np.zeros(dim) if x0 is None else np.asarray(x0, dtype=float)
    x = project(feasible, start)
    if not np.allclose(x, start):
        logger.warning("Initial point was outside the feasible set and has been projected")

    noise_rng = make_rng(seed, Stream.NOISE)
    weighted_sum = np.zeros(dim)
    weight_total = 0.0
    best_grad_sq = math.inf
    samples = 0

    for k in range(1, iterations + 1):
        component = source.draw()
        samples += source.cost
        gamma = schedule.gamma(k)
        error = noise.vector(k, dim, noise_rng)

        x_new = project(feasible, x - gamma * (component.gradient(x) + error))
        if not np.all(np.isfinite(x_new)):
            raise NonFiniteIterate(k, x_new)
        step_norm = float(np.linalg.norm(x_new - x))
        if grad_bound is not None:
            limit = gamma * (grad_bound + float(np.linalg.norm(error)))
            if step_norm > limit * (1 + _STEP_BOUND_SLACK) + _STEP_BOUND_SLACK:
                if not unsafe:
                    raise StepBoundExceeded(k, step_norm, limit)
                record.step_bound_violations += 1
        x = x_new

        weighted_sum += gamma * x
        weight_total += gamma

        if k % log_every == 0 or k == iterations:
            ergodic = weighted_sum / weight_total
            full_grad = metrics.gradient(x)
            grad_sq = float(np.dot(full_grad, full_grad))
            best_grad_sq = min(best_grad_sq, grad_sq)
            record.k.append(k)
            record.samples_consumed.append(samples)
            record.gradient_evaluations.append(k)
            record.objective_series.append(metrics.value(x))
            record.ergodic_objective_series.append(metrics.value(ergodic))
            record.grad_norm_series.append(math.sqrt(grad_sq))
            record.min_grad_norm_series.append(best_grad_sq)
            record.step_norm_series.append(step_norm)
            record.gamma_series.append(gamma)
            record.iterates_logged.append(x.copy())
            logger.debug(f"{record.method} k={k} f={record.objective_series[-1]:.6g} "
                         f"ergodic_f={record.ergodic_objective_series[-1]:.6g}")

    record.final_iterate = x
    record.final_ergodic_iterate = weighted_sum / weight_total
    if record.step_bound_violations:
        logger.warning(f"{record.method}: {record.step_bound_violations} steps exceeded gamma_k * D")
    logger.info(f"{record.method} seed={seed} finished {iterations} iterations, {samples} samples, "
                f"final ergodic f={record.ergodic_objective_series[-1]:.6g}")
    return record


def _new_record(method: str, setting: Setting, seed: int, chain_id: str, T: Optional[int],
                iterations: int, metrics: FiniteSumObjective, feasible: FeasibleSet,
                x0: Optional[np.ndarray]) -> RunRecord:
    start = project(feasible, np.zeros(metrics.dimension) if x0 is None else np.asarray(x0, dtype=float))
    grad = metrics.gradient(start)
    return RunRecord(
        method=method, setting=setting, seed=seed, chain_id=chain_id, T=T, iterations=iterations,
        initial_objective=metrics.value(start), initial_grad_norm_sq=float(np.dot(grad, grad)),
    )


def run_mcgd(objective: FiniteSumObjective, feasible: FeasibleSet, chain: TransitionMatrix,
             schedule: StepSchedule, noise: NoiseSchedule, iterations: int,
             x0: Optional[np.ndarray] = None, start_state: int = 0, seed: int = 0, log_every: int = 1,
             setting: Optional[Setting] = None, unsafe: bool = False, chain_id: str = "P") -> RunRecord:
    """MCGD over a finite chain whose state i selects component f_i"""
    if chain.size != objective.m:
        raise ValueError(f"chain has {chain.size} states, objective has {objective.m} components")
    setting = _infer_setting(objective, setting)
    _require_ergodic(chain)
    _check_preconditions(objective, feasible, schedule, noise, setting, unsafe)

    source = _ChainSource(objective, chain, start_state, make_rng(seed, Stream.TRAJECTORY))
    record = _new_record("mcgd", setting, seed, chain_id, None, iterations, objective, feasible, x0)
    return _iterate(source, objective, feasible, schedule, noise, iterations, x0, seed, log_every,
                    record, objective.grad_bound_D, unsafe)


def run_sgdt(objective: FiniteSumObjective, feasible: FeasibleSet, chain: TransitionMatrix,
             schedule: StepSchedule, T: int, iterations: int,
             x0: Optional[np.ndarray] = None, start_state: int = 0, seed: int = 0, log_every: int = 1,
             setting: Optional[Setting] = None, unsafe: bool = False, chain_id: str = "P") -> RunRecord:
    """SGD-T: every iteration walks T fresh steps from start_state"""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if chain.size != objective.m:
        raise ValueError(f"chain has {chain.size} states, objective has {objective.m} components")
    setting = _infer_setting(objective, setting)
    noise = NoiseSchedule.none()
    _require_ergodic(chain)
    _check_preconditions(objective, feasible, schedule, noise, setting, unsafe)

    source = _ChainSource(objective, chain, start_state, make_rng(seed, Stream.SGDT), T=T)
    record = _new_record(f"sgd{T}", setting, seed, chain_id, T, iterations, objective, feasible, x0)
    return _iterate(source, objective, feasible, schedule, noise, iterations, x0, seed, log_every,
                    record, objective.grad_bound_D, unsafe)


def run_mcgd_stream(family: LossFamily, stream: ARStream, evaluation: FiniteSumObjective,
                    feasible: FeasibleSet, schedule: StepSchedule, noise: NoiseSchedule, iterations: int,
                    x0: Optional[np.ndarray] = None, seed: int = 0, log_every: int = 1,
                    setting: Optional[Setting] = None, unsafe: bool = False) -> RunRecord:
    """MCGD on consecutive AR samples; metrics come from the held-out `evaluation` sum"""
    setting = _infer_setting(evaluation, setting)
    _check_preconditions(evaluation, feasible, schedule, noise, setting, unsafe)
    record = _new_record("mcgd", setting, seed, "ar_stream", None, iterations, evaluation, feasible, x0)
    return _iterate(_StreamSource(family, stream), evaluation, feasible, schedule, noise, iterations,
                    x0, seed, log_every, record, None)


def run_sgdt_stream(family: LossFamily, stream: ARStream, evaluation: FiniteSumObjective,
                    feasible: FeasibleSet, schedule: StepSchedule, T: int, iterations: int,
                    x0: Optional[np.ndarray] = None, seed: int = 0, log_every: int = 1,
                    setting: Optional[Setting] = None, unsafe: bool = False) -> RunRecord:
    """SGD-T on the AR process: each sample is the T-th state of a fresh trajectory from 0"""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    setting = _infer_setting(evaluation, setting)
    noise = NoiseSchedule.none()
    _check_preconditions(evaluation, feasible, schedule, noise, setting, unsafe)
    source = _StreamSource(family, stream, rng=make_rng(seed, Stream.SGDT), T=T)
    record = _new_record(f"sgd{T}", setting, seed, "ar_stream", T, iterations, evaluation, feasible, x0)
    return _iterate(source, evaluation, feasible, schedule, noise, iterations, x0, seed, log_every,
                    record, None)


def iterations_for_budget(budget: int, T: int) -> int:
    """
    Iterations SGD-T can afford on a budget of samples, never fewer than one.

    A budget below T still buys one iteration, which spends T samples.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if budget < T:
        logger.warning(f"Budget of {budget} samples is below T={T}; sgd{T} runs one iteration using {T} samples")
        return 1
    return budget // T


def gap_series(record: RunRecord, f_star: float) -> GapSeries:
    """f - f* for iterates and ergodic averages; negatives are clipped to 0 and counted"""
    gap = np.asarray(record.objective_series) - f_star
    ergodic_gap = np.asarray(record.ergodic_objective_series) - f_star
    negative = (gap < 0).sum() + (ergodic_gap < 0).sum()
    worst = min(gap.min(initial=0.0), ergodic_gap.min(initial=0.0))
    if negative:
        logger.warning(f"{record.method}: clipped {negative} negative gaps (worst {worst:.3e})")
        if worst < -GAP_CLIP_TOL:
            logger.error(f"{record.method}: gap {worst:.3e} below -{GAP_CLIP_TOL}, reference minimum is not a minimum")
    return GapSeries(
        k=np.asarray(record.k),
        samples_consumed=np.asarray(record.samples_consumed),
        gap=np.clip(gap, 0.0, None),
        ergodic_gap=np.clip(ergodic_gap, 0.0, None),
        clipped=int(negative),
    )


def rate_fit(k_values: Sequence[float], values: Sequence[float]) -> RateFit:
    """OLS slope of ln(value) on ln(k) over the trailing half of the series"""
    ks = np.asarray(k_values, dtype=float)
    vals = np.asarray(values, dtype=float)
    if len(ks) != len(vals):
        raise ValueError("k and value series differ in length")
    if len(ks) < MIN_RATE_POINTS:
        raise InsufficientData(f"rate fit needs at least {MIN_RATE_POINTS} points, got {len(ks)}")

    tail = slice(len(ks) // 2, None)
    ks, vals = ks[tail], vals[tail]
    if np.any(vals <= 0) or np.any(ks <= 0):
        raise NonPositiveValues("rate fit needs positive k and values on the trailing half")

    fit = stats.linregress(np.log(ks), np.log(vals))
    return RateFit(slope=float(fit.slope), intercept=float(fit.intercept),
                   r_squared=float(fit.rvalue ** 2), n_points=len(ks))


def samples_to_target(record: RunRecord, f_star: float, fraction: float) -> Optional[int]:
    """Samples consumed when the ergodic gap first drops to fraction * initial gap"""
    initial_gap = record.initial_objective - f_star
    if initial_gap <= 0:
        return 0
    for samples, value in zip(record.samples_consumed, record.ergodic_objective_series):
        if value - f_star <= fraction * initial_gap:
            return int(samples)
    return None


def run_summary(record: RunRecord, f_star: Optional[float], fractions: Sequence[float]) -> Dict[str, Any]:
    """Flat per-run row for summary tables"""
    row: Dict[str, Any] = {
        "method": record.method,
        "seed": record.seed,
        "chain_id": record.chain_id,
        "setting": record.setting.value,
        "iterations": record.iterations,
        "samples_consumed": record.samples_consumed[-1],
        "gradient_evaluations": record.gradient_evaluations[-1],
        "final_f_value": record.objective_series[-1],
        "final_ergodic_f_value": record.ergodic_objective_series[-1],
        "final_min_grad_norm_sq": record.min_grad_norm_series[-1],
        "step_bound_violations": record.step_bound_violations,
    }
    if f_star is not None:
        row["f_star"] = f_star
        row["final_ergodic_gap"] = max(record.ergodic_objective_series[-1] - f_star, 0.0)
        for fraction in fractions:
            row[f"samples_to_{fraction:g}"] = samples_to_target(record, f_star, fraction)
    return row
