"""
Finite-sum objectives f(x) = (1/M) sum_i f_i(x) over a feasible set.

Component families: logistic loss, sigmoid-squared loss, least squares, and a
quadratic used for closed-form checks. Each family has a scalar form (the
*_component functions) and a batched form used to evaluate the whole sum.
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple
from dataclasses import dataclass, field
from enum import Enum
import logging
import math

import numpy as np
from scipy import linalg
from scipy.special import expit
from scipy.stats import qmc

from ..core.errors import DimensionMismatch, EmptyComponents, NoConvergence, PreconditionViolation

logger = logging.getLogger(__name__)

SIGMOID_SQ_GRAD_MAX = 4.0 / 27.0
DEFAULT_SAMPLES = 1000
FULL_SPACE_SAMPLING_RADIUS = 10.0
REFERENCE_TOL = 1e-12
REFERENCE_MAX_ITER = 10**6


class SetKind(str, Enum):
    FULL_SPACE = "full_space"
    EUCLIDEAN_BALL = "euclidean_ball"
    BOX = "box"


class LossFamily(str, Enum):
    LOGISTIC = "logistic"
    SIGMOID_SQ = "sigmoid_sq"
    LEAST_SQUARES = "least_squares"
    QUADRATIC = "quadratic"


@dataclass(frozen=True, eq=False)
class FeasibleSet:
    kind: SetKind
    center: Optional[np.ndarray] = None
    radius: Optional[float] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == SetKind.EUCLIDEAN_BALL:
            if self.center is None or self.radius is None or not self.radius > 0:
                raise ValueError("ball needs a center and a positive radius")
        elif self.kind == SetKind.BOX:
            if self.lower is None or self.upper is None or self.lower.shape != self.upper.shape:
                raise ValueError("box needs lower and upper bounds of equal shape")
            if np.any(self.lower > self.upper):
                raise ValueError("box lower bound exceeds upper bound")

    @classmethod
    def full_space(cls) -> "FeasibleSet":
        return cls(kind=SetKind.FULL_SPACE)

    @classmethod
    def ball(cls, center: Sequence[float], radius: float) -> "FeasibleSet":
        return cls(kind=SetKind.EUCLIDEAN_BALL, center=np.asarray(center, dtype=float), radius=float(radius))

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "FeasibleSet":
        return cls(kind=SetKind.BOX, lower=np.asarray(lower, dtype=float), upper=np.asarray(upper, dtype=float))

    @property
    def dimension(self) -> Optional[int]:
        if self.kind == SetKind.EUCLIDEAN_BALL:
            return len(self.center)
        if self.kind == SetKind.BOX:
            return len(self.lower)
        return None

    @property
    def is_compact(self) -> bool:
        return self.kind != SetKind.FULL_SPACE

    def contains(self, x: np.ndarray, tol: float = 1e-12) -> bool:
        if self.kind == SetKind.EUCLIDEAN_BALL:
            return bool(np.linalg.norm(x - self.center) <= self.radius + tol)
        if self.kind == SetKind.BOX:
            return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))
        return True

    def farthest_distance(self, point: np.ndarray) -> float:
        """max over x in the set of ||x - point||"""
        if self.kind == SetKind.EUCLIDEAN_BALL:
            return float(np.linalg.norm(self.center - point) + self.radius)
        if self.kind == SetKind.BOX:
            return float(np.linalg.norm(np.maximum(np.abs(self.lower - point), np.abs(self.upper - point))))
        return math.inf

    def sample(self, count: int, dim: int, seed: int) -> np.ndarray:
        """Scrambled Sobol points in the set (full space: a cube around the origin)"""
        sobol = qmc.Sobol(d=dim, scramble=True, seed=seed)
        unit = sobol.random_base2(m=max(0, math.ceil(math.log2(max(count, 1)))))[:count]
        if self.kind == SetKind.BOX:
            return self.lower + unit * (self.upper - self.lower)
        if self.kind == SetKind.EUCLIDEAN_BALL:
            cube = self.center + self.radius * (2.0 * unit - 1.0)
            return np.array([project(self, x) for x in cube])
        return FULL_SPACE_SAMPLING_RADIUS * (2.0 * unit - 1.0)


def _check_dimension(feasible: FeasibleSet, x: np.ndarray) -> None:
    dim = feasible.dimension
    if dim is not None and x.shape != (dim,):
        raise DimensionMismatch(f"point of shape {x.shape} for a set of dimension {dim}")


def project(feasible: FeasibleSet, x: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the set"""
    x = np.asarray(x, dtype=float)
    _check_dimension(feasible, x)
    if feasible.kind == SetKind.EUCLIDEAN_BALL:
        offset = x - feasible.center
        norm = np.linalg.norm(offset)
        if norm <= feasible.radius:
            return x.copy()
        return feasible.center + offset * (feasible.radius / norm)
    if feasible.kind == SetKind.BOX:
        return np.clip(x, feasible.lower, feasible.upper)
    return x.copy()


# Scalar component forms

def logistic_component(x: np.ndarray, xi1: np.ndarray, xi2: float) -> Tuple[float, np.ndarray]:
    """-y log s(t) - (1-y) log(1-s(t)) with t = <x, xi1>"""
    t = float(np.dot(x, xi1))
    value = xi2 * np.logaddexp(0.0, -t) + (1.0 - xi2) * np.logaddexp(0.0, t)
    return float(value), (expit(t) - xi2) * xi1


def sigmoid_sq_component(x: np.ndarray, xi1: np.ndarray, xi2: float) -> Tuple[float, np.ndarray]:
    """0.5 (s(t) - y)^2, nonconvex"""
    s = expit(float(np.dot(x, xi1)))
    r = s - xi2
    return 0.5 * r * r, (r * s * (1.0 - s)) * xi1


def least_squares_component(beta: np.ndarray, x_i: np.ndarray, y_i: float) -> Tuple[float, np.ndarray]:
    r = float(np.dot(x_i, beta)) - y_i
    return 0.5 * r * r, r * x_i


def quadratic_component(x: np.ndarray, center: np.ndarray, curvature: float) -> Tuple[float, np.ndarray]:
    offset = x - center
    return 0.5 * curvature * float(np.dot(offset, offset)), curvature * offset


# Batched forms: features (m, d), targets (m,) -> values (m,), gradients (m, d)

def _logistic_batch(features, targets, x):
    t = features @ x
    values = targets * np.logaddexp(0.0, -t) + (1.0 - targets) * np.logaddexp(0.0, t)
    return values, (expit(t) - targets)[:, None] * features


def _sigmoid_sq_batch(features, targets, x):
    s = expit(features @ x)
    r = s - targets
    return 0.5 * r * r, (r * s * (1.0 - s))[:, None] * features


def _least_squares_batch(features, targets, x):
    r = features @ x - targets
    return 0.5 * r * r, r[:, None] * features


def _quadratic_batch(centers, curvatures, x):
    offsets = x[None, :] - centers
    return 0.5 * curvatures * np.einsum("ij,ij->i", offsets, offsets), curvatures[:, None] * offsets


_SCALAR: Dict[LossFamily, Callable] = {
    LossFamily.LOGISTIC: logistic_component,
    LossFamily.SIGMOID_SQ: sigmoid_sq_component,
    LossFamily.LEAST_SQUARES: least_squares_component,
    LossFamily.QUADRATIC: quadratic_component,
}

_BATCH: Dict[LossFamily, Callable] = {
    LossFamily.LOGISTIC: _logistic_batch,
    LossFamily.SIGMOID_SQ: _sigmoid_sq_batch,
    LossFamily.LEAST_SQUARES: _least_squares_batch,
    LossFamily.QUADRATIC: _quadratic_batch,
}


@dataclass(frozen=True, eq=False)
class LossComponent:
    """
    One term f_i of a finite sum.

    `features` is xi^1 / x_i for the data losses and the center for the
    quadratic; `target` is the label / response, or the curvature.
    """
    family: LossFamily
    features: np.ndarray
    target: float

    @property
    def dimension(self) -> int:
        return len(self.features)

    @property
    def convex(self) -> bool:
        if self.family == LossFamily.QUADRATIC:
            return self.target >= 0
        return self.family != LossFamily.SIGMOID_SQ

    def value_and_gradient(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        return _SCALAR[self.family](x, self.features, self.target)

    def value(self, x: np.ndarray) -> float:
        return self.value_and_gradient(x)[0]

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.value_and_gradient(x)[1]

    def gradient_bound(self, feasible: FeasibleSet) -> Optional[float]:
        """Analytic sup of ||grad f_i|| over the set, None when unbounded"""
        norm = float(np.linalg.norm(self.features))
        if self.family == LossFamily.LOGISTIC:
            return norm
        if self.family == LossFamily.SIGMOID_SQ:
            return SIGMOID_SQ_GRAD_MAX * norm
        if self.family == LossFamily.LEAST_SQUARES:
            if not feasible.is_compact:
                return None
            reach = feasible.farthest_distance(np.zeros(self.dimension))
            return (norm * reach + abs(self.target)) * norm
        if self.target == 0:
            return 0.0
        if not feasible.is_compact:
            return None
        return abs(self.target) * feasible.farthest_distance(self.features)

    def lipschitz_bound(self) -> float:
        """Lipschitz constant of grad f_i"""
        norm_sq = float(np.dot(self.features, self.features))
        if self.family == LossFamily.LOGISTIC:
            return 0.25 * norm_sq
        if self.family == LossFamily.SIGMOID_SQ:
            # |d/dt (s - y) s (1 - s)| <= 1/4 + 1/(6 sqrt 3) < 0.35
            return 0.35 * norm_sq
        if self.family == LossFamily.LEAST_SQUARES:
            return norm_sq
        return abs(self.target)


@dataclass(eq=False)
class FiniteSumObjective:
    components: Tuple[LossComponent, ...]
    dimension: int
    convex: bool
    lipschitz_grad_L: Optional[float] = None
    grad_bound_D: Optional[float] = None
    value_bound_H: Optional[float] = None
    name: str = "objective"
    _groups: List[Tuple[np.ndarray, LossFamily, np.ndarray, np.ndarray]] = field(
        default_factory=list, init=False, repr=False)

    def __post_init__(self):
        for family in LossFamily:
            idx = np.array([i for i, c in enumerate(self.components) if c.family == family], dtype=np.int64)
            if len(idx):
                features = np.stack([self.components[i].features for i in idx])
                targets = np.array([self.components[i].target for i in idx], dtype=float)
                self._groups.append((idx, family, features, targets))

    @property
    def m(self) -> int:
        return len(self.components)

    def component_eval(self, i: int, x: np.ndarray) -> float:
        return self.components[i].value(x)

    def component_grad(self, i: int, x: np.ndarray) -> np.ndarray:
        return self.components[i].gradient(x)

    def component_values(self, x: np.ndarray) -> np.ndarray:
        values = np.empty(self.m)
        for idx, family, features, targets in self._groups:
            values[idx] = _BATCH[family](features, targets, x)[0]
        return values

    def value(self, x: np.ndarray) -> float:
        """(1/M) sum_i f_i(x), compensated summation"""
        return math.fsum(self.component_values(x)) / self.m

    def gradient(self, x: np.ndarray) -> np.ndarray:
        total = np.zeros(self.dimension)
        for _, family, features, targets in self._groups:
            total += _BATCH[family](features, targets, x)[1].sum(axis=0)
        return total / self.m


def assemble_finite_sum(components: Sequence[LossComponent], feasible: FeasibleSet,
                        n_samples: int = DEFAULT_SAMPLES, seed: int = 0,
                        name: str = "objective") -> FiniteSumObjective:
    """
    Build f = (1/M) sum f_i and estimate L, D and H on the feasible set.

    D is the analytic gradient bound when every component has one, otherwise
    the largest sampled gradient norm. H is the largest per-component spread
    of sampled values. L is the larger of the analytic per-component bound
    and the sampled difference quotient.
    """
    components = tuple(components)
    if not components:
        raise EmptyComponents("finite sum needs at least one component")
    dims = {c.dimension for c in components}
    if len(dims) != 1:
        raise DimensionMismatch(f"components have mixed dimensions {sorted(dims)}")
    dim = dims.pop()
    if feasible.dimension is not None and feasible.dimension != dim:
        raise DimensionMismatch(f"components have dimension {dim}, set has {feasible.dimension}")

    objective = FiniteSumObjective(
        components=components,
        dimension=dim,
        convex=all(c.convex for c in components),
        name=name,
    )

    points = feasible.sample(n_samples, dim, seed)
    max_grad = 0.0
    lipschitz = max(c.lipschitz_bound() for c in components)
    value_min = np.full(objective.m, np.inf)
    value_max = np.full(objective.m, -np.inf)
    previous = None
    for x in points:
        grads = np.empty((objective.m, dim))
        for idx, family, features, targets in objective._groups:
            values, grads[idx] = _BATCH[family](features, targets, x)
            value_min[idx] = np.minimum(value_min[idx], values)
            value_max[idx] = np.maximum(value_max[idx], values)
        max_grad = max(max_grad, float(np.linalg.norm(grads, axis=1).max()))
        if previous is not None:
            step = float(np.linalg.norm(x - previous[0]))
            if step > 0:
                quotient = np.linalg.norm(grads - previous[1], axis=1).max() / step
                lipschitz = max(lipschitz, float(quotient))
        previous = (x, grads)
    spread = float((value_max - value_min).max())

    analytic = [c.gradient_bound(feasible) for c in components]
    if all(b is not None for b in analytic):
        grad_bound = max(max(analytic), max_grad)
    else:
        grad_bound = max_grad
        logger.info(f"{name}: no analytic gradient bound on {feasible.kind.value}, using sampled D={grad_bound:.4g}")

    objective.lipschitz_grad_L = lipschitz
    objective.grad_bound_D = grad_bound
    objective.value_bound_H = spread
    logger.info(f"Assembled {name}: M={objective.m} d={dim} convex={objective.convex} "
                f"L={lipschitz:.4g} D={grad_bound:.4g} H={spread:.4g}")
    return objective


def _least_squares_minimizer(objective: FiniteSumObjective) -> np.ndarray:
    features = np.stack([c.features for c in objective.components])
    targets = np.array([c.target for c in objective.components])
    gram = features.T @ features
    try:
        return linalg.solve(gram, features.T @ targets, assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        solution, *_ = linalg.lstsq(features, targets)
        return solution


def reference_minimum(objective: FiniteSumObjective, feasible: FeasibleSet,
                      max_iter: int = REFERENCE_MAX_ITER, x0: Optional[np.ndarray] = None,
                      strict: bool = True) -> Tuple[np.ndarray, float]:
    """
    (x*, f*) for a convex objective.

    Pure least squares uses the normal equations when their solution is
    feasible; everything else runs projected gradient descent with step 1/L
    until a step is shorter than 1e-12. Reaching `max_iter` first raises
    NoConvergence, unless `strict` is off, in which case the last iterate
    is returned with a warning.
    """
    if not objective.convex:
        raise PreconditionViolation("convex_objective", "reference minimum needs a convex objective")

    if all(c.family == LossFamily.LEAST_SQUARES for c in objective.components):
        solution = _least_squares_minimizer(objective)
        if feasible.contains(solution):
            return solution, objective.value(solution)

    lipschitz = objective.lipschitz_grad_L or max(c.lipschitz_bound() for c in objective.components)
    step = 1.0 / max(lipschitz, 1e-12)
    x = project(feasible, np.zeros(objective.dimension) if x0 is None else x0)
    for iteration in range(1, max_iter + 1):
        x_new = project(feasible, x - step * objective.gradient(x))
        if not np.all(np.isfinite(x_new)):
            raise NoConvergence(f"reference descent diverged at iteration {iteration}")
        moved = float(np.linalg.norm(x_new - x))
        x = x_new
        if moved <= REFERENCE_TOL:
            break
    else:
        detail = f"reference descent for {objective.name} still moving {moved:.3e} after {max_iter} iterations"
        if strict:
            raise NoConvergence(detail)
        logger.warning(f"Using unconverged reference: {detail}")

    return x, objective.value(x)
