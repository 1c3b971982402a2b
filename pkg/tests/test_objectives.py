import math

import pytest
import numpy as np

from src.core.errors import DimensionMismatch, EmptyComponents, NoConvergence, PreconditionViolation
from src.tools.objectives import (
    FeasibleSet, LossComponent, LossFamily, SIGMOID_SQ_GRAD_MAX, assemble_finite_sum,
    least_squares_component, logistic_component, project, quadratic_component,
    reference_minimum, sigmoid_sq_component,
)


def numeric_gradient(func, x, h=1e-6):
    grad = np.zeros_like(x)
    for i in range(len(x)):
        step = np.zeros_like(x)
        step[i] = h
        grad[i] = (func(x + step) - func(x - step)) / (2 * h)
    return grad


@pytest.fixture
def rng():
    return np.random.default_rng(12)


@pytest.fixture
def logistic_components(rng):
    features = rng.normal(size=(8, 3))
    labels = rng.integers(0, 2, size=8)
    return [LossComponent(LossFamily.LOGISTIC, f, float(y)) for f, y in zip(features, labels)]


class TestComponents:

    def test_logistic_at_origin(self):
        xi1 = np.array([1.0, -2.0])
        value, grad = logistic_component(np.zeros(2), xi1, 1.0)
        assert value == pytest.approx(math.log(2))
        assert np.allclose(grad, -0.5 * xi1)

    def test_logistic_is_stable_for_large_margins(self):
        value, grad = logistic_component(np.array([1000.0]), np.array([1.0]), 0.0)
        assert value == pytest.approx(1000.0)
        assert np.all(np.isfinite(grad))

    def test_sigmoid_sq_value(self):
        value, _ = sigmoid_sq_component(np.zeros(2), np.array([3.0, 4.0]), 1.0)
        assert value == pytest.approx(0.125)

    def test_least_squares(self):
        value, grad = least_squares_component(np.array([1.0, 2.0]), np.array([1.0, 1.0]), 1.0)
        assert value == pytest.approx(2.0)
        assert np.allclose(grad, [2.0, 2.0])

    def test_quadratic(self):
        value, grad = quadratic_component(np.array([2.0, 0.0]), np.array([1.0, 0.0]), 3.0)
        assert value == pytest.approx(1.5)
        assert np.allclose(grad, [3.0, 0.0])

    @pytest.mark.parametrize("family,target", [
        (LossFamily.LOGISTIC, 1.0),
        (LossFamily.SIGMOID_SQ, 0.0),
        (LossFamily.LEAST_SQUARES, 0.7),
        (LossFamily.QUADRATIC, 2.0),
    ])
    def test_gradient_matches_finite_differences(self, rng, family, target):
        component = LossComponent(family, rng.normal(size=4), target)
        for x in rng.normal(size=(20, 4)):
            exact = component.gradient(x)
            numeric = numeric_gradient(component.value, x)
            assert np.linalg.norm(exact - numeric) <= 1e-5 * np.linalg.norm(exact) + 1e-8

    @pytest.mark.parametrize("family,target", [
        (LossFamily.LOGISTIC, 0.0),
        (LossFamily.LEAST_SQUARES, -1.3),
        (LossFamily.QUADRATIC, 0.5),
    ])
    def test_convex_families_satisfy_jensen(self, rng, family, target):
        component = LossComponent(family, rng.normal(size=3), target)
        for _ in range(100):
            x, y = rng.normal(scale=3.0, size=(2, 3))
            theta = rng.uniform()
            mixed = component.value(theta * x + (1 - theta) * y)
            chord = theta * component.value(x) + (1 - theta) * component.value(y)
            assert mixed <= chord + 1e-12 * (1.0 + abs(chord))

    def test_sigmoid_sq_gradient_bound(self, rng):
        component = LossComponent(LossFamily.SIGMOID_SQ, np.array([2.0, 0.0]), 1.0)
        norms = [np.linalg.norm(component.gradient(x)) for x in rng.normal(scale=3, size=(2000, 2))]
        assert max(norms) <= SIGMOID_SQ_GRAD_MAX * 2.0 + 1e-12

    def test_convexity_flags(self):
        assert LossComponent(LossFamily.LOGISTIC, np.ones(2), 1.0).convex
        assert not LossComponent(LossFamily.SIGMOID_SQ, np.ones(2), 1.0).convex
        assert not LossComponent(LossFamily.QUADRATIC, np.ones(2), -1.0).convex

    def test_least_squares_bound_needs_compact_set(self):
        component = LossComponent(LossFamily.LEAST_SQUARES, np.array([1.0, 0.0]), 1.0)
        assert component.gradient_bound(FeasibleSet.full_space()) is None
        assert component.gradient_bound(FeasibleSet.ball([0.0, 0.0], 2.0)) == pytest.approx(3.0)


class TestFeasibleSet:

    def test_ball_projection(self):
        ball = FeasibleSet.ball([0.0, 0.0], 1.0)
        assert np.allclose(project(ball, [3.0, 4.0]), [0.6, 0.8])
        assert np.allclose(project(ball, [0.1, 0.2]), [0.1, 0.2])

    def test_box_projection(self):
        box = FeasibleSet.box([0.0, -1.0], [1.0, 1.0])
        assert np.allclose(project(box, [2.0, -3.0]), [1.0, -1.0])

    def test_full_space_is_identity(self):
        x = np.array([5.0, -7.0])
        projected = project(FeasibleSet.full_space(), x)
        assert np.array_equal(projected, x)
        assert projected is not x

    @pytest.mark.parametrize("feasible", [
        FeasibleSet.ball([1.0, -1.0, 0.5], 2.0),
        FeasibleSet.box([-1.0, 0.0, -2.0], [1.0, 3.0, -1.0]),
        FeasibleSet.full_space(),
    ], ids=["ball", "box", "full_space"])
    def test_projection_is_idempotent_and_nonexpansive(self, rng, feasible):
        for _ in range(100):
            x, y = rng.normal(scale=4.0, size=(2, 3))
            px, py = project(feasible, x), project(feasible, y)
            assert feasible.contains(px)
            assert np.allclose(project(feasible, px), px, atol=1e-12)
            assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-12

    def test_projection_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            project(FeasibleSet.ball([0.0, 0.0], 1.0), [1.0, 2.0, 3.0])

    def test_invalid_sets(self):
        with pytest.raises(ValueError):
            FeasibleSet.ball([0.0], 0.0)
        with pytest.raises(ValueError):
            FeasibleSet.box([1.0], [0.0])

    def test_samples_lie_in_set(self):
        ball = FeasibleSet.ball([1.0, 1.0, 1.0], 0.5)
        points = ball.sample(100, 3, seed=0)
        assert points.shape == (100, 3)
        assert all(ball.contains(p) for p in points)


class TestAssembleFiniteSum:

    def test_empty_components(self):
        with pytest.raises(EmptyComponents):
            assemble_finite_sum([], FeasibleSet.full_space())

    def test_mixed_dimensions(self):
        components = [
            LossComponent(LossFamily.LOGISTIC, np.ones(2), 1.0),
            LossComponent(LossFamily.LOGISTIC, np.ones(3), 0.0),
        ]
        with pytest.raises(DimensionMismatch):
            assemble_finite_sum(components, FeasibleSet.full_space())

    def test_set_dimension_checked(self, logistic_components):
        with pytest.raises(DimensionMismatch):
            assemble_finite_sum(logistic_components, FeasibleSet.ball([0.0, 0.0], 1.0))

    def test_value_and_gradient_are_averages(self, logistic_components, rng):
        objective = assemble_finite_sum(logistic_components, FeasibleSet.ball(np.zeros(3), 2.0), n_samples=64)
        x = rng.normal(size=3)
        assert objective.value(x) == pytest.approx(np.mean([c.value(x) for c in logistic_components]))
        assert np.allclose(objective.gradient(x), np.mean([c.gradient(x) for c in logistic_components], axis=0))
        assert objective.component_eval(3, x) == pytest.approx(logistic_components[3].value(x))

    def test_constants(self, logistic_components):
        objective = assemble_finite_sum(logistic_components, FeasibleSet.ball(np.zeros(3), 2.0), n_samples=64)
        largest = max(np.linalg.norm(c.features) for c in logistic_components)
        assert objective.convex
        assert objective.grad_bound_D >= largest - 1e-12
        assert objective.lipschitz_grad_L >= 0.25 * largest ** 2 - 1e-12
        assert objective.value_bound_H > 0

    def test_mixed_families_are_batched(self, rng):
        components = [
            LossComponent(LossFamily.LOGISTIC, rng.normal(size=2), 1.0),
            LossComponent(LossFamily.SIGMOID_SQ, rng.normal(size=2), 0.0),
            LossComponent(LossFamily.QUADRATIC, rng.normal(size=2), 1.0),
        ]
        objective = assemble_finite_sum(components, FeasibleSet.full_space(), n_samples=16)
        x = rng.normal(size=2)
        assert not objective.convex
        assert np.allclose(objective.component_values(x), [c.value(x) for c in components])


class TestReferenceMinimum:

    def test_quadratic_mean(self, rng):
        centers = rng.normal(size=(5, 2))
        components = [LossComponent(LossFamily.QUADRATIC, c, 1.0) for c in centers]
        feasible = FeasibleSet.ball(np.zeros(2), 10.0)
        objective = assemble_finite_sum(components, feasible, n_samples=32)
        x_star, f_star = reference_minimum(objective, feasible)
        assert np.allclose(x_star, centers.mean(axis=0), atol=1e-9)
        spread = 0.5 * np.mean(np.sum((centers - centers.mean(axis=0)) ** 2, axis=1))
        assert f_star == pytest.approx(spread, abs=1e-12)

    def test_least_squares_interpolation(self, rng):
        features = rng.normal(size=(12, 3))
        beta = np.array([1.0, -2.0, 0.5])
        components = [LossComponent(LossFamily.LEAST_SQUARES, f, float(f @ beta)) for f in features]
        feasible = FeasibleSet.ball(np.zeros(3), 10.0)
        objective = assemble_finite_sum(components, feasible, n_samples=32)
        x_star, f_star = reference_minimum(objective, feasible)
        assert np.allclose(x_star, beta, atol=1e-9)
        assert f_star == pytest.approx(0.0, abs=1e-15)

    def test_constrained_least_squares_hits_boundary(self, rng):
        features = rng.normal(size=(12, 3))
        beta = np.array([1.0, -2.0, 0.5])
        components = [LossComponent(LossFamily.LEAST_SQUARES, f, float(f @ beta)) for f in features]
        feasible = FeasibleSet.ball(np.zeros(3), 1.0)
        objective = assemble_finite_sum(components, feasible, n_samples=32)
        x_star, f_star = reference_minimum(objective, feasible)
        assert np.linalg.norm(x_star) == pytest.approx(1.0, abs=1e-9)
        assert f_star > 0
        for point in feasible.sample(64, 3, seed=1):
            assert objective.value(point) >= f_star - 1e-9

    def test_unfinished_descent_raises(self, logistic_components):
        feasible = FeasibleSet.ball(np.zeros(3), 5.0)
        objective = assemble_finite_sum(logistic_components, feasible, n_samples=16)
        with pytest.raises(NoConvergence):
            reference_minimum(objective, feasible, max_iter=3)

    def test_loose_reference_on_request(self, logistic_components, caplog):
        feasible = FeasibleSet.ball(np.zeros(3), 5.0)
        objective = assemble_finite_sum(logistic_components, feasible, n_samples=16)
        x_star, f_star = reference_minimum(objective, feasible, max_iter=3, strict=False)
        assert feasible.contains(x_star)
        assert f_star == pytest.approx(objective.value(x_star))
        assert f_star < objective.value(np.zeros(3))
        assert "unconverged" in caplog.text

    def test_nonconvex_rejected(self, rng):
        components = [LossComponent(LossFamily.SIGMOID_SQ, rng.normal(size=2), 1.0)]
        objective = assemble_finite_sum(components, FeasibleSet.full_space(), n_samples=8)
        with pytest.raises(PreconditionViolation):
            reference_minimum(objective, FeasibleSet.full_space())
