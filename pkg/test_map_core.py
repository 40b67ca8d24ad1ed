"""
Tests des domaines, cartes, jacobiennes et de l'algèbre linéaire dense
"""

import math

import numpy as np
import pytest

from errors import ConfigError, DimensionMismatch, DomainViolation, NonFinite, SingularJacobian
from fixtures import FIXTURE_BUILDERS, MapRecipe, build_fixture, expression_map, fixture_catalog, with_source
from map_core import (
    DIRECT_NORM_MAX_DIM,
    BoundaryKind,
    DomainSpec,
    JacobianKind,
    JacobianSource,
    MapSpec,
    eval_jacobian,
    factorize,
    inv_operator_norm,
    inverse_norm_of,
    solve_linear,
)


def _fixture_points(name: str, count: int = 100, seed: int = 0) -> np.ndarray:
    """Points aléatoires reproductibles dans le domaine de chaque fixture"""
    m = build_fixture(name)
    rng = np.random.default_rng(seed)
    if name == "square2d":
        radius = rng.uniform(0.2, 2.0, count)
        angle = rng.uniform(-math.pi, math.pi, count)
        return np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
    return rng.uniform(-2.0, 2.0, (count, m.dim))


class TestDomainSpec:
    def test_whole_space(self):
        d = DomainSpec.whole(2)
        assert d.contains([1e9, -1e9])
        assert d.scale == 1.0
        assert d.epsilon == pytest.approx(2e-9)

    def test_box(self):
        d = DomainSpec.box([0.0, 0.0], [1.0, 2.0])
        assert d.margin([0.5, 0.5]) == pytest.approx(0.5)
        assert not d.contains([1.5, 0.5])
        assert d.scale == pytest.approx(math.sqrt(5.0))
        assert d.nearest_boundary([0.9, 1.0]) is BoundaryKind.OUTER

    def test_ball(self):
        d = DomainSpec.ball([1.0, 0.0], 2.0)
        assert d.margin([1.0, 0.0]) == pytest.approx(2.0)
        assert not d.contains([3.5, 0.0])
        assert d.scale == 4.0

    def test_punctured_plane(self):
        d = DomainSpec.punctured([-math.inf] * 2, [math.inf] * 2, [(0.0, 0.0)], 1e-6)
        assert d.epsilon == 1e-6
        assert not d.contains([0.0, 5e-7])
        assert d.contains([0.0, 1e-3])
        assert d.nearest_boundary([0.0, 1e-3]) is BoundaryKind.EXCLUDED
        np.testing.assert_array_equal(d.nearest_excluded([3.0, 4.0]), [0.0, 0.0])

    def test_box_bounded(self):
        d = DomainSpec.punctured([-math.inf] * 2, [math.inf] * 2, [(0.0, 0.0)], 1e-6)
        assert d.is_box_bounded([0.5, 0.5], [2.0, 2.0])
        assert not d.is_box_bounded([-1.0, -1.0], [1.0, 1.0])
        assert not DomainSpec.box([0.0], [1.0]).is_box_bounded([0.0], [0.5])

    def test_predicate(self):
        d = DomainSpec.predicate(lambda x: x[0] > 0.0, lambda x: float(x[0]))
        assert d.contains([0.5])
        assert not d.contains([-0.5])
        assert d.is_box_bounded([0.5], [1.0])


class TestMapSpec:
    def test_base_point_must_be_inside(self):
        with pytest.raises(DomainViolation):
            MapSpec.from_expression("x1", 1, [2.0], domain=DomainSpec.box([0.0], [1.0]))

    def test_base_point_dimension(self):
        with pytest.raises(DimensionMismatch):
            MapSpec.from_expression("x1; x2", 2, [0.0])

    def test_y0_follows_base_point(self):
        m = MapSpec.from_expression("x1^2 - x2^2; 2*x1*x2", 2, [1.0, 1.0])
        np.testing.assert_allclose(m.y0, [0.0, 2.0])

    def test_eval_checked_rejects_outside(self):
        m = build_fixture("square2d")
        with pytest.raises(DomainViolation):
            m.eval_checked([0.0, 0.0])

    def test_non_finite_evaluation(self):
        m = MapSpec.from_expression("1/(x1 - 1)", 1, [0.0])
        with pytest.raises(NonFinite):
            m([1.0])

    def test_python_callable_differentiated_by_duals(self):
        m = MapSpec(
            dim=2,
            evaluate=lambda x: np.array([x[0] ** 3, np.sin(x[1]) * x[0]]),
            jacobian_source=JacobianSource.autodiff(),
            domain=DomainSpec.whole(2),
            x0=(0.0, 0.0),
        )
        jac = eval_jacobian(m, [2.0, 0.5])
        np.testing.assert_allclose(jac, [[12.0, 0.0], [math.sin(0.5), 2.0 * math.cos(0.5)]])


class TestJacobianSources:
    @pytest.mark.parametrize("name", sorted(FIXTURE_BUILDERS))
    def test_autodiff_matches_analytic_and_differences(self, name):
        m = build_fixture(name)
        ad = with_source(m, JacobianKind.AUTODIFF)
        fd = with_source(m, JacobianKind.FINITE_DIFFERENCE)
        for x in _fixture_points(name):
            exact = eval_jacobian(m, x)
            np.testing.assert_allclose(eval_jacobian(ad, x), exact, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(eval_jacobian(fd, x), exact, rtol=1e-5, atol=1e-5)

    @pytest.mark.parametrize("name", sorted(FIXTURE_BUILDERS))
    def test_expression_text_matches_evaluator(self, name):
        m = build_fixture(name)
        from_text = MapSpec.from_expression(
            "; ".join(f.source for f in fixture_catalog() if f.name == name), m.dim, m.x0, m.domain
        )
        for x in _fixture_points(name, 20, seed=1):
            np.testing.assert_allclose(from_text(x), m(x), rtol=1e-12, atol=1e-12)


class TestLinearAlgebra:
    def test_solve(self):
        A = np.array([[0.0, 2.0], [1.0, 1.0]])
        np.testing.assert_allclose(solve_linear(A, [4.0, 3.0]), [1.0, 2.0])

    def test_singular(self):
        assert factorize(np.array([[1.0, 2.0], [2.0, 4.0]])).singular
        assert factorize(np.zeros((2, 2))).singular
        with pytest.raises(SingularJacobian):
            solve_linear(np.array([[1.0, 2.0], [2.0, 4.0]]), [1.0, 1.0])

    def test_not_square(self):
        with pytest.raises(DimensionMismatch):
            factorize(np.ones((2, 3)))

    def test_inverse_norm_diagonal(self):
        assert inverse_norm_of(np.diag([2.0, 4.0])) == pytest.approx(0.5, abs=1e-9)

    def test_inverse_norm_random(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            q1, _ = np.linalg.qr(rng.standard_normal((3, 3)))
            q2, _ = np.linalg.qr(rng.standard_normal((3, 3)))
            A = q1 @ np.diag([0.5, 2.0, 5.0]) @ q2
            assert inverse_norm_of(A) == pytest.approx(2.0, rel=1e-10)

    def test_inverse_norm_matches_svd(self):
        rng = np.random.default_rng(11)
        checked = 0
        while checked < 1000:
            n = int(rng.integers(2, 5))
            A = rng.standard_normal((n, n))
            if np.linalg.cond(A) > 1e6:
                continue
            expected = 1.0 / np.linalg.svd(A, compute_uv=False)[-1]
            assert inverse_norm_of(A) == pytest.approx(expected, rel=1e-8)
            checked += 1

    def test_inverse_norm_by_power_iteration(self):
        rng = np.random.default_rng(4)
        n = DIRECT_NORM_MAX_DIM + 4
        q1, _ = np.linalg.qr(rng.standard_normal((n, n)))
        q2, _ = np.linalg.qr(rng.standard_normal((n, n)))
        A = q1 @ np.diag(np.linspace(0.25, 6.0, n)) @ q2
        assert inverse_norm_of(A) == pytest.approx(4.0, rel=1e-6)

    def test_solve_residual_on_well_conditioned_matrices(self):
        # ‖A x - b‖ <= 1e-10 (1 + ‖b‖) cond(A)
        rng = np.random.default_rng(5)
        checked = 0
        while checked < 1000:
            n = int(rng.integers(1, 7))
            A = rng.standard_normal((n, n)) * 10.0 ** rng.uniform(-3.0, 3.0)
            cond = np.linalg.cond(A)
            if cond > 1e6:
                continue
            b = rng.standard_normal(n) * 10.0 ** rng.uniform(-3.0, 3.0)
            x = solve_linear(A, b)
            assert np.linalg.norm(A @ x - b) <= 1e-10 * (1.0 + np.linalg.norm(b)) * cond
            checked += 1

    def test_inv_operator_norm_of_square(self):
        m = build_fixture("square2d")
        # f'(z) = 2z : ‖f'(z)⁻¹‖ = 1/(2|z|)
        assert inv_operator_norm(m, [0.6, 0.8]) == pytest.approx(0.5, rel=1e-9)

    def test_singular_point_is_reported(self):
        m = MapSpec.from_expression("x1^3", 1, [1.0])
        with pytest.raises(SingularJacobian) as info:
            inv_operator_norm(m, [0.0])
        assert info.value.point == [0.0]


class TestFixtures:
    def test_catalog(self):
        names = [f.name for f in fixture_catalog()]
        assert names == sorted(["identity1d", "identity2d", "linear", "square2d", "exp1d", "exp2d",
                                "shear10", "sinperturb", "cubic1d"])
        square = next(f for f in fixture_catalog() if f.name == "square2d")
        assert square.x0 == (1.0, 0.0) and square.domain == "punctured_box"

    def test_linear_matrix(self):
        m = build_fixture("linear", ((1.0, 2.0), (0.0, 1.0)))
        np.testing.assert_allclose(m([1.0, 1.0]), [3.0, 1.0])
        with pytest.raises(SingularJacobian):
            build_fixture("linear", ((1.0, 2.0), (2.0, 4.0)))

    def test_ragged_matrix_is_a_config_error(self):
        with pytest.raises(ConfigError, match="same length"):
            build_fixture("linear", ((1.0, 2.0), (3.0,)))

    def test_expression_map_carries_a_recipe(self):
        m = expression_map("x1^3 + x1", 1)
        assert m.recipe == MapRecipe(source="x1^3 + x1", dim=1, jacobian="autodiff")
        assert m.recipe()([2.0]) == pytest.approx([10.0])
        with pytest.raises(ConfigError):
            expression_map("x1", 1, None, "analytic")

    def test_changing_source_updates_the_recipe(self):
        m = with_source(build_fixture("square2d"), JacobianKind.FINITE_DIFFERENCE)
        assert m.recipe.jacobian == "fd"
        assert m.recipe().jacobian_source.kind is JacobianKind.FINITE_DIFFERENCE

    def test_base_point_override(self):
        m = build_fixture("identity2d", x0=(1.0, 2.0))
        np.testing.assert_array_equal(m.y0, [1.0, 2.0])
