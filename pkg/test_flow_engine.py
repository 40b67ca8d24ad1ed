"""
Tests du suivi du flot auxiliaire, des relèvements de segments et de la sonde ω-limite
"""

import dataclasses
import itertools
import math

import numpy as np
import pytest

from errors import DomainViolation
from fixtures import FIXTURE_BUILDERS, build_fixture
from flow_engine import (
    DEFAULT_OPTIONS,
    OmegaKind,
    OutcomeKind,
    RayFlow,
    finite_life_bound,
    flow_field,
    integrate_flow,
    invert_at,
    lift_segment,
    omega_probe,
    phi,
    psi,
    _newton_correct,
)
from map_core import eval_jacobian, factorize


def _starts(name: str, count: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if name == "square2d":
        radius = rng.uniform(0.2, 2.0, count)
        angle = rng.uniform(-math.pi, math.pi, count)
        return np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
    return rng.uniform(-2.0, 2.0, (count, build_fixture(name).dim))


class TestRayFlow:
    def test_psi(self):
        np.testing.assert_allclose(psi([3.0, 1.0], math.log(2.0), [1.0, 1.0]), [2.0, 1.0])
        np.testing.assert_allclose(RayFlow(np.zeros(1))([4.0], 0.0), [4.0])

    def test_field_of_identity(self):
        m = build_fixture("identity2d")
        np.testing.assert_allclose(flow_field(m, [1.0, -2.0]), [-1.0, 2.0])


class TestIntegrateFlow:
    @pytest.mark.parametrize("name", sorted(FIXTURE_BUILDERS))
    def test_image_follows_the_ray(self, name):
        m = build_fixture(name)
        y0 = m.y0
        for x in _starts(name, 50):
            trajectory = integrate_flow(m, x)
            f_start = m(x)
            bound = 1e-9 * (1.0 + float(np.linalg.norm(f_start - y0)))
            for sample in trajectory.samples:
                gap = np.linalg.norm(m(sample.x) - psi(f_start, sample.t, y0))
                assert gap <= bound, (name, x, sample.t)

    @pytest.mark.parametrize("name", ["identity2d", "square2d", "exp2d", "shear10", "sinperturb", "cubic1d"])
    def test_image_distance_decays_like_exp(self, name):
        m = build_fixture(name)
        y0 = m.y0
        checked = 0
        for x in _starts(name, 40, seed=2):
            d0 = float(np.linalg.norm(m(x) - y0))
            if d0 < 1.0 or not m.domain.contains(x):
                continue
            for sample in integrate_flow(m, x).samples:
                if sample.t > 1.0:
                    break
                distance = float(np.linalg.norm(m(sample.x) - y0))
                assert distance == pytest.approx(math.exp(-sample.t) * d0, rel=1e-8), (name, x, sample.t)
            checked += 1
        assert checked > 0

    def test_identity_decays_exponentially(self):
        m = build_fixture("identity1d")
        trajectory = integrate_flow(m, [1.0])
        assert trajectory.outcome.kind is OutcomeKind.CONVERGED_TO_BASE
        np.testing.assert_allclose(trajectory.points[:, 0], np.exp(-trajectory.times), atol=1e-9)

    def test_start_at_base_point(self):
        m = build_fixture("square2d")
        trajectory = integrate_flow(m, m.x0)
        assert trajectory.outcome.kind is OutcomeKind.CONVERGED_TO_BASE
        assert trajectory.outcome.time == 0.0
        assert len(trajectory.samples) == 1

    def test_square_hits_the_puncture(self):
        m = build_fixture("square2d")
        trajectory = integrate_flow(m, [0.0, 1.0])
        assert trajectory.outcome.kind is OutcomeKind.FINITE_LIFE
        assert abs(trajectory.outcome.time - math.log(2.0)) <= 1e-2

    def test_finite_life_is_stable_under_tighter_steps(self):
        m = build_fixture("square2d")
        opts = dataclasses.replace(DEFAULT_OPTIONS, dt_min=DEFAULT_OPTIONS.dt_min / 10.0)
        assert integrate_flow(m, [0.0, 1.0], opts=opts).outcome.kind is OutcomeKind.FINITE_LIFE

    def test_converges_to_another_preimage(self):
        m = build_fixture("exp2d")
        trajectory = integrate_flow(m, [0.0, 4.0])
        assert trajectory.outcome.kind is OutcomeKind.CONVERGED_ELSEWHERE
        np.testing.assert_allclose(trajectory.last.x, [0.0, 2.0 * math.pi], atol=1e-6)

        square = build_fixture("square2d")
        trajectory = integrate_flow(square, [-1.0, 0.5])
        assert trajectory.outcome.kind is OutcomeKind.CONVERGED_ELSEWHERE
        np.testing.assert_allclose(trajectory.last.x, [-1.0, 0.0], atol=1e-6)

    def test_budget(self):
        m = build_fixture("identity2d")
        opts = dataclasses.replace(DEFAULT_OPTIONS, budget=3)
        trajectory = integrate_flow(m, [5.0, 5.0], opts=opts)
        assert trajectory.outcome.kind is OutcomeKind.BUDGET_EXHAUSTED
        assert trajectory.steps == 3

    def test_finite_horizon(self):
        m = build_fixture("identity2d")
        trajectory = integrate_flow(m, [1.0, 1.0], t_end=1.0)
        assert trajectory.outcome.kind is OutcomeKind.HORIZON_REACHED
        assert trajectory.last.t == 1.0
        np.testing.assert_allclose(trajectory.last.x, [math.exp(-1.0)] * 2, atol=1e-9)

    def test_compact_samples(self):
        m = build_fixture("shear10")
        opts = dataclasses.replace(DEFAULT_OPTIONS, keep_samples=False)
        trajectory = integrate_flow(m, [1.0, 0.5], opts=opts)
        assert trajectory.outcome.kind is OutcomeKind.CONVERGED_TO_BASE
        assert len(trajectory.samples) <= 2
        assert trajectory.samples[0].t == 0.0

    def test_start_outside_domain(self):
        with pytest.raises(DomainViolation):
            integrate_flow(build_fixture("square2d"), [0.0, 0.0])

    def test_time_must_be_positive(self):
        with pytest.raises(ValueError):
            integrate_flow(build_fixture("identity1d"), [1.0], t_end=0.0)


class TestPhi:
    @pytest.mark.parametrize("t1,t2", list(itertools.product([0.1, 0.5, 1.0], repeat=2)))
    @pytest.mark.parametrize("name,x", [("identity2d", [1.0, -2.0]), ("sinperturb", [1.5, -2.0]),
                                        ("shear10", [0.7, 0.3]), ("cubic1d", [1.2]),
                                        ("square2d", [0.5, 1.5]), ("exp2d", [1.0, 2.5])])
    def test_semigroup(self, name, x, t1, t2):
        m = build_fixture(name)
        once = phi(m, x, t1 + t2)
        first = phi(m, x, t1)
        assert once is not None and first is not None
        twice = phi(m, first, t2)
        assert twice is not None
        np.testing.assert_allclose(once, twice, atol=1e-7)

    def test_outside_flow_domain(self):
        assert phi(build_fixture("square2d"), [0.0, 1.0], 2.0) is None

    def test_finite_life_bound(self):
        m = build_fixture("identity2d")
        assert finite_life_bound(m, [3.0, 4.0], 0.5) == pytest.approx(math.log(10.0))
        assert finite_life_bound(m, [3.0, 4.0], 0.0) == math.inf


class TestLift:
    def test_identity_lift(self):
        m = build_fixture("identity2d")
        lift = lift_segment(m, [0.0, 0.0], [7.0, -1.0])
        assert lift.complete and lift.s_max == 1.0
        assert np.all(np.diff(lift.parameters) > 0.0)
        np.testing.assert_allclose(lift.last.x, [7.0, -1.0], atol=1e-8)

    def test_constant_segment(self):
        m = build_fixture("cubic1d")
        lift = lift_segment(m, [0.0], [0.0])
        assert lift.complete
        np.testing.assert_array_equal(lift.parameters, [0.0, 1.0])

    def test_principal_square_root(self):
        inversion = invert_at(build_fixture("square2d"), [4.0, 0.0])
        assert inversion.ok
        np.testing.assert_allclose(inversion.x, [2.0, 0.0], atol=1e-8)

    def test_exp_cannot_reach_zero(self):
        m = build_fixture("exp1d")
        inversion = invert_at(m, [0.0])
        assert not inversion.ok
        assert inversion.failure.kind is OutcomeKind.FINITE_LIFE
        assert inversion.lift.s_max > 0.99
        probe = omega_probe(inversion.lift, 5, m.domain)
        assert probe.kind is OmegaKind.EMPTY_DIVERGENT

    def test_lift_prefix_is_stable(self):
        m = build_fixture("square2d")
        y_b = np.array([-3.0, 4.0])
        lift = lift_segment(m, m.x0, y_b)
        assert lift.complete
        y_a = m.y0
        for sample in lift.samples[1:]:
            target = y_a + sample.t * (y_b - y_a)
            again = lift_segment(m, m.x0, target)
            assert again.complete
            np.testing.assert_allclose(again.last.x, sample.x, atol=1e-8)
            root = np.sqrt(complex(target[0], target[1]))
            np.testing.assert_allclose(sample.x, [root.real, root.imag], atol=1e-8)
        np.testing.assert_allclose(lift.last.x, [1.0, 2.0], atol=1e-8)

    def test_exp_lift_follows_the_logarithm(self):
        m = build_fixture("exp1d")
        lift = lift_segment(m, m.x0, [0.0])
        checked = [s for s in lift.samples if s.t <= 0.99]
        assert len(checked) > 5
        for sample in checked:
            assert sample.x[0] == pytest.approx(math.log1p(-sample.t), abs=1e-6)

    def test_linear_lift_is_affine_in_s(self):
        A = np.array([[2.0, 1.0], [1.0, 3.0]])
        m = build_fixture("linear", ((2.0, 1.0), (1.0, 3.0)))
        x_a = np.array([1.0, -1.0])
        y_b = np.array([3.0, 5.0])
        direction = np.linalg.solve(A, y_b - A @ x_a)
        lift = lift_segment(m, x_a, y_b)
        assert lift.complete
        for sample in lift.samples:
            np.testing.assert_allclose(sample.x, x_a + sample.t * direction, atol=1e-10)

    def test_uncorrectable_final_step_collapses(self):
        # le pas final est forcé (dt_min > 1) et une seule itération ne suffit pas
        m = build_fixture("cubic1d")
        opts = dataclasses.replace(DEFAULT_OPTIONS, dt_min=2.0, max_newton=1, eta_inv=1e-12, budget=1000)
        lift = lift_segment(m, [0.0], [5.0], opts)
        assert not lift.complete
        assert lift.failure.kind is OutcomeKind.STEP_COLLAPSE
        assert lift.steps == 1

    def test_round_trip_square(self):
        m = build_fixture("square2d")
        rng = np.random.default_rng(0)
        done = 0
        while done < 200:
            x = np.array([rng.uniform(0.05, 2.0), rng.uniform(-2.0, 2.0)])
            if np.linalg.norm(x) > 2.0:
                continue
            inversion = invert_at(m, m(x))
            assert inversion.ok, x
            np.testing.assert_allclose(inversion.x, x, atol=1e-6)
            done += 1

    def test_round_trip_exp(self):
        m = build_fixture("exp2d")
        rng = np.random.default_rng(1)
        for _ in range(200):
            x = np.array([rng.uniform(-2.0, 2.0), rng.uniform(-3.0, 3.0)])
            inversion = invert_at(m, m(x))
            assert inversion.ok, x
            np.testing.assert_allclose(inversion.x, x, atol=1e-6)


class TestOmegaProbe:
    def test_cluster_point(self):
        m = build_fixture("sinperturb")
        probe = omega_probe(integrate_flow(m, [2.0, 1.0]), 5, m.domain)
        assert probe.kind is OmegaKind.CLUSTER_POINT
        np.testing.assert_allclose(probe.point, [0.0, 0.0], atol=1e-6)

    def test_boundary_cluster(self):
        m = build_fixture("square2d")
        probe = omega_probe(integrate_flow(m, [0.0, 1.0]), 5, m.domain)
        assert probe.kind is OmegaKind.BOUNDARY_CLUSTER
        np.testing.assert_array_equal(probe.point, [0.0, 0.0])

    def test_too_short(self):
        m = build_fixture("identity1d")
        assert omega_probe(integrate_flow(m, m.x0), 5).kind is OmegaKind.INCONCLUSIVE


class TestCorrector:
    def test_reuses_neighbouring_factors(self):
        m = build_fixture("sinperturb")
        factors = factorize(eval_jacobian(m, [1.0, -0.5]))
        target = m([1.05, -0.45])
        corrected = _newton_correct(m, np.array([1.04, -0.46]), target, 1e-12, DEFAULT_OPTIONS, factors)
        assert corrected is not None
        x, residual, fx = corrected
        assert residual <= 1e-12
        np.testing.assert_allclose(x, [1.05, -0.45], atol=1e-10)

    def test_refreshes_stale_factors(self):
        m = build_fixture("square2d")
        stale = factorize(np.eye(2))
        corrected = _newton_correct(m, np.array([1.2, 0.9]), m([1.0, 1.0]), 1e-12, DEFAULT_OPTIONS, stale)
        assert corrected is not None
        np.testing.assert_allclose(corrected[0], [1.0, 1.0], atol=1e-10)
