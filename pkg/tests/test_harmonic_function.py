import math

import numpy as np
import pytest

from models.errors import ModelError
from models.ladder.boundary_solver import BoundaryFunctionTable, DriftCase
from models.geometry.dual_geometry import BoundaryClass, DualPoint
from models.harmonic.harmonic_function import (
    HarmonicBuilder,
    HarmonicEvaluator,
    build,
    evaluate,
    explicit_left_continuous,
    harmonic_residual,
    martin_candidate_ratio,
)
from tests.conftest import M1_ALPHA_STAR, M1_BETA_STAR

GRID = [(x, y) for x in (-3, 0, 2, 5) for y in (1, 2, 3, 7, 12)]


class TestBuild:
    def test_origin_gives_survival_probability(self, m1):
        ev = build(m1, [0.0, 0.0])
        assert ev.boundary_class is BoundaryClass.POSITIVE_INTERIOR
        for y in range(1, 30):
            assert ev.evaluate((4, y)) == pytest.approx(1.0 - (2.0 / 3.0) ** y, abs=1e-9)
        assert evaluate(ev, (7, 2)) == pytest.approx(5.0 / 9.0, abs=1e-9)

    def test_tangent_point_gives_linear_profile(self, m1):
        ev = build(m1, [M1_ALPHA_STAR, M1_BETA_STAR])
        assert ev.boundary_class is BoundaryClass.TANGENT
        assert ev.evaluate((0, 3)) == pytest.approx(3.0 * math.exp(3.0 * M1_BETA_STAR), rel=1e-9)
        for y in (1, 4, 9):
            assert ev.table.value(y) == pytest.approx(float(y), abs=1e-9)

    def test_killed_region_is_zero(self, m1):
        ev = build(m1, [0.0, 0.0])
        assert ev.evaluate((3, 0)) == 0.0
        assert ev.evaluate((3, -4)) == 0.0

    def test_off_boundary_and_lower_points_are_rejected(self, m1):
        with pytest.raises(ModelError):
            build(m1, [0.0, 0.5])
        with pytest.raises(ModelError):
            build(m1, [0.0, math.log(2.0 / 3.0)])

    def test_conjugate_only_for_left_continuous_models(self, m1, m2):
        assert build(m1, [0.0, 0.0]).conjugate is not None
        assert build(m2, [0.0, 0.0]).conjugate is None


class TestClosedForm:
    @pytest.mark.parametrize("alpha", np.linspace(-0.45, 0.07, 10))
    def test_matches_left_continuous_formula(self, m1, m1_geometry, alpha):
        a = m1_geometry.boundary_point_for_alpha(alpha)
        ev = HarmonicBuilder().build(m1, a, geometry=m1_geometry)
        for z in GRID:
            explicit = explicit_left_continuous(m1, a, z, m1_geometry)
            assert ev.evaluate(z) == pytest.approx(explicit, rel=1e-9)

    def test_tangent_formula(self, m1, m1_geometry):
        a = [M1_ALPHA_STAR, M1_BETA_STAR]
        ev = build(m1, a)
        for z in GRID:
            assert ev.evaluate(z) == pytest.approx(explicit_left_continuous(m1, a, z, m1_geometry), rel=1e-9)

    def test_needs_left_continuity(self, m2):
        with pytest.raises(ModelError):
            explicit_left_continuous(m2, [0.0, 0.0], (0, 1))


class TestHarmonicity:
    def test_residuals_on_a_grid(self, m1, m1_geometry):
        for a in ([0.0, 0.0], [M1_ALPHA_STAR, M1_BETA_STAR], m1_geometry.a_of_q([0.6, 0.8]).coords):
            ev = build(m1, a)
            for z in GRID:
                assert harmonic_residual(m1, ev, z) <= 1e-8

    def test_residuals_without_left_continuity(self, m2, m2_geometry):
        for q in ([1.0, 0.0], [1.0, 1.0], [-1.0, 2.0]):
            a = m2_geometry.a_of_q(np.asarray(q) / np.linalg.norm(q))
            ev = HarmonicBuilder().build(m2, a, geometry=m2_geometry)
            assert np.all(ev.table.values > 0.0)
            for z in GRID:
                assert harmonic_residual(m2, ev, z) <= 1e-6

    def test_corrupted_table_is_detected(self, m1):
        ev = build(m1, [0.0, 0.0])
        values = np.array(ev.table.values)
        values[2] += 0.1
        broken = HarmonicEvaluator(
            a=ev.a,
            boundary_class=ev.boundary_class,
            table=BoundaryFunctionTable(DriftCase.POSITIVE, ev.height, values, 0.0),
        )
        assert harmonic_residual(m1, broken, (0, 3)) > 1e-3

    def test_residual_range_checks(self, m1):
        ev = build(m1, [0.0, 0.0])
        with pytest.raises(ModelError):
            harmonic_residual(m1, ev, (0, 0))
        with pytest.raises(ModelError):
            harmonic_residual(m1, ev, (0, ev.height))


class TestProfiles:
    def test_x_profile_is_constant(self, m1, m1_geometry):
        a = m1_geometry.a_of_q([0.6, 0.8])
        ev = build(m1, a)
        profile = ev.x_profile(4, [[-5], [0], [3], [11]])
        np.testing.assert_allclose(profile, profile[0], rtol=1e-12)
        assert profile[0] == pytest.approx(ev.table.value(4) * math.exp(4 * a.beta), rel=1e-12)

    def test_martin_candidate_ratio(self, m1):
        ev = build(m1, [0.0, 0.0])
        assert martin_candidate_ratio(ev, (0, 2), (0, 1)) == pytest.approx(5.0 / 3.0, abs=1e-8)
        assert martin_candidate_ratio(ev, (9, 1), (0, 1)) == pytest.approx(1.0, abs=1e-12)
        with pytest.raises(ModelError):
            martin_candidate_ratio(ev, (0, 2), (0, 0))

    def test_evaluate_checks_dimension(self, m1):
        ev = HarmonicEvaluator(
            a=DualPoint([0.0, 0.0]),
            boundary_class=BoundaryClass.POSITIVE_INTERIOR,
            table=BoundaryFunctionTable(DriftCase.POSITIVE, 2, [0.5, 0.75], 0.0),
        )
        with pytest.raises(ModelError):
            ev.evaluate((0, 0, 1))
