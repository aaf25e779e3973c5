import math

import numpy as np
import pytest

from hypothesis import given, settings, strategies as st
from models.errors import ConvergenceError, ModelError
from models.ladder.one_d_walk import drift
from models.walks.jump_model import JumpDistribution, mean
from models.geometry.dual_geometry import (
    BoundaryClass,
    Direction,
    DualGeometry,
    DualPoint,
)
from tests.conftest import (
    M1_ALPHA_STAR,
    M1_BETA_STAR,
    M1_ENTRIES,
    M1_LAMBDA_PLUS_0,
    M1_MIN_LOG_PHI,
)

M1_GEOMETRY = DualGeometry(JumpDistribution(dim=2, entries=M1_ENTRIES))

upper_angles = st.floats(min_value=0.0, max_value=math.pi)
# projection of the M1 body onto the alpha axis, kept away from its end points
inner_alphas = st.floats(min_value=-0.45, max_value=0.07)


class TestValueTypes:
    def test_direction_requires_unit_norm(self):
        with pytest.raises(ModelError):
            Direction([1.0, 1.0])
        q = Direction.from_vector([3.0, -4.0])
        assert q.coords.tolist() == pytest.approx([0.6, -0.8])
        assert not q.on_half_sphere
        with pytest.raises(ModelError):
            Direction.from_vector([0.0, 0.0])

    def test_dual_point(self):
        a = DualPoint([0.5, -0.25])
        assert a.alpha.tolist() == [0.5]
        assert a.beta == -0.25
        assert list(a) == [0.5, -0.25]
        with pytest.raises(ModelError):
            DualPoint([math.inf, 0.0])


class TestGeneratingFunction:
    def test_phi_at_origin(self, m1_geometry):
        assert m1_geometry.phi([0.0, 0.0]) == 1.0
        np.testing.assert_allclose(m1_geometry.grad_phi([0.0, 0.0]), [0.1, 0.1], atol=1e-15)

    def test_log_derivatives_match_phi(self, m1_geometry):
        a = np.array([0.3, -0.4])
        phi = m1_geometry.phi(a)
        assert m1_geometry.log_phi(a) == pytest.approx(math.log(phi), abs=1e-14)
        np.testing.assert_allclose(
            m1_geometry.grad_log_phi(a), m1_geometry.grad_phi(a) / phi, atol=1e-14
        )
        g = m1_geometry.grad_phi(a)
        expected = m1_geometry.hessian_phi(a) / phi - np.outer(g, g) / phi**2
        np.testing.assert_allclose(m1_geometry.hessian_log_phi(a), expected, atol=1e-13)

    def test_wrong_dimension(self, m1_geometry):
        with pytest.raises(ModelError):
            m1_geometry.phi([0.0, 0.0, 0.0])


class TestBoundaryMap:
    def test_mean_direction_maps_to_origin(self, m1_geometry):
        a = m1_geometry.a_of_q(Direction.from_vector([1.0, 1.0]))
        np.testing.assert_allclose(a.coords, [0.0, 0.0], atol=1e-8)

    def test_horizontal_direction_hits_the_tangent_point(self, m1_geometry):
        a = m1_geometry.a_of_q([1.0, 0.0])
        assert a.alpha[0] == pytest.approx(M1_ALPHA_STAR, abs=1e-7)
        assert a.beta == pytest.approx(M1_BETA_STAR, abs=1e-7)
        assert m1_geometry.classify(a) is BoundaryClass.TANGENT

    @settings(max_examples=100)
    @given(theta=upper_angles)
    def test_optimality_residuals(self, theta):
        q = np.array([math.cos(theta), math.sin(theta)])
        a = M1_GEOMETRY.a_of_q(q)
        assert abs(M1_GEOMETRY.phi(a) - 1.0) <= 1e-8
        assert M1_GEOMETRY.direction_residual(a, q) <= 1e-8
        np.testing.assert_allclose(M1_GEOMETRY.q_of_a(a).coords, q, atol=1e-8)

    def test_lower_directions_are_solved_too(self, m1_geometry):
        q = Direction.from_vector([0.0, -1.0])
        a = m1_geometry.a_of_q(q)
        assert m1_geometry.direction_residual(a, q) <= 1e-8
        with pytest.raises(ModelError):
            m1_geometry.classify(a)

    def test_degenerate_body(self):
        symmetric = DualGeometry(
            JumpDistribution(dim=2, entries={(1, 0): 0.25, (-1, 0): 0.25, (0, 1): 0.25, (0, -1): 0.25})
        )
        with pytest.raises(ModelError):
            symmetric.a_of_q([1.0, 0.0])

    def test_barrier_start_is_close_to_newton(self, m2_geometry):
        q = Direction.from_vector([1.0, 2.0]).coords
        rough = m2_geometry._barrier_maximize(q)
        np.testing.assert_allclose(rough, m2_geometry.a_of_q(q).coords, atol=1e-3)

    def test_newton_failure_falls_back_on_the_barrier(self, m2, monkeypatch):
        geometry = DualGeometry(m2)
        q = Direction.from_vector([1.0, 3.0])
        expected = geometry.a_of_q(q).coords
        original = DualGeometry._kkt_newton
        calls = []

        def flaky(self, q_, a0, t0, tol):
            calls.append(a0)
            if len(calls) == 1:
                raise ConvergenceError("forced", {"iterations": 0})
            return original(self, q_, a0, t0, tol)

        monkeypatch.setattr(DualGeometry, "_kkt_newton", flaky)
        a = geometry.a_of_q(q)
        assert len(calls) == 2
        np.testing.assert_allclose(a.coords, expected, atol=1e-9)

    def test_singular_barrier_hessian_raises(self, m2, monkeypatch):
        geometry = DualGeometry(m2)
        start = geometry.phi_minimizer()

        def failing(self, q_, a0, t0, tol):
            raise ConvergenceError("forced", {"iterations": 0})

        monkeypatch.setattr(DualGeometry, "_kkt_newton", failing)
        monkeypatch.setattr(geometry, "phi_minimizer", lambda: start)
        monkeypatch.setattr(geometry, "grad_log_phi", lambda a: np.zeros(2))
        monkeypatch.setattr(geometry, "hessian_log_phi", lambda a: np.zeros((2, 2)))
        with pytest.raises(ConvergenceError) as info:
            geometry.a_of_q(Direction.from_vector([1.0, 3.0]))
        assert info.value.diagnostics["t"] == 1.0
        assert "a" in info.value.diagnostics


class TestVerticalSections:
    def test_beta_min_at_zero(self, m1_geometry):
        beta0, lam = m1_geometry.beta_min(0.0)
        assert beta0 == pytest.approx(M1_BETA_STAR, abs=1e-12)
        assert lam == pytest.approx(M1_LAMBDA_PLUS_0, abs=1e-12)
        assert m1_geometry.spectral_radius([0.0]) == pytest.approx(lam)

    def test_one_sided_marginal(self):
        geometry = DualGeometry(JumpDistribution(dim=2, entries={(1, 1): 0.5, (-1, 0): 0.5}))
        with pytest.raises(ModelError):
            geometry.beta_min(0.0)

    def test_boundary_point_for_alpha(self, m1_geometry):
        np.testing.assert_allclose(m1_geometry.boundary_point_for_alpha(0.0).coords, [0.0, 0.0], atol=1e-12)
        tangent = m1_geometry.boundary_point_for_alpha(M1_ALPHA_STAR)
        assert tangent.beta == pytest.approx(M1_BETA_STAR, abs=1e-6)
        with pytest.raises(ModelError):
            m1_geometry.boundary_point_for_alpha(1.0)

    @given(alpha=inner_alphas)
    def test_boundary_points_are_upper(self, alpha):
        a = M1_GEOMETRY.boundary_point_for_alpha(alpha)
        assert abs(M1_GEOMETRY.phi(a) - 1.0) <= 1e-8
        beta0, _ = M1_GEOMETRY.beta_min(alpha)
        assert a.beta >= beta0
        assert M1_GEOMETRY.classify(a) is BoundaryClass.POSITIVE_INTERIOR


class TestConvexity:
    @given(
        a=st.tuples(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0)),
        b=st.tuples(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0)),
        t=st.floats(0.0, 1.0),
    )
    def test_phi_is_convex(self, a, b, t):
        a, b = np.array(a), np.array(b)
        mixed = M1_GEOMETRY.phi(t * a + (1.0 - t) * b)
        chord = t * M1_GEOMETRY.phi(a) + (1.0 - t) * M1_GEOMETRY.phi(b)
        assert mixed <= chord + 1e-12 * max(1.0, chord)

    def test_a_of_q_maximises_over_the_body(self, m1_geometry):
        rng = np.random.default_rng(7)
        # the M1 body lies inside this box
        candidates = rng.uniform([-0.6, -0.8], [0.2, 0.4], size=(6000, 2))
        inside = np.array([a for a in candidates if m1_geometry.phi(a) <= 1.0])
        assert len(inside) >= 1000
        inside = inside[:1000]
        for theta in np.linspace(0.0, math.pi, 25):
            q = np.array([math.cos(theta), math.sin(theta)])
            best = float(m1_geometry.a_of_q(q).coords @ q)
            assert np.all(best >= inside @ q - 1e-10)


class TestClassification:
    def test_exact_tangent_point(self, m1_geometry):
        assert m1_geometry.classify([M1_ALPHA_STAR, M1_BETA_STAR]) is BoundaryClass.TANGENT

    def test_origin_is_positive_interior(self, m1_geometry):
        assert m1_geometry.classify([0.0, 0.0]) is BoundaryClass.POSITIVE_INTERIOR

    def test_lower_boundary_and_off_boundary(self, m1_geometry):
        with pytest.raises(ModelError):
            m1_geometry.classify([0.0, math.log(2.0 / 3.0)])
        with pytest.raises(ModelError):
            m1_geometry.classify([0.0, 0.5])

    def test_conjugate_points(self, m1_geometry):
        conj = m1_geometry.conjugate_point([0.0, 0.0])
        np.testing.assert_allclose(conj.coords, [0.0, math.log(2.0 / 3.0)], atol=1e-12)
        tangent = [M1_ALPHA_STAR, M1_BETA_STAR]
        np.testing.assert_allclose(m1_geometry.conjugate_point(tangent).coords, tangent)

    def test_minimizer_walk_has_zero_drift(self, m1_geometry, m2_geometry):
        assert drift(m1_geometry.minimizer_walk(0.0)) == pytest.approx(0.0, abs=1e-12)
        assert drift(m2_geometry.minimizer_walk(0.1)) == pytest.approx(0.0, abs=1e-12)


class TestLegendre:
    def test_mean_velocity_costs_nothing(self, m1, m1_geometry):
        np.testing.assert_allclose(m1_geometry.legendre_point(mean(m1)).coords, [0.0, 0.0], atol=1e-10)
        assert m1_geometry.log_phi_conjugate(mean(m1)) == pytest.approx(0.0, abs=1e-12)

    def test_zero_velocity(self, m1_geometry):
        assert m1_geometry.log_phi_conjugate([0.0, 0.0]) == pytest.approx(-M1_MIN_LOG_PHI, abs=1e-10)
        a = m1_geometry.phi_minimizer()
        assert m1_geometry.phi(a) == pytest.approx(4.0 * math.sqrt(0.06), abs=1e-12)

    def test_unattainable_velocity(self, m1_geometry):
        with pytest.raises(ModelError):
            m1_geometry.legendre_point([2.0, 0.0])
        with pytest.raises(ModelError):
            m1_geometry.legendre_point([0.0, 1.5])

    def test_vertex_velocity_has_finite_cost(self, m1_geometry):
        assert m1_geometry.log_phi_conjugate([1.0, 0.0]) == pytest.approx(-math.log(0.3), abs=1e-8)


class TestTruncatedSpectralRadius:
    def test_increases_to_lambda_plus(self, m1_geometry):
        values = [m1_geometry.spectral_radius_truncated(0.0, k) for k in (10, 20, 50, 100, 200)]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))
        assert all(v <= M1_LAMBDA_PLUS_0 + 1e-12 for v in values)
        assert abs(values[-1] - M1_LAMBDA_PLUS_0) <= 1e-3

    def test_window_offset_does_not_matter(self, m2_geometry):
        base = m2_geometry.spectral_radius_truncated(0.05, 30)
        assert m2_geometry.spectral_radius_truncated(0.05, 30, offset=17) == pytest.approx(base, abs=1e-9)

    def test_periodic_matrix_is_shifted(self):
        geometry = DualGeometry(JumpDistribution(dim=2, entries={(1, 1): 0.5, (-1, -1): 0.5}))
        lam = geometry.spectral_radius_truncated(0.0, 20)
        # eigenvalue of the tridiagonal matrix with off-diagonals 0.5
        assert lam == pytest.approx(math.log(math.cos(math.pi / 21)), abs=1e-8)

    def test_bad_truncation(self, m1_geometry):
        with pytest.raises(ModelError):
            m1_geometry.feynman_kac_matrix(0.0, 0)
