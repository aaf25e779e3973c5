import numpy as np
import pytest

from models.errors import ConvergenceError, ModelError
from models.walks.jump_model import JumpDistribution
from models.green.green_solver import (
    FreeGreenSolver,
    GreenKind,
    KilledGreenSolver,
    TruncationBox,
    green_free,
    green_killed,
    martin_kernel,
)
from models.green.utils.oracles import KernelBounds, kernel_bounds, n_step_green

SMALL_BOX = TruncationBox((12,), 12)


class TestTruncationBox:
    def test_geometry(self):
        box = TruncationBox((3,), 5)
        assert box.dim == 2
        assert box.shape == (7, 5)
        assert box.contains((3, 5)) and not box.contains((4, 5))
        assert not box.contains((0, 0))
        assert box.strictly_contains((2, 4)) and not box.strictly_contains((3, 4))
        assert box.index((-3, 1)) == (0, 0)

    def test_doubling(self):
        assert TruncationBox((3,), 5).doubled() == TruncationBox((6,), 10)
        assert TruncationBox((3,), 5, y_min=-5).doubled() == TruncationBox((6,), 10, y_min=-10)

    @pytest.mark.parametrize("widths, y_max", [((0,), 5), ((), 5), ((3,), 0)])
    def test_rejects_empty_boxes(self, widths, y_max):
        with pytest.raises(ModelError):
            TruncationBox(widths, y_max)


class TestKilledGreen:
    def test_basic_properties(self, m1):
        field = green_killed(m1, (0, 3), SMALL_BOX)
        assert field.kind is GreenKind.KILLED
        assert field.value((0, 3)) >= 1.0
        assert field.value((0, 0)) == 0.0
        assert field.value((50, 3)) == 0.0
        assert np.all(field.values >= 0.0)
        assert field.residual <= 1e-8

    def test_sweep_matches_direct_solve(self, m2):
        swept = KilledGreenSolver({"tol": 1e-12}).solve(m2, (1, 4), SMALL_BOX)
        direct = KilledGreenSolver({"method": "direct"}).solve(m2, (1, 4), SMALL_BOX)
        assert direct.iterations == 0
        np.testing.assert_allclose(swept.values, direct.values, atol=1e-9)

    def test_grows_with_the_box(self, m1):
        small = green_killed(m1, (2, 4), SMALL_BOX)
        large = green_killed(m1, (2, 4), SMALL_BOX.doubled())
        for z in [(x, y) for x in range(-11, 12, 2) for y in range(1, 12, 2)]:
            assert small.value(z) <= large.value(z) + 1e-9

    def test_target_must_be_strictly_inside(self, m1):
        with pytest.raises(ModelError):
            green_killed(m1, (12, 3), SMALL_BOX)
        with pytest.raises(ModelError):
            green_killed(m1, (0, 12), SMALL_BOX)
        with pytest.raises(ModelError):
            green_killed(m1, (0, 3), TruncationBox((12,), 12, y_min=-12))

    def test_sweep_budget(self, m1):
        with pytest.raises(ConvergenceError) as info:
            KilledGreenSolver({"max_sweeps": 3}).solve(m1, (0, 3), SMALL_BOX)
        assert info.value.diagnostics["sweeps"] == 3

    def test_unknown_method(self):
        with pytest.raises(ModelError):
            KilledGreenSolver({"method": "multigrid"})

    def test_matches_truncated_path_sums(self, strong):
        box = TruncationBox((30,), 30)
        field = green_killed(strong, (3, 4), box, tol=1e-13)
        for z in [(0, 1), (3, 4), (1, 6), (5, 2)]:
            assert field.value(z) == pytest.approx(n_step_green(strong, z, (3, 4), 100), abs=1e-6)


class TestFreeGreen:
    def test_free_field(self, strong):
        box = TruncationBox((30,), 30, y_min=-30)
        field = green_free(strong, (0, 0), box, tol=1e-13)
        assert field.kind is GreenKind.FREE
        assert field.value((0, 0)) >= 1.0
        for z in [(0, 0), (-2, -1), (1, -3)]:
            expected = n_step_green(strong, z, (0, 0), 100, kind="free")
            assert field.value(z) == pytest.approx(expected, abs=1e-6)

    def test_needs_transience(self):
        symmetric = JumpDistribution(
            dim=2, entries={(1, 0): 0.25, (-1, 0): 0.25, (0, 1): 0.25, (0, -1): 0.25}
        )
        with pytest.raises(ModelError):
            FreeGreenSolver().solve(symmetric, (0, 0), TruncationBox((5,), 5, y_min=-5))


class TestMartinKernel:
    def test_reference_point_and_killed_region(self, m1):
        field = green_killed(m1, (4, 6), SMALL_BOX)
        assert martin_kernel(field, (1, 2), (1, 2)) == 1.0
        assert martin_kernel(field, (1, 0), (1, 2)) == 0.0
        with pytest.raises(ModelError):
            martin_kernel(field, (1, 2), (1, -1))

    def test_kernel_bounds(self, m1):
        field = green_killed(m1, (4, 8), SMALL_BOX)
        bounds = kernel_bounds(m1, (0, 2), (0, 1))
        assert bounds.lower == pytest.approx(0.2)
        assert bounds.upper == pytest.approx(1.0 / 0.3)
        assert bounds.contains(martin_kernel(field, (0, 2), (0, 1)))

    def test_bounds_with_no_path(self):
        assert KernelBounds(forward=0.1, backward=0.0).upper == float("inf")
        with pytest.raises(ModelError):
            kernel_bounds(JumpDistribution(dim=2, entries={(1, 0): 0.5, (0, 1): 0.5}), (0, 0), (0, 1))


class TestNStepGreen:
    def test_monotone_in_steps(self, m1):
        sums = [n_step_green(m1, (0, 1), (0, 1), n) for n in (0, 2, 4, 8, 16)]
        assert sums[0] == 1.0
        assert all(b >= a for a, b in zip(sums, sums[1:]))

    def test_unreachable_target(self, m1):
        assert n_step_green(m1, (0, 1), (10, 1), 3) == 0.0

    def test_bad_arguments(self, m1):
        with pytest.raises(ModelError):
            n_step_green(m1, (0, 1), (0, 1), 3, kind="reflected")
        with pytest.raises(ModelError):
            n_step_green(m1, (0, 0), (0, 1), 3)
