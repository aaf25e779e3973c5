import math
import logging

import numpy as np

from dataclasses import dataclass
from typing import Dict, Iterator, Optional, Sequence, Tuple
from models.errors import ConvergenceError, ModelError
from models.walks.jump_model import JumpDistribution
from models.geometry.dual_geometry import DualGeometry, Direction, as_vector

logger = logging.getLogger(__name__)

DEFAULT_IDENTITY_TOL = 1e-8
DEFAULT_REL_SLACK = 0.2
DEFAULT_ABS_SLACK = 0.1


@dataclass(frozen=True)
class PiecewiseLinearPath:
    """
    Continuous path through breakpoints (t_k, x_k), linear in between.

    Attributes:
        times (np.ndarray): Strictly increasing, starting at 0
        positions (np.ndarray): One row per breakpoint
    """

    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        positions = np.array(self.positions, dtype=float)
        if positions.ndim != 2 or len(positions) != len(times):
            raise ModelError("Need one position row per breakpoint time")
        if len(times) < 2:
            raise ModelError("A path needs at least two breakpoints")
        if times[0] != 0.0:
            raise ModelError(f"Paths start at time 0, got {times[0]!r}")
        if np.any(np.diff(times) <= 0.0):
            raise ModelError("Breakpoint times must be strictly increasing")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(positions))):
            raise ModelError("Breakpoints must be finite")
        times.setflags(write=False)
        positions.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", positions)

    @classmethod
    def from_breakpoints(cls, breakpoints: Sequence[Tuple[float, Sequence[float]]]) -> "PiecewiseLinearPath":
        return cls([t for t, _ in breakpoints], [list(x) for _, x in breakpoints])

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def segments(self) -> Iterator[Tuple[float, np.ndarray]]:
        """(duration, velocity) for every segment."""
        for k in range(len(self.times) - 1):
            dt = float(self.times[k + 1] - self.times[k])
            yield dt, (self.positions[k + 1] - self.positions[k]) / dt

    def stays_in_half_space(self) -> bool:
        """Closed half-space test; checking breakpoints suffices for linear segments."""
        return bool(np.all(self.positions[:, -1] >= 0.0))


@dataclass(frozen=True)
class OptimalCostReport:
    q: Tuple[float, ...]
    a: Tuple[float, ...]
    cost: float
    conjugate_side: float
    gradient_side: float
    identity_gap: float
    identity_ok: bool


@dataclass(frozen=True)
class LDBoundReport:
    final_slope: float
    bound: float
    threshold: float
    margin: float
    final_passed: bool
    fitted_rate: Optional[float]
    passed: bool


class RateFunctional:
    """
    Sample-path rate functionals of the scaled walk, (log phi)* integrated
    along piecewise-linear paths. Unattainable velocities cost +inf.
    """

    def __init__(self, model: JumpDistribution, config: dict = None, geometry: DualGeometry = None):
        """
        Args:
            model (JumpDistribution): Law of the walk
            config (dict): Configuration dictionary containing:
                - verbose (bool): Enable detailed logging
                - identity_tol (float): Tolerance of the cost identity
                - rel_slack (float): Relative slack of the Green decay check
                - abs_slack (float): Absolute slack of the Green decay check
            geometry (DualGeometry): Geometry of model, built when omitted
        """
        self.model = model
        self.config = config or {}
        self.verbose = self.config.get("verbose", False)
        self.identity_tol = self.config.get("identity_tol", DEFAULT_IDENTITY_TOL)
        self.rel_slack = self.config.get("rel_slack", DEFAULT_REL_SLACK)
        self.abs_slack = self.config.get("abs_slack", DEFAULT_ABS_SLACK)
        self.geometry = geometry or DualGeometry(model)
        self._conjugates: Dict[Tuple[float, ...], float] = {}

    def conjugate(self, v: Sequence[float]) -> float:
        """(log phi)*(v), or +inf for an unattainable velocity."""
        key = tuple(float(c) for c in v)
        if key not in self._conjugates:
            try:
                value = self.geometry.log_phi_conjugate(np.asarray(key))
            except ModelError:
                value = math.inf
            except ConvergenceError as e:
                logger.warning(f"Legendre transform at v={list(key)} did not converge: {e}")
                value = math.inf
            self._conjugates[key] = value
        return self._conjugates[key]

    def rate_free(self, path: PiecewiseLinearPath) -> float:
        if path.dim != self.model.dim:
            raise ModelError(f"Path has dimension {path.dim}, model has {self.model.dim}")
        total = 0.0
        for dt, velocity in path.segments():
            cost = self.conjugate(velocity)
            if math.isinf(cost):
                return math.inf
            total += dt * cost
        return total

    def rate_killed(self, path: PiecewiseLinearPath) -> float:
        if not path.stays_in_half_space():
            return math.inf
        return self.rate_free(path)

    def optimal_cost(self, q: Sequence[float]) -> OptimalCostReport:
        """
        a(q).q together with both sides of
        (log phi)*(grad phi(a(q))) = |grad phi(a(q))| a(q).q.
        """
        q = Direction(as_vector(q))
        if not q.on_half_sphere:
            raise ModelError(f"q={q.coords.tolist()} is not on the upper half-sphere")
        a = self.geometry.a_of_q(q).coords
        cost = float(a @ q.coords)
        gradient = self.geometry.grad_phi(a)
        conjugate_side = self.conjugate(gradient)
        gradient_side = float(np.linalg.norm(gradient)) * cost
        gap = abs(conjugate_side - gradient_side)
        if self.verbose:
            logger.info(f"Optimal cost at q={q.coords.tolist()}: {cost!r} (identity gap {gap:.3e})")
        return OptimalCostReport(
            q=tuple(q.coords.tolist()),
            a=tuple(a.tolist()),
            cost=cost,
            conjugate_side=conjugate_side,
            gradient_side=gradient_side,
            identity_gap=gap,
            identity_ok=gap <= self.identity_tol,
        )

    def green_ld_bound_check(
        self, q: Sequence[float], slopes: Sequence[float], norms: Sequence[float] = None
    ) -> LDBoundReport:
        """
        One-sided check of the logarithmic Green decay against -a(q).q with
        threshold -cost (1 + rel_slack); abs_slack only replaces the threshold
        when the cost vanishes.

        A finite-range slope log G / |z_n| still carries the polynomial
        prefactor of G, about -c log|z_n| / |z_n|. With norms given, the rate
        is also fitted from log G = C - rate |z_n| - c log|z_n| over the tail
        of the schedule, and that fitted rate decides the verdict; the raw
        final slope is always reported against the same threshold.
        """
        if len(slopes) == 0:
            raise ModelError("Need at least one slope")
        cost = self.optimal_cost(q).cost
        bound = -cost
        threshold = -self.abs_slack if abs(cost) <= self.identity_tol else bound * (1.0 + self.rel_slack)
        final = float(slopes[-1])
        final_passed = final >= threshold

        fitted_rate = None
        if norms is not None:
            fitted_rate = fitted_decay_rate(slopes, norms)
        passed = final_passed if fitted_rate is None else -fitted_rate >= threshold
        if self.verbose:
            logger.info(
                f"Green decay at q={list(q)}: final slope {final!r}, fitted rate {fitted_rate!r}, "
                f"threshold {threshold!r}"
            )
        return LDBoundReport(
            final_slope=final,
            bound=bound,
            threshold=threshold,
            margin=final - threshold,
            final_passed=final_passed,
            fitted_rate=fitted_rate,
            passed=passed,
        )


def fitted_decay_rate(slopes: Sequence[float], norms: Sequence[float]) -> float:
    """
    Least-squares rate s of log G_n = C - s |z_n| - c log|z_n| over the last
    half of the schedule (at least three points), with log G_n = slope_n |z_n|.

    Raises:
        ModelError: With fewer than three points or repeated norms
    """
    slopes = np.asarray(slopes, dtype=float).reshape(-1)
    norms = np.asarray(norms, dtype=float).reshape(-1)
    if len(slopes) != len(norms):
        raise ModelError(f"Got {len(slopes)} slopes for {len(norms)} target norms")
    tail = max(3, len(norms) // 2)
    if len(norms) < tail:
        raise ModelError("Fitting a decay rate needs at least three targets")
    r, log_green = norms[-tail:], (slopes * norms)[-tail:]
    if np.any(r <= 0.0) or len(np.unique(r)) < 3:
        raise ModelError("Fitting a decay rate needs three distinct positive target norms")
    design = np.column_stack([np.ones_like(r), r, np.log(r)])
    coefficients, *_ = np.linalg.lstsq(design, log_green, rcond=None)
    return float(-coefficients[1])


def rate_free(model: JumpDistribution, path: PiecewiseLinearPath) -> float:
    return RateFunctional(model).rate_free(path)


def rate_killed(model: JumpDistribution, path: PiecewiseLinearPath) -> float:
    return RateFunctional(model).rate_killed(path)


def optimal_cost(model: JumpDistribution, q: Sequence[float]) -> OptimalCostReport:
    return RateFunctional(model).optimal_cost(q)


def green_ld_bound_check(
    model: JumpDistribution,
    q: Sequence[float],
    slopes: Sequence[float],
    norms: Sequence[float] = None,
    config: dict = None,
) -> LDBoundReport:
    return RateFunctional(model, config).green_ld_bound_check(q, slopes, norms)
