import math
import logging

import numpy as np

from functools import reduce
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple
from models.errors import ModelError
from models.ladder.one_d_walk import OneDWalk

logger = logging.getLogger(__name__)

DEFAULT_SUM_TOL = 1e-12
DEFAULT_TWIST_TOL = 1e-9
DEFAULT_MEAN_TOL = 1e-12

LatticeVector = Tuple[int, ...]


@dataclass(frozen=True)
class JumpDistribution:
    """
    Finite-support probability law on Z^d driving the walk.

    The last coordinate is the vertical one; the walk is killed when it
    drops to zero or below.

    Attributes:
        dim (int): Lattice dimension d >= 2
        entries (Mapping[LatticeVector, float]): jump -> probability
        sum_tol (float): Allowed deviation of the total mass from one
    """

    dim: int
    entries: Mapping[LatticeVector, float]
    sum_tol: float = field(default=DEFAULT_SUM_TOL, compare=False, repr=False)
    jumps: np.ndarray = field(init=False, compare=False, repr=False)
    probs: np.ndarray = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 2:
            raise ModelError(f"Dimension must be an integer >= 2, got {self.dim}")
        if not self.entries:
            raise ModelError("Jump distribution has an empty support")

        cleaned: Dict[LatticeVector, float] = {}
        for jump, prob in self.entries.items():
            jump = tuple(int(c) for c in jump)
            if len(jump) != self.dim:
                raise ModelError(f"Jump {jump} does not have {self.dim} coordinates")
            prob = float(prob)
            if not math.isfinite(prob) or prob <= 0.0 or prob > 1.0:
                raise ModelError(f"Jump {jump} has probability {prob} outside (0, 1]")
            if jump in cleaned:
                raise ModelError(f"Jump {jump} listed twice")
            cleaned[jump] = prob

        total = math.fsum(cleaned.values())
        if abs(total - 1.0) > self.sum_tol:
            raise ModelError(
                f"Probabilities sum to {total!r}, not 1 within {self.sum_tol:g}"
            )

        ordered = dict(sorted(cleaned.items()))
        jumps = np.array(list(ordered.keys()), dtype=np.int64)
        probs = np.array(list(ordered.values()), dtype=float)
        jumps.setflags(write=False)
        probs.setflags(write=False)

        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "entries", ordered)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "probs", probs)

    @property
    def max_jump_norm(self) -> int:
        """Largest sup-norm of a jump in the support."""
        return int(np.abs(self.jumps).max())

    @property
    def min_vertical_jump(self) -> int:
        return int(self.jumps[:, -1].min())

    @property
    def max_vertical_jump(self) -> int:
        return int(self.jumps[:, -1].max())

    def is_left_continuous(self) -> bool:
        """True when no jump goes down by more than one unit vertically."""
        return self.min_vertical_jump >= -1

    def tilted_weights(self, a: Sequence[float]) -> np.ndarray:
        """Per-jump weights mu(z) exp(a.z)."""
        a = np.asarray(a, dtype=float)
        if a.shape != (self.dim,):
            raise ModelError(f"Tilt {a} does not have {self.dim} coordinates")
        return self.probs * np.exp(self.jumps @ a)


@dataclass(frozen=True)
class ValidationReport:
    """
    Outcome of checking a jump law against the standing hypotheses.

    Failed hypotheses are reported here rather than raised.
    """

    irreducible: bool
    mean: Tuple[float, ...]
    mean_nonzero: bool
    y_aperiodic: bool
    left_continuous: bool
    period: int
    search_bound: int

    def failures(self) -> List[str]:
        failed = []
        if not self.irreducible:
            failed.append(
                f"walk is not irreducible within {self.search_bound} steps"
            )
        if not self.mean_nonzero:
            failed.append("mean is zero")
        if not self.y_aperiodic:
            failed.append("vertical marginal is periodic")
        return failed

    @property
    def ok(self) -> bool:
        return not self.failures()


class ModelValidator:
    """
    Checks irreducibility, non-zero mean, vertical aperiodicity and
    left-continuity of a jump law by bounded breadth-first search.
    """

    def __init__(self, config: dict = None):
        """
        Args:
            config (dict): Configuration dictionary containing:
                - verbose (bool): Enable detailed logging
                - search_bound_factor (int): default bound is factor * d * max-jump-norm
                - mean_tol (float): |mean| below this counts as zero
        """
        self.config = config or {}
        self.verbose = self.config.get("verbose", False)
        self.search_bound_factor = self.config.get("search_bound_factor", 4)
        self.mean_tol = self.config.get("mean_tol", DEFAULT_MEAN_TOL)

    def default_search_bound(self, model: JumpDistribution) -> int:
        return self.search_bound_factor * model.dim * model.max_jump_norm

    def validate(
        self, model: JumpDistribution, search_bound: Optional[int] = None
    ) -> ValidationReport:
        """
        Check the hypotheses on a well-formed model.

        Args:
            model (JumpDistribution): Law to check
            search_bound (Optional[int]): Largest number of steps explored

        Returns:
            ValidationReport: One flag per hypothesis plus the period
        """
        if search_bound is None:
            search_bound = self.default_search_bound(model)
        if search_bound < 1:
            raise ModelError(f"search_bound must be >= 1, got {search_bound}")

        origin = np.zeros(model.dim, dtype=np.int64)
        unreached = [sign * row for row in np.eye(model.dim, dtype=np.int64) for sign in (1, -1)]
        return_lengths = []
        for n, level in _reachable_levels(model.jumps, search_bound):
            if _contains(level, origin):
                return_lengths.append(n)
            unreached = [point for point in unreached if not _contains(level, point)]
        irreducible = not unreached

        period = reduce(math.gcd, return_lengths) if return_lengths else 1

        marginal = y_marginal(model)
        y_returns = [
            n
            for n, level in _reachable_levels(marginal.jumps.reshape(-1, 1), search_bound)
            if _contains(level, origin[-1:])
        ]
        y_aperiodic = bool(y_returns) and reduce(math.gcd, y_returns) == 1

        m = mean(model)
        report = ValidationReport(
            irreducible=irreducible,
            mean=tuple(float(c) for c in m),
            mean_nonzero=bool(np.linalg.norm(m) > self.mean_tol),
            y_aperiodic=y_aperiodic,
            left_continuous=model.is_left_continuous(),
            period=period,
            search_bound=search_bound,
        )

        if self.verbose:
            logger.info(f"Validation report: {report}")
        for failure in report.failures():
            logger.warning(f"Hypothesis failed: {failure}")

        return report


def _reachable_levels(jumps: np.ndarray, n_steps: int) -> Iterator[Tuple[int, np.ndarray]]:
    """Yield (n, distinct n-step partial sums, one per row) for n = 1..n_steps."""
    jumps = np.asarray(jumps, dtype=np.int64)
    current = np.zeros((1, jumps.shape[1]), dtype=np.int64)
    for n in range(1, n_steps + 1):
        current = np.unique((current[:, None, :] + jumps[None, :, :]).reshape(-1, jumps.shape[1]), axis=0)
        yield n, current


def _contains(level: np.ndarray, point: np.ndarray) -> bool:
    return bool(np.any(np.all(level == point, axis=1)))


def mean(model: JumpDistribution) -> np.ndarray:
    """Mean jump sum_z z mu(z)."""
    return model.probs @ model.jumps


def y_marginal(model: JumpDistribution) -> OneDWalk:
    """Law of the vertical coordinate, P(0, dy) = sum_x mu(x, dy)."""
    return twisted_y_marginal(model, np.zeros(model.dim), sum_tol=model.sum_tol)


def twisted_y_marginal(
    model: JumpDistribution, a: Sequence[float], sum_tol: float = DEFAULT_TWIST_TOL
) -> OneDWalk:
    """Vertical law of the walk twisted at a, sum_x mu(x, dy) exp(alpha.x + beta dy)."""
    weights = model.tilted_weights(a)
    collapsed: Dict[int, float] = {}
    for dy, w in zip(model.jumps[:, -1], weights):
        collapsed[int(dy)] = collapsed.get(int(dy), 0.0) + float(w)
    return OneDWalk(entries=collapsed, sum_tol=sum_tol)


def twist(
    model: JumpDistribution, a: Sequence[float], tol: float = DEFAULT_TWIST_TOL
) -> JumpDistribution:
    """
    Exponential change of measure mu(z) -> mu(z) exp(a.z).

    No renormalisation is applied, so a must lie on the boundary phi(a) = 1.

    Args:
        model (JumpDistribution): Law to twist
        a (Sequence[float]): Tilt on the boundary of the dual body
        tol (float): Allowed deviation of phi(a) from one

    Returns:
        JumpDistribution: The twisted law
    """
    weights = model.tilted_weights(a)
    total = math.fsum(weights)
    if abs(total - 1.0) > tol:
        logger.error(f"Cannot twist at a={list(a)}: phi(a)={total!r}")
        raise ModelError(
            f"Twist requires phi(a) = 1 within {tol:g}, got phi(a) = {total!r}"
        )
    entries = {tuple(int(c) for c in z): float(w) for z, w in zip(model.jumps, weights)}
    return JumpDistribution(dim=model.dim, entries=entries, sum_tol=tol)
