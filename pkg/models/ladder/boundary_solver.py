import logging

import numpy as np
import scipy.sparse as sp

from enum import Enum
from dataclasses import dataclass
from abc import ABC, abstractmethod
from typing import Dict, Tuple
from scipy.sparse.linalg import spsolve
from models.errors import ConvergenceError, ModelError
from models.ladder.one_d_walk import OneDWalk, drift

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_DRIFT_TOL = 1e-9
DEFAULT_INITIAL_HEIGHT = 64
DEFAULT_MAX_HEIGHT = 65536
DEFAULT_DIRECT_LIMIT = 2048
DEFAULT_MAX_SWEEPS = 200000
RESIDUAL_FACTOR = 10.0
JACOBI_FACTOR = 1e-3


class DriftCase(Enum):
    POSITIVE = "positive"
    ZERO = "zero"


@dataclass(frozen=True)
class BoundaryFunctionTable:
    """
    Values f(1..L) of the boundary function of a killed one-dimensional walk.

    Attributes:
        drift_case (DriftCase): Survival probability (positive) or y minus mean overshoot (zero)
        height (int): Truncation height L
        values (np.ndarray): f(y) at index y - 1
        est_error (float): Largest change of f on {1..L/2} in the last doubling
        residual (float): Largest relative harmonic residual on {1..L/2}
    """

    drift_case: DriftCase
    height: int
    values: np.ndarray
    est_error: float
    residual: float = 0.0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.height,):
            raise ModelError(f"Table has {values.shape} values for height {self.height}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def value(self, y: int) -> float:
        """f(y) for y in {1..L}."""
        if not 1 <= y <= self.height:
            raise ModelError(f"Height {y} is outside the table range 1..{self.height}")
        return float(self.values[y - 1])

    def __len__(self) -> int:
        return self.height


class BoundarySolver(ABC):
    """
    Solves a linear fixed-point problem for a killed walk on {1..L} and grows
    L by doubling until the retained half of the table stops moving.

    Subclasses fix the drift regime, the source term and the far-field
    condition above L.
    """

    drift_case: DriftCase

    def __init__(self, config: dict = None):
        """
        Args:
            config (dict): Configuration dictionary containing:
                - verbose (bool): Enable detailed logging
                - tol (float): Doubling stability target
                - drift_tol (float): |drift| below this counts as zero
                - initial_height (int): First truncation height
                - max_height (int): Largest truncation height tried
                - direct_limit (int): Largest height solved by sparse LU
                - max_sweeps (int): Budget for the stationary iteration
        """
        self.config = config or {}
        self.verbose = self.config.get("verbose", False)
        self.tol = self.config.get("tol", DEFAULT_TOL)
        self.drift_tol = self.config.get("drift_tol", DEFAULT_DRIFT_TOL)
        self.initial_height = self.config.get("initial_height", DEFAULT_INITIAL_HEIGHT)
        self.max_height = self.config.get("max_height", DEFAULT_MAX_HEIGHT)
        self.direct_limit = self.config.get("direct_limit", DEFAULT_DIRECT_LIMIT)
        self.max_sweeps = self.config.get("max_sweeps", DEFAULT_MAX_SWEEPS)

    @abstractmethod
    def check_law(self, law: OneDWalk) -> None:
        """Raise ModelError when the law is outside this solver's drift regime."""
        pass

    @abstractmethod
    def _assemble(self, law: OneDWalk, height: int) -> Tuple[sp.csr_matrix, np.ndarray]:
        """Return (A, c) such that the unknown solves x = A x + c on {1..L}."""
        pass

    @abstractmethod
    def _to_table_values(self, law: OneDWalk, x: np.ndarray) -> np.ndarray:
        pass

    def solve(self, law: OneDWalk, tol: float = None) -> BoundaryFunctionTable:
        """
        Compute f on an adaptively chosen height and certify it.

        Args:
            law (OneDWalk): Vertical law of the walk
            tol (float): Doubling stability target, defaults to the configured one

        Returns:
            BoundaryFunctionTable: Table on {1..L}

        Raises:
            ModelError: If the law does not fit the drift regime
            ConvergenceError: If the height cap is reached or the certificate fails
        """
        tol = self.tol if tol is None else tol
        self.check_law(law)

        reach = max(abs(law.min_jump), abs(law.max_jump))
        height = max(self.initial_height, 4 * reach)
        previous = self._solve_at(law, height, None)
        change = np.inf

        while True:
            new_height = 2 * height
            if new_height > self.max_height:
                logger.error(f"Boundary solve did not stabilise below height {self.max_height}")
                raise ConvergenceError(
                    "Truncation height cap reached",
                    {"height": height, "change": change, "tol": tol},
                )
            current = self._solve_at(law, new_height, previous)
            change = float(np.max(np.abs(current[:height] - previous)))
            if self.verbose:
                logger.info(f"Height {new_height}: change on retained range {change:.3e}")
            height, previous = new_height, current
            if change < tol:
                break

        values = self._to_table_values(law, previous)
        residual = self._residual(law, values)
        if residual > RESIDUAL_FACTOR * tol:
            logger.error(f"Boundary function residual {residual:.3e} exceeds {RESIDUAL_FACTOR * tol:.3e}")
            raise ConvergenceError(
                "Harmonic residual certificate failed",
                {"height": height, "residual": residual, "change": change},
            )

        return BoundaryFunctionTable(
            drift_case=self.drift_case,
            height=height,
            values=values,
            est_error=change,
            residual=residual,
        )

    def _solve_at(self, law: OneDWalk, height: int, warm: np.ndarray) -> np.ndarray:
        matrix, source = self._assemble(law, height)
        if height <= self.direct_limit:
            system = sp.identity(height, format="csr") - matrix
            return np.asarray(spsolve(system.tocsc(), source), dtype=float)

        x = np.zeros(height)
        if warm is not None:
            x[: len(warm)] = warm
            x[len(warm):] = warm[-1]
        for sweep in range(self.max_sweeps):
            x_new = matrix @ x + source
            update = float(np.max(np.abs(x_new - x)))
            x = x_new
            if update < JACOBI_FACTOR * self.tol:
                if self.verbose:
                    logger.info(f"Stationary iteration at height {height}: {sweep + 1} sweeps")
                return x
        logger.error(f"Stationary iteration at height {height} did not converge")
        raise ConvergenceError(
            "Stationary iteration budget exhausted",
            {"height": height, "sweeps": self.max_sweeps, "update": update},
        )

    @staticmethod
    def _residual(law: OneDWalk, values: np.ndarray) -> float:
        """max over y in {1..L/2} of |sum_{y'>0} P(y,y') f(y') - f(y)|."""
        half = len(values) // 2
        ys = np.arange(1, half + 1)
        total = np.zeros(half)
        for j, p in law.entries.items():
            targets = ys + j
            alive = targets >= 1
            total[alive] += p * values[targets[alive] - 1]
        return float(np.max(np.abs(total - values[:half])))

    @staticmethod
    def _coo(
        law: OneDWalk, height: int, column_of
    ) -> Tuple[sp.csr_matrix, np.ndarray, Dict[int, Tuple[np.ndarray, float]]]:
        """
        Shared assembly loop. column_of(target) maps a surviving target above L
        to an in-range column, or returns None to send it to the source term.
        Killed targets (<= 0) are returned separately as their per-row mass.
        """
        ys = np.arange(1, height + 1)
        rows, cols, vals = [], [], []
        above = np.zeros(height)
        killed = {}
        for j, p in law.entries.items():
            targets = ys + j
            inside = (targets >= 1) & (targets <= height)
            rows.append(ys[inside] - 1)
            cols.append(targets[inside] - 1)
            vals.append(np.full(int(inside.sum()), p))

            high = targets > height
            if np.any(high):
                mapped = column_of(targets[high])
                if mapped is None:
                    above[high] += p
                else:
                    rows.append(ys[high] - 1)
                    cols.append(mapped - 1)
                    vals.append(np.full(int(high.sum()), p))
            low = targets <= 0
            if np.any(low):
                killed[j] = (ys[low] - 1, p)

        matrix = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(height, height),
        )
        return matrix, above, killed


class SurvivalSolver(BoundarySolver):
    """u(y) = P_y(tau = infinity) for a walk with positive drift; u = 1 above L."""

    drift_case = DriftCase.POSITIVE

    def check_law(self, law: OneDWalk) -> None:
        m = drift(law)
        if m <= self.drift_tol:
            raise ModelError(f"Survival probability needs positive drift, got {m!r}")

    def _assemble(self, law, height):
        matrix, above, _ = self._coo(law, height, lambda targets: None)
        return matrix, above

    def _to_table_values(self, law, x):
        return x


class OvershootSolver(BoundarySolver):
    """
    f(y) = y - E_y(Y(tau)) for a walk with zero drift.

    g(y) = E_y(Y(tau)) solves g = A g + c with c(y) = sum_{y+j <= 0} P(j)(y+j);
    above L, g is extrapolated flat within each residue class modulo the span.
    """

    drift_case = DriftCase.ZERO

    def check_law(self, law: OneDWalk) -> None:
        m = drift(law)
        if abs(m) > self.drift_tol:
            raise ModelError(f"Mean overshoot needs zero drift, got {m!r}")
        if not law.is_two_sided():
            raise ModelError("Mean overshoot needs jumps in both directions")

    def _assemble(self, law, height):
        span = law.span

        def fold(targets: np.ndarray) -> np.ndarray:
            return targets - span * np.ceil((targets - height) / span).astype(np.int64)

        matrix, _, killed = self._coo(law, height, fold)
        source = np.zeros(height)
        for j, (rows, p) in killed.items():
            source[rows] += p * (rows + 1 + j)
        return matrix, source

    def _to_table_values(self, law, x):
        return np.arange(1, len(x) + 1, dtype=float) - x


def survival_probability(law: OneDWalk, tol: float = None, config: dict = None) -> BoundaryFunctionTable:
    return SurvivalSolver(config).solve(law, tol)


def mean_overshoot(law: OneDWalk, tol: float = None, config: dict = None) -> BoundaryFunctionTable:
    return OvershootSolver(config).solve(law, tol)


def f_table(law: OneDWalk, tol: float = None, config: dict = None) -> BoundaryFunctionTable:
    """
    Boundary function of a walk with non-negative drift: survival probability
    for positive drift, y minus mean overshoot for zero drift.

    Raises:
        ModelError: If the drift is negative beyond the drift tolerance
    """
    config = config or {}
    drift_tol = config.get("drift_tol", DEFAULT_DRIFT_TOL)
    m = drift(law)
    if m > drift_tol:
        return survival_probability(law, tol, config)
    if m >= -drift_tol:
        return mean_overshoot(law, tol, config)
    logger.error(f"Boundary function requested for negative drift {m!r}")
    raise ModelError(f"Negative drift {m!r}: the tilt is not on the upper boundary")
