import math
import logging

import numpy as np

from dataclasses import dataclass
from typing import Optional, Sequence
from models.errors import ModelError
from models.ladder.one_d_walk import OneDWalk
from models.walks.jump_model import JumpDistribution, twisted_y_marginal
from models.ladder.boundary_solver import (
    BoundaryFunctionTable,
    OvershootSolver,
    SurvivalSolver,
)
from models.geometry.dual_geometry import (
    BoundaryClass,
    DualGeometry,
    DualPoint,
    as_vector,
)

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_TANGENT_DRIFT_TOL = 1e-6


@dataclass(frozen=True)
class HarmonicEvaluator:
    """
    h_{a,+}(x, y) = exp(a.(x, y)) f(y) for a on the upper boundary of D.

    Attributes:
        a (DualPoint): Tilt; tangent tilts carry beta snapped to the vertical minimiser
        boundary_class (BoundaryClass): Tangent or positive interior
        table (BoundaryFunctionTable): f of the twisted vertical walk
        conjugate (Optional[DualPoint]): Conjugate point, present for left-continuous models
    """

    a: DualPoint
    boundary_class: BoundaryClass
    table: BoundaryFunctionTable
    conjugate: Optional[DualPoint] = None

    @property
    def height(self) -> int:
        return self.table.height

    def evaluate(self, z: Sequence[int]) -> float:
        z = np.asarray(z, dtype=float)
        if z.shape != (len(self.a),):
            raise ModelError(f"z={z.tolist()} does not have {len(self.a)} coordinates")
        y = int(z[-1])
        if y <= 0:
            return 0.0
        return math.exp(float(self.a.coords @ z)) * self.table.value(y)

    def x_profile(self, y: int, xs: Sequence[Sequence[int]]) -> np.ndarray:
        """exp(-alpha.x) h(x, y) over the grid xs; constant in x."""
        alpha = self.a.alpha
        profile = []
        for x in xs:
            x = np.atleast_1d(np.asarray(x, dtype=float))
            profile.append(math.exp(-float(alpha @ x)) * self.evaluate(np.append(x, y)))
        return np.array(profile)


class HarmonicBuilder:
    """Builds h_{a,+} through the twisted one-dimensional reduction."""

    def __init__(
        self, config: dict = None, geometry_config: dict = None, ladder_config: dict = None
    ):
        """
        Args:
            config (dict): Configuration dictionary containing:
                - verbose (bool): Enable detailed logging
                - tol (float): Ladder tolerance used by build
                - tangent_drift_tol (float): Drift tolerance of the tangent overshoot solve
            geometry_config (dict): Section passed to DualGeometry
            ladder_config (dict): Section passed to the ladder solvers
        """
        self.config = config or {}
        self.verbose = self.config.get("verbose", False)
        self.tol = self.config.get("tol", DEFAULT_TOL)
        self.tangent_drift_tol = self.config.get("tangent_drift_tol", DEFAULT_TANGENT_DRIFT_TOL)
        self.geometry_config = geometry_config or {}
        self.ladder_config = ladder_config or {}

    def build(
        self, model: JumpDistribution, a, tol: float = None, geometry: DualGeometry = None
    ) -> HarmonicEvaluator:
        """
        Twist the model at a, take the vertical marginal and solve for f.

        Args:
            model (JumpDistribution): Law of the walk
            a: Tilt on the upper boundary of D
            tol (float): Ladder tolerance
            geometry (DualGeometry): Geometry of model, built when omitted

        Returns:
            HarmonicEvaluator: The evaluator

        Raises:
            ModelError: If a is off the upper boundary
        """
        tol = self.tol if tol is None else tol
        geometry = geometry or DualGeometry(model, self.geometry_config)
        a = as_vector(a)
        boundary_class = geometry.classify(a)

        if boundary_class is BoundaryClass.TANGENT:
            beta0, _ = geometry.beta_min(a[:-1])
            a = np.append(a[:-1], beta0)

        law = normalised_marginal(model, a, geometry.boundary_tol)
        if boundary_class is BoundaryClass.TANGENT:
            config = {**self.ladder_config, "drift_tol": self.tangent_drift_tol}
            table = OvershootSolver(config).solve(law, tol)
        else:
            table = SurvivalSolver(self.ladder_config).solve(law, tol)

        conjugate = None
        if model.is_left_continuous():
            conjugate = geometry.conjugate_point(a)

        if self.verbose:
            logger.info(
                f"Built h for a={a.tolist()} ({boundary_class.value}), height {table.height}"
            )

        return HarmonicEvaluator(
            a=DualPoint(a), boundary_class=boundary_class, table=table, conjugate=conjugate
        )


def normalised_marginal(model: JumpDistribution, a, tol: float) -> OneDWalk:
    """Vertical law of the walk twisted at a boundary point, rescaled to unit mass."""
    law = twisted_y_marginal(model, a, sum_tol=tol)
    total = math.fsum(law.entries.values())
    return OneDWalk({dy: p / total for dy, p in law.entries.items()})


def build(model: JumpDistribution, a, tol: float = None, config: dict = None) -> HarmonicEvaluator:
    return HarmonicBuilder(config).build(model, a, tol)


def evaluate(ev: HarmonicEvaluator, z: Sequence[int]) -> float:
    return ev.evaluate(z)


def explicit_left_continuous(
    model: JumpDistribution, a, z: Sequence[int], geometry: DualGeometry = None
) -> float:
    """
    Closed form of h_{a,+} for a left-continuous walk:
    exp(a.z) - exp(a_bar.z) off the tangent set, y exp(a.z) on it.

    Raises:
        ModelError: If the model jumps down by more than one
    """
    if not model.is_left_continuous():
        raise ModelError("Closed form needs a left-continuous model (vertical jumps >= -1)")
    geometry = geometry or DualGeometry(model)
    a = as_vector(a)
    z = np.asarray(z, dtype=float)

    if geometry.classify(a) is BoundaryClass.TANGENT:
        beta0, _ = geometry.beta_min(a[:-1])
        a = np.append(a[:-1], beta0)
        return float(z[-1]) * math.exp(float(a @ z))

    a_bar = geometry.conjugate_point(a).coords
    return math.exp(float(a @ z)) - math.exp(float(a_bar @ z))


def harmonic_residual(model: JumpDistribution, ev: HarmonicEvaluator, z: Sequence[int]) -> float:
    """|sum_{z' in half-space} mu(z' - z) h(z') - h(z)| / h(z)."""
    z = np.asarray(z, dtype=np.int64)
    if z[-1] < 1:
        raise ModelError(f"z={z.tolist()} is not in the half-space")
    if z[-1] + model.max_vertical_jump > ev.height:
        raise ModelError(
            f"Neighbours of z={z.tolist()} leave the table range 1..{ev.height}"
        )
    h = ev.evaluate(z)
    total = math.fsum(p * ev.evaluate(z + jump) for jump, p in zip(model.jumps, model.probs))
    return abs(total - h) / h


def martin_candidate_ratio(ev: HarmonicEvaluator, z: Sequence[int], z0: Sequence[int]) -> float:
    """h(z) / h(z0), the candidate limit of the Martin kernel."""
    denominator = ev.evaluate(z0)
    if denominator == 0.0:
        raise ModelError(f"h vanishes at the reference point {list(z0)}")
    return ev.evaluate(z) / denominator
