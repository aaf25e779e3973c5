import math
import logging

import numpy as np

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple
from models.errors import IncomparableFieldsError, ModelError
from models.walks.jump_model import JumpDistribution, LatticeVector, ModelValidator, twist
from models.geometry.dual_geometry import DualGeometry, Direction, as_vector
from models.harmonic.harmonic_function import HarmonicBuilder, martin_candidate_ratio
from models.managers.experiment_manager import ExperimentManager
from models.green.green_solver import (
    FreeGreenSolver,
    GreenField,
    GreenKind,
    GreenSolver,
    KilledGreenSolver,
    TruncationBox,
)

logger = logging.getLogger(__name__)

DEFAULT_X_SCALE = 2.0
DEFAULT_X_PAD = 40
DEFAULT_Y_SCALE = 1.0
DEFAULT_Y_PAD = 40
DEFAULT_DOUBLING = "last"
DEFAULT_DOUBLING_THRESHOLD = 0.005
DEFAULT_MAX_EXTRA_DOUBLINGS = 2
DOUBLING_MODES = ("last", "all", "none")


@dataclass(frozen=True)
class Target:
    """Entry z_n of a target schedule, tagged with its schedule parameter n."""

    n: int
    point: LatticeVector

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.point))


def as_targets(targets: Sequence) -> List[Target]:
    """Accept Target objects or bare points (numbered from 1)."""
    out = []
    for k, t in enumerate(targets, start=1):
        if isinstance(t, Target):
            out.append(t)
        else:
            out.append(Target(n=k, point=tuple(int(c) for c in t)))
    return out


def diag_targets(ns: Sequence[int], dim: int) -> List[Target]:
    return [Target(n, (n,) * dim) for n in ns]


def wall_targets(ns: Sequence[int], dim: int) -> List[Target]:
    return [Target(n, (n,) + (0,) * (dim - 2) + (1,)) for n in ns]


def ray_targets(ns: Sequence[int], q: Sequence[float], killed: bool = True) -> List[Target]:
    """z_n = round(n q); killed schedules keep the last coordinate >= 1."""
    q = as_vector(q)
    targets = []
    for n in ns:
        point = [int(round(n * c)) for c in q]
        if killed:
            point[-1] = max(point[-1], 1)
        targets.append(Target(n, tuple(point)))
    return targets


@dataclass(frozen=True)
class BoxPolicy:
    """x half-width = x_scale |z_n| + x_pad, y_max = y_scale |z_n| + y_pad."""

    x_scale: float = DEFAULT_X_SCALE
    x_pad: int = DEFAULT_X_PAD
    y_scale: float = DEFAULT_Y_SCALE
    y_pad: int = DEFAULT_Y_PAD

    @classmethod
    def from_config(cls, config: dict) -> "BoxPolicy":
        config = config or {}
        return cls(
            x_scale=config.get("x_scale", DEFAULT_X_SCALE),
            x_pad=config.get("x_pad", DEFAULT_X_PAD),
            y_scale=config.get("y_scale", DEFAULT_Y_SCALE),
            y_pad=config.get("y_pad", DEFAULT_Y_PAD),
        )

    def box_for(self, target: Sequence[int], kind: GreenKind = GreenKind.KILLED) -> TruncationBox:
        target = [int(c) for c in target]
        norm = float(np.linalg.norm(target))
        x_half = tuple(
            max(int(math.ceil(self.x_scale * norm + self.x_pad)), abs(c) + 1) for c in target[:-1]
        )
        y_max = max(int(math.ceil(self.y_scale * norm + self.y_pad)), abs(target[-1]) + 1)
        y_min = 1 if kind is GreenKind.KILLED else -y_max
        return TruncationBox(x_half, y_max, y_min)


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    abs_zn: float
    kernel: float
    limit: float
    abs_err: float
    box_change: Optional[float] = None


@dataclass
class ConvergenceTable:
    """Kernel values along a target schedule for one source point z."""

    z: LatticeVector
    rows: List[ConvergenceRow] = field(default_factory=list)

    @property
    def errors(self) -> List[float]:
        return [row.abs_err for row in self.rows]

    @property
    def final_error(self) -> float:
        return self.rows[-1].abs_err

    def eventually_decreasing(self, lag: int = 3, count: int = 4) -> bool:
        """Each of the last `count` errors is <= the error `lag` rows earlier."""
        errors = self.errors
        if len(errors) < lag + 1:
            return True
        start = max(lag, len(errors) - count)
        return all(errors[k] <= errors[k - lag] for k in range(start, len(errors)))


def ld_slope(fields: Sequence[GreenField], z: Sequence[int]) -> List[float]:
    """(1 / |z_n|) log G(z, z_n) for every field of a target sequence."""
    slopes = []
    for f in fields:
        value = f.value(z)
        if value <= 0.0:
            raise ModelError(f"Green value G({list(z)}, {f.target}) is not positive")
        slopes.append(math.log(value) / float(np.linalg.norm(f.target)))
    return slopes


def target_norms(fields: Sequence[GreenField]) -> List[float]:
    return [float(np.linalg.norm(f.target)) for f in fields]


def compare_fields(
    field_: GreenField, twisted: GreenField, a: Sequence[float], z: Sequence[int]
) -> float:
    """|G~(z, z') - exp(a.(z' - z)) G(z, z')| / G(z, z') for two fields of the same target and box."""
    if field_.box != twisted.box or field_.target != twisted.target:
        raise IncomparableFieldsError(
            f"Fields on {field_.box} / {twisted.box} for targets "
            f"{field_.target} / {twisted.target} cannot be compared"
        )
    base = field_.value(z)
    if base <= 0.0:
        raise ModelError(f"Green value at {list(z)} is zero; pair lies outside the box")
    shift = float(as_vector(a) @ (np.asarray(field_.target, dtype=float) - np.asarray(z, dtype=float)))
    return abs(twisted.value(z) - math.exp(shift) * base) / base


class ExperimentRunner:
    """
    Green-function experiments for one model: Martin-kernel ratio limits,
    the shift-ratio check, the twisted-Green identity and the free-walk limit.
    """

    def __init__(self, model: JumpDistribution, config: dict = None):
        """
        Args:
            model (JumpDistribution): Law of the walk
            config (dict): Application configuration with the sections
                "experiments", "green", "geometry", "harmonic", "ladder" and
                the top-level "max_workers"
        """
        self.model = model
        self.config = config or {}
        section = self.config.get("experiments", {})
        self.verbose = section.get("verbose", False)
        self.policy = BoxPolicy.from_config(section)
        self.doubling = section.get("doubling", DEFAULT_DOUBLING)
        if self.doubling not in DOUBLING_MODES:
            raise ModelError(f"Unknown doubling mode {self.doubling!r}, expected one of {DOUBLING_MODES}")
        self.doubling_threshold = section.get("doubling_threshold", DEFAULT_DOUBLING_THRESHOLD)
        self.max_extra_doublings = section.get("max_extra_doublings", DEFAULT_MAX_EXTRA_DOUBLINGS)

        self.green_config = self.config.get("green", {})
        self.geometry = DualGeometry(model, self.config.get("geometry", {}))
        self.builder = HarmonicBuilder(
            self.config.get("harmonic", {}),
            geometry_config=self.config.get("geometry", {}),
            ladder_config=self.config.get("ladder", {}),
        )
        self.manager = ExperimentManager(
            {"verbose": self.verbose, "max_workers": self.config.get("max_workers")}
        )
        self.last_fields: List[GreenField] = []

    def _solver(self, kind: GreenKind) -> GreenSolver:
        if kind is GreenKind.KILLED:
            return KilledGreenSolver(self.green_config)
        return FreeGreenSolver(self.green_config)

    def solve_fields(
        self, targets: Sequence, kind: GreenKind = GreenKind.KILLED, tol: float = None
    ) -> List[GreenField]:
        """One Green field per target, boxes from the policy, solved concurrently."""
        solver = self._solver(kind)
        targets = as_targets(targets)
        return self.manager.run_schedule(
            lambda t: solver.solve(self.model, t.point, self.policy.box_for(t.point, kind), tol),
            targets,
            label=kind.value,
        )

    def _certified(
        self,
        fields: List[GreenField],
        kernels: Callable[[GreenField], List[float]],
        tol: float = None,
    ) -> Tuple[List[GreenField], List[Optional[float]]]:
        """
        Re-solve the selected targets on doubled boxes until every kernel moves
        by less than the doubling threshold (relative).
        """
        if self.doubling == "none" or not fields:
            self.last_fields = list(fields)
            return fields, [None] * len(fields)
        chosen = range(len(fields)) if self.doubling == "all" else [len(fields) - 1]
        fields = list(fields)
        changes: List[Optional[float]] = [None] * len(fields)

        for k in chosen:
            current = fields[k]
            solver = self._solver(current.kind)
            change = math.inf
            for _ in range(self.max_extra_doublings + 1):
                bigger = solver.solve(self.model, current.target, current.box.doubled(), tol)
                old, new = kernels(current), kernels(bigger)
                change = max(
                    abs(b - o) / abs(b) if b != 0.0 else abs(b - o) for o, b in zip(old, new)
                )
                current = bigger
                if change < self.doubling_threshold:
                    break
            else:
                logger.warning(
                    f"Kernel for target {current.target} still moved by {change:.3%} after box doubling"
                )
            if self.verbose:
                logger.info(f"Doubling check for {current.target}: change {change:.3e}")
            fields[k], changes[k] = current, change
        self.last_fields = fields
        return fields, changes

    def ratio_limit_experiment(
        self,
        q: Sequence[float],
        targets: Sequence,
        zs: Sequence[Sequence[int]],
        z0: Sequence[int],
        tol: float = None,
    ) -> List[ConvergenceTable]:
        """
        Killed Martin kernels K(z, z_n) = G(z, z_n) / G(z0, z_n) against the
        limit h(z) / h(z0) with h = h_{a(q),+}.

        Returns:
            List[ConvergenceTable]: One table per z, rows in schedule order
        """
        direction = Direction.from_vector(q)
        a = self.geometry.a_of_q(direction)
        evaluator = self.builder.build(self.model, a, geometry=self.geometry)
        limits = [martin_candidate_ratio(evaluator, z, z0) for z in zs]

        targets = as_targets(targets)
        fields = self.solve_fields(targets, GreenKind.KILLED, tol)
        fields, changes = self._certified(
            fields, lambda f: [f.value(z) / f.value(z0) for z in zs], tol
        )

        tables = [ConvergenceTable(z=tuple(z)) for z in zs]
        for target, f, change in zip(targets, fields, changes):
            reference = f.value(z0)
            if reference <= 0.0:
                raise ModelError(f"G({list(z0)}, {target.point}) vanishes; enlarge the box")
            for table, z, limit in zip(tables, zs, limits):
                kernel = f.value(z) / reference
                table.rows.append(
                    ConvergenceRow(target.n, target.norm, kernel, limit, abs(kernel - limit), change)
                )
        self._log_trend(tables)
        return tables

    def shift_ratio_check(
        self,
        targets: Sequence,
        z: Sequence[int],
        w: Sequence[int],
        k_hat: int = None,
        tol: float = None,
    ) -> ConvergenceTable:
        """G(z + k w, z_n) / G(z, z_n) along the schedule, k the period of the walk."""
        w = np.asarray(w, dtype=np.int64)
        if w[-1] != 0:
            raise ModelError(f"Shift w={w.tolist()} must be horizontal")
        if k_hat is None:
            k_hat = ModelValidator().validate(self.model).period
        shifted = tuple(int(c) for c in np.asarray(z, dtype=np.int64) + k_hat * w)

        targets = as_targets(targets)
        fields = self.solve_fields(targets, GreenKind.KILLED, tol)
        fields, changes = self._certified(fields, lambda f: [f.value(shifted) / f.value(z)], tol)

        table = ConvergenceTable(z=tuple(z))
        for target, f, change in zip(targets, fields, changes):
            ratio = f.value(shifted) / f.value(z)
            table.rows.append(ConvergenceRow(target.n, target.norm, ratio, 1.0, abs(ratio - 1.0), change))
        self._log_trend([table])
        return table

    def twisted_green_identity_check(
        self,
        a: Sequence[float],
        pairs: Sequence[Tuple[Sequence[int], Sequence[int]]],
        box: TruncationBox,
        tol: float = None,
        twisted_box: TruncationBox = None,
    ) -> float:
        """
        Largest relative deviation of G~(z, z') from exp(a.(z' - z)) G(z, z')
        over the pairs, G~ being the Green function of the walk twisted at a.

        Raises:
            IncomparableFieldsError: If the twisted solve uses a different box
        """
        twisted_box = box if twisted_box is None else twisted_box
        if twisted_box != box:
            raise IncomparableFieldsError(f"Boxes {box} and {twisted_box} differ")
        twisted_model = twist(self.model, as_vector(a), tol=self.geometry.boundary_tol)
        solver = KilledGreenSolver(self.green_config)

        by_target: Dict[LatticeVector, List[LatticeVector]] = {}
        for z, target in pairs:
            by_target.setdefault(tuple(int(c) for c in target), []).append(tuple(int(c) for c in z))

        def check(target: LatticeVector) -> float:
            plain = solver.solve(self.model, target, box, tol)
            twisted = solver.solve(twisted_model, target, twisted_box, tol)
            return max(compare_fields(plain, twisted, a, z) for z in by_target[target])

        deviations = self.manager.run_schedule(check, list(by_target), label="twisted")
        return max(deviations)

    def neyspitzer(
        self,
        q: Sequence[float],
        targets: Sequence,
        zs: Sequence[Sequence[int]],
        tol: float = None,
    ) -> List[ConvergenceTable]:
        """Free-walk kernels G(z, z_n) / G(0, z_n) against exp(a(q).z)."""
        a = self.geometry.a_of_q(Direction.from_vector(q)).coords
        origin = (0,) * self.model.dim
        limits = [math.exp(float(a @ np.asarray(z, dtype=float))) for z in zs]

        targets = as_targets(targets)
        fields = self.solve_fields(targets, GreenKind.FREE, tol)
        fields, changes = self._certified(
            fields, lambda f: [f.value(z) / f.value(origin) for z in zs], tol
        )

        tables = [ConvergenceTable(z=tuple(z)) for z in zs]
        for target, f, change in zip(targets, fields, changes):
            reference = f.value(origin)
            for table, z, limit in zip(tables, zs, limits):
                kernel = f.value(z) / reference
                table.rows.append(
                    ConvergenceRow(target.n, target.norm, kernel, limit, abs(kernel - limit), change)
                )
        self._log_trend(tables)
        return tables

    @staticmethod
    def _log_trend(tables: Sequence[ConvergenceTable]) -> None:
        for table in tables:
            if not table.eventually_decreasing():
                logger.warning(f"Errors for z={table.z} are not eventually decreasing: {table.errors}")


def ratio_limit_experiment(
    model, q, targets, zs, z0, box_policy: BoxPolicy = None, tol: float = None, config: dict = None
) -> List[ConvergenceTable]:
    runner = ExperimentRunner(model, config)
    if box_policy is not None:
        runner.policy = box_policy
    return runner.ratio_limit_experiment(q, targets, zs, z0, tol)


def shift_ratio_check(
    model, targets, z, w, box_policy: BoxPolicy = None, k_hat: int = None, tol: float = None, config: dict = None
) -> ConvergenceTable:
    runner = ExperimentRunner(model, config)
    if box_policy is not None:
        runner.policy = box_policy
    return runner.shift_ratio_check(targets, z, w, k_hat, tol)


def twisted_green_identity_check(
    model, a, pairs, box: TruncationBox, tol: float = None, config: dict = None, twisted_box: TruncationBox = None
) -> float:
    return ExperimentRunner(model, config).twisted_green_identity_check(a, pairs, box, tol, twisted_box)


def neyspitzer(
    model, q, targets, zs, box_policy: BoxPolicy = None, tol: float = None, config: dict = None
) -> List[ConvergenceTable]:
    runner = ExperimentRunner(model, config)
    if box_policy is not None:
        runner.policy = box_policy
    return runner.neyspitzer(q, targets, zs, tol)
