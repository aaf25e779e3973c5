import logging

import numpy as np
import scipy.sparse as sp

from enum import Enum
from dataclasses import dataclass
from abc import ABC, abstractmethod
from typing import List, Sequence, Tuple
from scipy.sparse.linalg import spsolve
from models.errors import ConvergenceError, ModelError
from models.walks.jump_model import JumpDistribution, LatticeVector, mean

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_SWEEPS = 200000
DEFAULT_METHOD = "sweep"
DEFAULT_MEAN_TOL = 1e-12
METHODS = ("sweep", "direct")


class GreenKind(Enum):
    KILLED = "killed"
    FREE = "free"


@dataclass(frozen=True)
class TruncationBox:
    """
    Lattice box [-w_1, w_1] x ... x [-w_{d-1}, w_{d-1}] x [y_min, y_max].

    Killed fields use y_min = 1; the free walk uses a box symmetric in y.
    """

    x_half_width: Tuple[int, ...]
    y_max: int
    y_min: int = 1

    def __post_init__(self):
        widths = tuple(int(w) for w in self.x_half_width)
        if not widths or any(w < 1 for w in widths):
            raise ModelError(f"Box half-widths must be positive, got {widths}")
        if self.y_max < max(self.y_min, 1):
            raise ModelError(f"Box height {self.y_max} is below y_min={self.y_min}")
        object.__setattr__(self, "x_half_width", widths)

    @property
    def dim(self) -> int:
        return len(self.x_half_width) + 1

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(2 * w + 1 for w in self.x_half_width) + (self.y_max - self.y_min + 1,)

    def contains(self, z: Sequence[int]) -> bool:
        *x, y = (int(c) for c in z)
        return self.y_min <= y <= self.y_max and all(abs(c) <= w for c, w in zip(x, self.x_half_width))

    def strictly_contains(self, z: Sequence[int]) -> bool:
        *x, y = (int(c) for c in z)
        return self.y_min <= y < self.y_max and all(abs(c) < w for c, w in zip(x, self.x_half_width))

    def index(self, z: Sequence[int]) -> Tuple[int, ...]:
        *x, y = (int(c) for c in z)
        return tuple(c + w for c, w in zip(x, self.x_half_width)) + (y - self.y_min,)

    def doubled(self) -> "TruncationBox":
        """Box with every extent doubled; y_min stays at 1 for killed boxes."""
        y_min = self.y_min if self.y_min >= 1 else 2 * self.y_min
        return TruncationBox(tuple(2 * w for w in self.x_half_width), 2 * self.y_max, y_min)


@dataclass(frozen=True)
class GreenField:
    """
    Expected visits u(z) = G(z, target) for every source z in a box.

    Attributes:
        target (LatticeVector): Fixed target point
        kind (GreenKind): Killed or free walk
        values (np.ndarray): u over the box, indexed by TruncationBox.index
        iterations (int): Sweeps performed (0 for a direct solve)
        residual (float): Sup-norm residual of the fixed-point equation
        box (TruncationBox): Truncation box
    """

    target: LatticeVector
    kind: GreenKind
    values: np.ndarray
    iterations: int
    residual: float
    box: TruncationBox

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "target", tuple(int(c) for c in self.target))

    def value(self, z: Sequence[int]) -> float:
        """u(z), zero outside the box (which includes the killed region)."""
        if not self.box.contains(z):
            return 0.0
        return float(self.values[self.box.index(z)])


class GreenSolver(ABC):
    """
    Solves u(z) = 1{z = target} + sum_j mu(j) u(z + j) on a truncation box with
    u = 0 outside it.

    The default method is in-place successive substitution over colour
    classes y mod (max |dy| + 1), alternating forward and backward sweeps;
    "direct" factorises the truncated system instead.
    """

    kind: GreenKind

    def __init__(self, config: dict = None):
        """
        Args:
            config (dict): Configuration dictionary containing:
                - verbose (bool): Enable detailed logging
                - tol (float): Sup-norm update at which sweeping stops
                - max_sweeps (int): Sweep budget
                - method (str): "sweep" or "direct"
        """
        self.config = config or {}
        self.verbose = self.config.get("verbose", False)
        self.tol = self.config.get("tol", DEFAULT_TOL)
        self.max_sweeps = self.config.get("max_sweeps", DEFAULT_MAX_SWEEPS)
        self.method = self.config.get("method", DEFAULT_METHOD)
        if self.method not in METHODS:
            raise ModelError(f"Unknown Green method {self.method!r}, expected one of {METHODS}")

    @abstractmethod
    def check(self, model: JumpDistribution, target: LatticeVector, box: TruncationBox) -> None:
        pass

    def solve(
        self,
        model: JumpDistribution,
        target: Sequence[int],
        box: TruncationBox,
        tol: float = None,
    ) -> GreenField:
        """
        Compute the Green field of target on box.

        Raises:
            ModelError: If the target is not strictly inside the box or the model does not fit
            ConvergenceError: If the sweep budget runs out
        """
        tol = self.tol if tol is None else tol
        target = tuple(int(c) for c in target)
        if len(target) != model.dim or box.dim != model.dim:
            raise ModelError(f"Target {target} and box must have {model.dim} coordinates")
        if not box.strictly_contains(target):
            raise ModelError(f"Target {target} is not strictly inside {box}")
        self.check(model, target, box)

        source = np.zeros(box.shape)
        source[box.index(target)] = 1.0

        if self.method == "direct":
            values, iterations = self._direct(model, box, source), 0
        else:
            values, iterations = self._sweep(model, box, source, tol)

        residual = float(np.max(np.abs(source + _apply(model, values) - values)))
        if self.verbose:
            logger.info(
                f"{self.kind.value} Green field for {target} on {box.shape}: "
                f"{iterations} sweeps, residual {residual:.3e}"
            )
        return GreenField(
            target=target,
            kind=self.kind,
            values=values,
            iterations=iterations,
            residual=residual,
            box=box,
        )

    def _sweep(
        self, model: JumpDistribution, box: TruncationBox, source: np.ndarray, tol: float
    ) -> Tuple[np.ndarray, int]:
        pads = _pads(model)
        padded = np.zeros(tuple(n + 2 * p for n, p in zip(box.shape, pads)))
        interior = tuple(slice(p, p + n) for n, p in zip(box.shape[:-1], pads[:-1]))
        ny, py = box.shape[-1], pads[-1]
        colours = max(abs(model.min_vertical_jump), abs(model.max_vertical_jump)) + 1
        classes = [np.arange(c, ny, colours) for c in range(min(colours, ny))]
        shifted = [
            (
                tuple(slice(pad + int(j), pad + int(j) + n) for n, pad, j in zip(box.shape[:-1], pads[:-1], jump[:-1])),
                int(jump[-1]),
                p,
            )
            for jump, p in zip(model.jumps, model.probs)
        ]

        update = np.inf
        for sweep in range(1, self.max_sweeps + 1):
            order = classes if sweep % 2 else classes[::-1]
            update = 0.0
            for rows in order:
                new = source[..., rows].copy()
                for x_slices, dy, p in shifted:
                    new += p * padded[x_slices + (rows + py + dy,)]
                old = padded[interior + (rows + py,)]
                update = max(update, float(np.max(np.abs(new - old))))
                padded[interior + (rows + py,)] = new
            if update < tol:
                return padded[interior + (slice(py, py + ny),)].copy(), sweep

        logger.error(f"Green sweeps did not converge on box {box.shape}")
        raise ConvergenceError(
            "Green sweep budget exhausted",
            {"sweeps": self.max_sweeps, "update": update, "box": box.shape},
        )

    @staticmethod
    def _direct(model: JumpDistribution, box: TruncationBox, source: np.ndarray) -> np.ndarray:
        shape = box.shape
        flat = np.arange(int(np.prod(shape))).reshape(shape)
        rows, cols, vals = [], [], []
        for jump, p in zip(model.jumps, model.probs):
            src, dst = _overlap(shape, jump)
            rows.append(flat[src].ravel())
            cols.append(flat[dst].ravel())
            vals.append(np.full(flat[src].size, p))
        n = flat.size
        matrix = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )
        system = (sp.identity(n, format="csr") - matrix).tocsc()
        return np.asarray(spsolve(system, source.ravel()), dtype=float).reshape(shape)


class KilledGreenSolver(GreenSolver):
    """Green function of the walk killed when its last coordinate drops to <= 0."""

    kind = GreenKind.KILLED

    def check(self, model, target, box):
        if box.y_min != 1:
            raise ModelError(f"Killed boxes start at y=1, got y_min={box.y_min}")


class FreeGreenSolver(GreenSolver):
    """Green function of the unkilled walk; needs a non-zero mean to be finite."""

    kind = GreenKind.FREE

    def check(self, model, target, box):
        if float(np.linalg.norm(mean(model))) <= DEFAULT_MEAN_TOL:
            raise ModelError("Free Green function needs a non-zero mean (transience)")


def _pads(model: JumpDistribution) -> List[int]:
    return [int(np.abs(model.jumps[:, i]).max()) for i in range(model.dim)]


def _overlap(shape: Tuple[int, ...], jump: Sequence[int]) -> Tuple[tuple, tuple]:
    """Slices (src, dst) with dst = src + jump, both inside shape."""
    src, dst = [], []
    for n, j in zip(shape, jump):
        j = int(j)
        src.append(slice(max(-j, 0), n - max(j, 0)))
        dst.append(slice(max(j, 0), n + min(j, 0)))
    return tuple(src), tuple(dst)


def _apply(model: JumpDistribution, values: np.ndarray) -> np.ndarray:
    """(A u)(z) = sum_j mu(j) u(z + j) with u = 0 outside the box."""
    out = np.zeros_like(values)
    for jump, p in zip(model.jumps, model.probs):
        src, dst = _overlap(values.shape, jump)
        out[src] += p * values[dst]
    return out


def green_killed(
    model: JumpDistribution, target: Sequence[int], box: TruncationBox, tol: float = None, config: dict = None
) -> GreenField:
    return KilledGreenSolver(config).solve(model, target, box, tol)


def green_free(
    model: JumpDistribution, target: Sequence[int], box: TruncationBox, tol: float = None, config: dict = None
) -> GreenField:
    return FreeGreenSolver(config).solve(model, target, box, tol)


def martin_kernel(field: GreenField, z: Sequence[int], z0: Sequence[int]) -> float:
    """K(z, target) = u(z) / u(z0)."""
    denominator = field.value(z0)
    if denominator <= 0.0:
        raise ModelError(f"Green value at the reference point {list(z0)} is zero")
    return field.value(z) / denominator
