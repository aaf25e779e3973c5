import math

import numpy as np

from functools import reduce
from typing import Dict, Mapping
from dataclasses import dataclass, field
from models.errors import ModelError

DEFAULT_SUM_TOL = 1e-12


@dataclass(frozen=True)
class OneDWalk:
    """
    Law P(0, dy) of a random walk on Z.

    Attributes:
        entries (Mapping[int, float]): jump -> probability, all strictly positive
        sum_tol (float): Allowed deviation of the total mass from one
    """

    entries: Mapping[int, float]
    sum_tol: float = field(default=DEFAULT_SUM_TOL, compare=False, repr=False)

    def __post_init__(self):
        if not self.entries:
            raise ModelError("A one-dimensional walk needs at least one jump")

        cleaned: Dict[int, float] = {}
        for jump, prob in self.entries.items():
            prob = float(prob)
            if not math.isfinite(prob) or prob <= 0.0:
                raise ModelError(f"Jump {jump} has non-positive probability {prob}")
            cleaned[int(jump)] = prob

        total = math.fsum(cleaned.values())
        if abs(total - 1.0) > self.sum_tol:
            raise ModelError(
                f"Probabilities sum to {total!r}, not 1 within {self.sum_tol:g}"
            )

        object.__setattr__(self, "entries", dict(sorted(cleaned.items())))

    @property
    def jumps(self) -> np.ndarray:
        return np.fromiter(self.entries.keys(), dtype=np.int64)

    @property
    def probs(self) -> np.ndarray:
        return np.fromiter(self.entries.values(), dtype=float)

    @property
    def min_jump(self) -> int:
        return min(self.entries)

    @property
    def max_jump(self) -> int:
        return max(self.entries)

    @property
    def span(self) -> int:
        """Greatest common divisor of the non-zero jumps (1 when there are none)."""
        nonzero = [abs(j) for j in self.entries if j != 0]
        return reduce(math.gcd, nonzero) if nonzero else 1

    def is_two_sided(self) -> bool:
        """True when the walk can move both down and up."""
        return self.min_jump < 0 < self.max_jump

    def is_left_continuous(self) -> bool:
        return self.min_jump >= -1

    def get(self, jump: int) -> float:
        return self.entries.get(jump, 0.0)


def drift(law: OneDWalk) -> float:
    """Mean jump of the walk."""
    return math.fsum(j * p for j, p in law.entries.items())
