import math
import logging

import numpy as np
import scipy.sparse as sp

from dataclasses import dataclass
from typing import Sequence, Tuple
from scipy.sparse.csgraph import dijkstra
from models.errors import ModelError
from models.walks.jump_model import JumpDistribution

logger = logging.getLogger(__name__)

DEFAULT_SEARCH_PAD = 10


def n_step_green(
    model: JumpDistribution,
    source: Sequence[int],
    target: Sequence[int],
    n_steps: int,
    kind: str = "killed",
) -> float:
    """
    sum_{n <= n_steps} P_source(Z(n) = target), with killing below y = 1 for
    kind="killed". A lower bound of the Green function, increasing in n_steps.
    """
    if kind not in ("killed", "free"):
        raise ModelError(f"Unknown Green kind {kind!r}")
    source = np.asarray(source, dtype=np.int64)
    target = np.asarray(target, dtype=np.int64)
    if kind == "killed" and (source[-1] < 1 or target[-1] < 1):
        raise ModelError("Killed sums need source and target in the half-space")

    radius = n_steps * model.max_jump_norm
    size = 2 * radius + 1
    origin = np.full(model.dim, radius)
    offset = target - source
    if np.any(np.abs(offset) > radius):
        return 0.0

    dist = np.zeros((size,) * model.dim)
    dist[tuple(origin)] = 1.0
    target_index = tuple(origin + offset)
    # grid row r along the last axis holds height source_y + r - radius
    killed_rows = slice(0, max(0, radius - int(source[-1]) + 1))

    total = dist[target_index]
    for _ in range(n_steps):
        nxt = np.zeros_like(dist)
        for jump, p in zip(model.jumps, model.probs):
            src, dst = [], []
            for s in jump:
                s = int(s)
                dst.append(slice(max(s, 0), size + min(s, 0)))
                src.append(slice(max(-s, 0), size - max(s, 0)))
            nxt[tuple(dst)] += p * dist[tuple(src)]
        if kind == "killed":
            nxt[..., killed_rows] = 0.0
        dist = nxt
        total += dist[target_index]
    return float(total)


@dataclass(frozen=True)
class KernelBounds:
    """
    Communication probabilities between z and z0 inside the half-space.

    Every killed Martin kernel K(z, .) with reference point z0 lies in
    [forward, 1 / backward].
    """

    forward: float
    backward: float

    @property
    def lower(self) -> float:
        return self.forward

    @property
    def upper(self) -> float:
        return 1.0 / self.backward if self.backward > 0.0 else math.inf

    def contains(self, value: float, rel_tol: float = 1e-9) -> bool:
        return self.lower * (1.0 - rel_tol) <= value <= self.upper * (1.0 + rel_tol)


def _search_graph(
    model: JumpDistribution, lo: np.ndarray, hi: np.ndarray
) -> Tuple[sp.csr_matrix, np.ndarray]:
    shape = tuple(int(h - l + 1) for l, h in zip(lo, hi))
    flat = np.arange(int(np.prod(shape))).reshape(shape)
    rows, cols, vals = [], [], []
    for jump, p in zip(model.jumps, model.probs):
        src, dst = [], []
        for n, j in zip(shape, jump):
            j = int(j)
            src.append(slice(max(-j, 0), n - max(j, 0)))
            dst.append(slice(max(j, 0), n + min(j, 0)))
        rows.append(flat[tuple(src)].ravel())
        cols.append(flat[tuple(dst)].ravel())
        vals.append(np.full(rows[-1].size, -math.log(p)))
    graph = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(flat.size, flat.size),
    )
    return graph, flat


def kernel_bounds(
    model: JumpDistribution,
    z: Sequence[int],
    z0: Sequence[int],
    pad: int = DEFAULT_SEARCH_PAD,
) -> KernelBounds:
    """
    Largest single-path probabilities z -> z0 and z0 -> z for paths that stay
    in the half-space and in a padded box around the two points.
    """
    z = np.asarray(z, dtype=np.int64)
    z0 = np.asarray(z0, dtype=np.int64)
    if z[-1] < 1 or z0[-1] < 1:
        raise ModelError("Kernel bounds need both points in the half-space")

    reach = pad * model.max_jump_norm
    lo = np.minimum(z, z0) - reach
    hi = np.maximum(z, z0) + reach
    lo[-1] = 1

    graph, flat = _search_graph(model, lo, hi)
    i, i0 = flat[tuple(z - lo)], flat[tuple(z0 - lo)]
    costs = dijkstra(graph, directed=True, indices=[i, i0])
    forward = math.exp(-costs[0, i0]) if np.isfinite(costs[0, i0]) else 0.0
    backward = math.exp(-costs[1, i]) if np.isfinite(costs[1, i]) else 0.0

    if forward == 0.0 or backward == 0.0:
        logger.warning(f"No path between {z.tolist()} and {z0.tolist()} within the search box")
    return KernelBounds(forward=forward, backward=backward)
