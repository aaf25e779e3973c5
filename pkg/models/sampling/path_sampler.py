import math
import logging

import numpy as np

from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, Tuple
from models.errors import ModelError
from models.ladder.one_d_walk import OneDWalk, drift
from models.walks.jump_model import JumpDistribution
from models.geometry.dual_geometry import BoundaryClass, DualGeometry, as_vector

logger = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 4096
DEFAULT_MAX_WORKERS = 4
DEFAULT_DRIFT_TOL = 1e-9

GREEN_KINDS = ("killed", "free")

BatchKernel = Callable[[np.random.Generator, int], Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class MonteCarloEstimate:
    """
    Sample mean with its standard error. Unpacks as (estimate, std_error).

    censored_fraction is the share of paths still alive at the horizon; it
    measures the horizon bias, which is not included in std_error.
    """

    estimate: float
    std_error: float
    n_paths: int
    censored_fraction: float

    def __iter__(self):
        return iter((self.estimate, self.std_error))


@dataclass
class _Trajectories:
    visits: np.ndarray
    exit_points: np.ndarray
    censored: np.ndarray


class PathSampler:
    """
    Seeded, batched Monte Carlo for killed walks.

    Batch k of a run draws from SeedSequence(seed).spawn(n_batches)[k], so
    the output depends on the seed and the batch size only.
    """

    def __init__(self, config: dict = None):
        """
        Args:
            config (dict): Configuration dictionary containing:
                - verbose (bool): Enable detailed logging
                - batch_size (int): Paths per batch
                - max_workers (int): Threads running batches
                - drift_tol (float): |drift| below this selects the overshoot oracle
        """
        self.config = config or {}
        self.verbose = self.config.get("verbose", False)
        self.batch_size = self.config.get("batch_size", DEFAULT_BATCH_SIZE)
        self.max_workers = self.config.get("max_workers", DEFAULT_MAX_WORKERS)
        self.drift_tol = self.config.get("drift_tol", DEFAULT_DRIFT_TOL)

    def _batch_sizes(self, n_paths: int) -> List[int]:
        full, rest = divmod(n_paths, self.batch_size)
        return [self.batch_size] * full + ([rest] if rest else [])

    def _run(self, kernel: BatchKernel, n_paths: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
        """Run kernel on every batch; concatenate (samples, censored) in batch order."""
        if n_paths < 1:
            raise ModelError(f"n_paths must be >= 1, got {n_paths}")
        sizes = self._batch_sizes(n_paths)
        streams = np.random.SeedSequence(seed).spawn(len(sizes))

        def run_batch(k: int):
            return kernel(np.random.default_rng(streams[k]), sizes[k])

        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            results = list(executor.map(run_batch, range(len(sizes))))

        if self.verbose:
            logger.info(f"Simulated {n_paths} paths in {len(sizes)} batches (seed={seed})")

        samples = np.concatenate([r[0] for r in results])
        censored = np.concatenate([r[1] for r in results])
        return samples, censored

    @staticmethod
    def _summarise(samples: np.ndarray, censored: np.ndarray) -> MonteCarloEstimate:
        n = len(samples)
        std = float(np.std(samples, ddof=1)) if n > 1 else 0.0
        return MonteCarloEstimate(
            estimate=float(np.mean(samples)) if n else math.nan,
            std_error=std / math.sqrt(n) if n else math.nan,
            n_paths=len(censored),
            censored_fraction=float(np.mean(censored)),
        )

    @staticmethod
    def _simulate(
        rng: np.random.Generator,
        jumps: np.ndarray,
        cdf: np.ndarray,
        start: np.ndarray,
        n: int,
        horizon: int,
        killed: bool = True,
        target: Optional[np.ndarray] = None,
    ) -> _Trajectories:
        """
        Advance n copies of the walk from start for at most horizon steps.

        Killed paths stop at the first step whose last coordinate is <= 0 and
        record that position. Visits to target are counted at times 0..horizon
        while alive.
        """
        dim = jumps.shape[1]
        pos = np.tile(np.asarray(start, dtype=np.int64), (n, 1))
        index = np.arange(n)
        visits = np.zeros(n)
        exit_points = np.full((n, dim), np.nan)
        censored = np.ones(n, dtype=bool)
        last = len(cdf) - 1

        if target is not None:
            visits += np.all(pos == target, axis=1)

        for _ in range(horizon):
            if not len(index):
                break
            draws = np.minimum(np.searchsorted(cdf, rng.random(len(index)), side="right"), last)
            pos += jumps[draws]
            if killed:
                dead = pos[:, -1] <= 0
                if np.any(dead):
                    exit_points[index[dead]] = pos[dead]
                    censored[index[dead]] = False
                    pos, index = pos[~dead], index[~dead]
            if target is not None and len(index):
                visits[index[np.all(pos == target, axis=1)]] += 1

        return _Trajectories(visits=visits, exit_points=exit_points, censored=censored)

    @staticmethod
    def _tables(jumps: np.ndarray, probs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        cdf = np.cumsum(probs)
        cdf /= cdf[-1]
        return np.asarray(jumps, dtype=np.int64), cdf

    def mc_boundary_oracle(
        self, law: OneDWalk, y0: int, n_paths: int, horizon: int, seed: int
    ) -> MonteCarloEstimate:
        """
        Independent estimate of the boundary function data of a vertical walk.

        With positive drift the estimate is P_y0(tau > horizon), an upper bound
        of the survival probability. Otherwise it is E_y0(Y(tau) | tau <= horizon),
        the mean killing position, and censored_fraction reports how many paths
        the horizon cut off.

        Args:
            law (OneDWalk): Vertical law
            y0 (int): Starting height >= 1
            n_paths (int): Number of paths
            horizon (int): Largest number of steps per path
            seed (int): Root seed

        Returns:
            MonteCarloEstimate: Estimate and standard error
        """
        if y0 < 1:
            raise ModelError(f"Starting height must be >= 1, got {y0}")
        jumps, cdf = self._tables(law.jumps.reshape(-1, 1), law.probs)
        survival = drift(law) > self.drift_tol

        def kernel(rng, n):
            paths = self._simulate(rng, jumps, cdf, np.array([y0]), n, horizon)
            if survival:
                return paths.censored.astype(float), paths.censored
            return paths.exit_points[:, 0], paths.censored

        samples, censored = self._run(kernel, n_paths, seed)
        if survival:
            return self._summarise(samples, censored)

        result = self._summarise(samples[~censored], censored)
        if result.censored_fraction > 0.0:
            logger.warning(
                f"{result.censored_fraction:.3%} of paths from y={y0} were not killed within {horizon} steps"
            )
        return result

    def mc_green(
        self,
        model: JumpDistribution,
        source: Sequence[int],
        target: Sequence[int],
        kind: str,
        n_paths: int,
        horizon: int,
        seed: int,
    ) -> MonteCarloEstimate:
        """Mean number of visits to target, starting from source, before killing or the horizon."""
        if kind not in GREEN_KINDS:
            raise ModelError(f"Unknown Green kind {kind!r}, expected one of {GREEN_KINDS}")
        source = np.asarray(source, dtype=np.int64)
        target = np.asarray(target, dtype=np.int64)
        if source.shape != (model.dim,) or target.shape != (model.dim,):
            raise ModelError(f"source and target need {model.dim} coordinates")
        killed = kind == "killed"
        if killed and (source[-1] < 1 or target[-1] < 1):
            raise ModelError("Killed Green function needs source and target in the half-space")

        jumps, cdf = self._tables(model.jumps, model.probs)

        def kernel(rng, n):
            paths = self._simulate(rng, jumps, cdf, source, n, horizon, killed=killed, target=target)
            return paths.visits, paths.censored

        samples, censored = self._run(kernel, n_paths, seed)
        return self._summarise(samples, censored)

    def harmonic_estimate(
        self,
        model: JumpDistribution,
        a,
        z: Sequence[int],
        n_paths: int,
        horizon: int,
        seed: int,
        geometry: DualGeometry = None,
    ) -> MonteCarloEstimate:
        """
        Direct estimate of h_{a,+}(z) from the killing position:
        y e^{a.z} - E_z(Y(tau) e^{a.Z(tau)}; tau < inf) for tangent a and
        e^{a.z} - E_z(e^{a.Z(tau)}; tau < inf) otherwise.

        Paths alive at the horizon contribute nothing to the expectation;
        censored_fraction bounds the share of paths affected.
        """
        geometry = geometry or DualGeometry(model)
        a = as_vector(a)
        z = np.asarray(z, dtype=np.int64)
        if z.shape != (model.dim,) or z[-1] < 1:
            raise ModelError(f"z={z.tolist()} is not a point of the half-space")
        tangent = geometry.classify(a) is BoundaryClass.TANGENT
        jumps, cdf = self._tables(model.jumps, model.probs)

        def kernel(rng, n):
            paths = self._simulate(rng, jumps, cdf, z, n, horizon)
            exited = ~paths.censored
            weights = np.zeros(n)
            ends = paths.exit_points[exited]
            weights[exited] = np.exp(ends @ a)
            if tangent:
                weights[exited] *= ends[:, -1]
            return weights, paths.censored

        samples, censored = self._run(kernel, n_paths, seed)
        correction = self._summarise(samples, censored)
        lead = math.exp(float(a @ z)) * (float(z[-1]) if tangent else 1.0)
        return MonteCarloEstimate(
            estimate=lead - correction.estimate,
            std_error=correction.std_error,
            n_paths=correction.n_paths,
            censored_fraction=correction.censored_fraction,
        )
