import math
import logging

import numpy as np
import scipy.sparse as sp

from enum import Enum
from scipy.optimize import brentq
from scipy.special import logsumexp
from dataclasses import dataclass, field
from typing import Callable, Sequence, Tuple, Union
from models.errors import ConvergenceError, ModelError
from models.ladder.one_d_walk import OneDWalk
from models.walks.jump_model import JumpDistribution, mean

logger = logging.getLogger(__name__)

DEFAULT_RESIDUAL_TOL = 1e-10
DEFAULT_BOUNDARY_TOL = 1e-8
DEFAULT_CLASS_TOL = 1e-8
DEFAULT_MAX_ITER = 100
DEFAULT_BARRIER_FACTOR = 10.0
DEFAULT_BARRIER_T_MAX = 1e8
DEFAULT_SPECTRAL_TOL = 1e-10
DEFAULT_SPECTRAL_MAX_ITER = 500000
DEFAULT_VELOCITY_CAP = 50.0
DEFAULT_MEAN_TOL = 1e-12
UNIT_NORM_TOL = 1e-12


class BoundaryClass(Enum):
    POSITIVE_INTERIOR = "positive_interior"
    TANGENT = "tangent"


def _frozen_vector(values) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DualPoint:
    """A tilt a = (alpha, beta) in R^d."""

    coords: np.ndarray

    def __post_init__(self):
        coords = _frozen_vector(self.coords)
        if not np.all(np.isfinite(coords)):
            raise ModelError(f"Dual point {coords} has non-finite coordinates")
        object.__setattr__(self, "coords", coords)

    @property
    def alpha(self) -> np.ndarray:
        return self.coords[:-1]

    @property
    def beta(self) -> float:
        return float(self.coords[-1])

    def __iter__(self):
        return iter(self.coords.tolist())

    def __len__(self) -> int:
        return len(self.coords)


@dataclass(frozen=True)
class Direction:
    """A unit vector q; on_half_sphere records whether its last coordinate is >= 0."""

    coords: np.ndarray
    on_half_sphere: bool = field(init=False)

    def __post_init__(self):
        coords = _frozen_vector(self.coords)
        norm = float(np.linalg.norm(coords))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise ModelError(f"Direction {coords} has norm {norm!r}, not 1")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "on_half_sphere", bool(coords[-1] >= 0.0))

    @classmethod
    def from_vector(cls, v: Sequence[float]) -> "Direction":
        v = np.asarray(v, dtype=float)
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            raise ModelError("Cannot build a direction from the zero vector")
        return cls(v / norm)

    def __iter__(self):
        return iter(self.coords.tolist())

    def __len__(self) -> int:
        return len(self.coords)


VectorLike = Union[DualPoint, Direction, Sequence[float], np.ndarray]


def as_vector(v: VectorLike) -> np.ndarray:
    """Plain float array view of a dual point, direction or sequence."""
    if isinstance(v, (DualPoint, Direction)):
        return np.array(v.coords, dtype=float)
    return np.array(v, dtype=float).reshape(-1)


class DualGeometry:
    """
    Convex dual geometry of a jump law: the generating function phi, the
    body D = {phi <= 1}, the boundary map q <-> a(q), the killed spectral
    radius lambda_+ and the Legendre transform of log phi.
    """

    def __init__(self, model: JumpDistribution, config: dict = None):
        """
        Args:
            model (JumpDistribution): Law of the walk
            config (dict): Configuration dictionary containing:
                - verbose (bool): Enable detailed logging
                - residual_tol (float): Newton residual target
                - boundary_tol (float): Allowed |phi(a) - 1| for boundary points
                - class_tol (float): Tangency threshold on d phi / d beta
                - max_iter (int): Newton iteration budget
                - barrier_factor (float): Barrier parameter growth per stage
                - spectral_tol (float): Power-iteration relative bracket width
                - spectral_max_iter (int): Power-iteration budget
                - velocity_cap (float): Largest |a| before a velocity counts as unattainable
        """
        self.model = model
        self.config = config or {}
        self.verbose = self.config.get("verbose", False)
        self.tol = self.config.get("residual_tol", DEFAULT_RESIDUAL_TOL)
        self.boundary_tol = self.config.get("boundary_tol", DEFAULT_BOUNDARY_TOL)
        self.class_tol = self.config.get("class_tol", DEFAULT_CLASS_TOL)
        self.max_iter = self.config.get("max_iter", DEFAULT_MAX_ITER)
        self.barrier_factor = self.config.get("barrier_factor", DEFAULT_BARRIER_FACTOR)
        self.spectral_tol = self.config.get("spectral_tol", DEFAULT_SPECTRAL_TOL)
        self.spectral_max_iter = self.config.get(
            "spectral_max_iter", DEFAULT_SPECTRAL_MAX_ITER
        )
        self.velocity_cap = self.config.get("velocity_cap", DEFAULT_VELOCITY_CAP)

        self._jumps = model.jumps.astype(float)
        self._log_probs = np.log(model.probs)
        self._dy = model.jumps[:, -1].astype(float)
        self._x = self._jumps[:, :-1]

    @property
    def dim(self) -> int:
        return self.model.dim

    def _point(self, a: VectorLike) -> np.ndarray:
        a = as_vector(a)
        if a.shape != (self.dim,):
            raise ModelError(f"Point {a} does not have {self.dim} coordinates")
        return a

    def _alpha(self, alpha) -> np.ndarray:
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float)).reshape(-1)
        if alpha.shape != (self.dim - 1,):
            raise ModelError(f"alpha {alpha} does not have {self.dim - 1} coordinates")
        return alpha

    # generating function

    def phi(self, a: VectorLike) -> float:
        return math.fsum(self.model.tilted_weights(self._point(a)))

    def grad_phi(self, a: VectorLike) -> np.ndarray:
        return self.model.tilted_weights(self._point(a)) @ self._jumps

    def hessian_phi(self, a: VectorLike) -> np.ndarray:
        w = self.model.tilted_weights(self._point(a))
        return (self._jumps * w[:, None]).T @ self._jumps

    def log_phi(self, a: VectorLike) -> float:
        return float(logsumexp(self._log_probs + self._jumps @ self._point(a)))

    def _softmax(self, a: np.ndarray) -> np.ndarray:
        z = self._log_probs + self._jumps @ a
        z -= z.max()
        w = np.exp(z)
        return w / w.sum()

    def grad_log_phi(self, a: VectorLike) -> np.ndarray:
        return self._softmax(self._point(a)) @ self._jumps

    def hessian_log_phi(self, a: VectorLike) -> np.ndarray:
        s = self._softmax(self._point(a))
        g = s @ self._jumps
        return (self._jumps * s[:, None]).T @ self._jumps - np.outer(g, g)

    # boundary correspondence

    def q_of_a(self, a: VectorLike) -> Direction:
        """Outward normal direction grad phi(a) / |grad phi(a)|."""
        g = self.grad_phi(a)
        norm = float(np.linalg.norm(g))
        if norm == 0.0:
            raise ModelError(f"grad phi vanishes at {as_vector(a)}")
        return Direction(g / norm)

    def direction_residual(self, a: VectorLike, q: VectorLike) -> float:
        g = self.grad_phi(a)
        return float(np.linalg.norm(g / np.linalg.norm(g) - as_vector(q)))

    def a_of_q(self, q: VectorLike, tol: float = None) -> DualPoint:
        """
        Boundary point of D whose normal cone contains q, i.e. the maximiser
        of a.q over D.

        Solved by Newton on {phi(a) = 1, grad phi(a) = t q} started at
        (0, |m|); falls back on a log-barrier maximisation when Newton fails.
        Horizontal directions (q_d == 0) are snapped onto the tangent set
        through beta_min.

        Args:
            q (VectorLike): Unit direction
            tol (float): Residual tolerance on phi and on the normal direction

        Returns:
            DualPoint: a(q)
        """
        tol = self.tol if tol is None else tol
        q = Direction(as_vector(q)).coords
        if q.shape != (self.dim,):
            raise ModelError(f"Direction {q} does not have {self.dim} coordinates")
        m = mean(self.model)
        m_norm = float(np.linalg.norm(m))
        if m_norm <= DEFAULT_MEAN_TOL:
            raise ModelError("Dual body is degenerate: the mean is zero")

        try:
            a = self._kkt_newton(q, np.zeros(self.dim), m_norm, tol)
        except ConvergenceError as e:
            logger.warning(f"Newton for a(q) failed at q={q.tolist()} ({e}); using barrier")
            start = self._barrier_maximize(q)
            a = self._kkt_newton(
                q, start, float(np.linalg.norm(self.grad_phi(start))), tol
            )

        if q[-1] == 0.0:
            beta0, _ = self.beta_min(a[:-1])
            a = np.append(a[:-1], beta0)

        phi_res = abs(self.phi(a) - 1.0)
        dir_res = self.direction_residual(a, q)
        if phi_res > tol or dir_res > tol:
            logger.error(f"a(q) certificate failed for q={q.tolist()}")
            raise ConvergenceError(
                "a(q) does not satisfy the optimality conditions",
                {"phi_residual": phi_res, "direction_residual": dir_res},
            )

        if self.verbose:
            logger.info(f"a(q) for q={q.tolist()}: {a.tolist()}")

        return DualPoint(a)

    def _kkt_residual(self, a: np.ndarray, t: float, q: np.ndarray) -> np.ndarray:
        return np.concatenate(([self.phi(a) - 1.0], self.grad_phi(a) - t * q))

    def _kkt_newton(
        self, q: np.ndarray, a0: np.ndarray, t0: float, tol: float
    ) -> np.ndarray:
        a, t = np.array(a0, dtype=float), float(t0)
        norm = float(np.linalg.norm(self._kkt_residual(a, t, q)))
        target = 1e-3 * tol

        for it in range(self.max_iter):
            if norm <= target and t > 0:
                return a

            jac = np.zeros((self.dim + 1, self.dim + 1))
            jac[0, :-1] = self.grad_phi(a)
            jac[1:, :-1] = self.hessian_phi(a)
            jac[1:, -1] = -q
            try:
                step = np.linalg.solve(jac, -self._kkt_residual(a, t, q))
            except np.linalg.LinAlgError:
                break

            s = 1.0
            while s > 1e-12:
                a_new, t_new = a + s * step[:-1], t + s * step[-1]
                if t_new > 0:
                    new_norm = float(np.linalg.norm(self._kkt_residual(a_new, t_new, q)))
                    if new_norm <= (1.0 - 1e-4 * s) * norm:
                        break
                s *= 0.5
            else:
                break

            a, t, norm = a_new, t_new, new_norm

        if norm <= tol and t > 0:
            return a
        raise ConvergenceError(
            "Newton on the optimality system did not converge",
            {"iterations": it + 1, "residual": norm, "t": t},
        )

    def _barrier_maximize(self, q: np.ndarray) -> np.ndarray:
        """Approximate argmax of a.q over {log phi < 0} by a log barrier."""
        a = self.phi_minimizer().coords.copy()
        if self.log_phi(a) >= 0.0:
            raise ModelError("D has an empty interior: min phi >= 1")

        def barrier(x: np.ndarray, t: float) -> float:
            psi = self.log_phi(x)
            if psi >= 0.0:
                return math.inf
            return -t * float(x @ q) - math.log(-psi)

        t = 1.0
        while t <= DEFAULT_BARRIER_T_MAX:
            for _ in range(self.max_iter):
                psi = self.log_phi(a)
                g_psi = self.grad_log_phi(a)
                grad = -t * q + g_psi / (-psi)
                hess = self.hessian_log_phi(a) / (-psi) + np.outer(g_psi, g_psi) / psi**2
                try:
                    step = np.linalg.solve(hess, -grad)
                except np.linalg.LinAlgError as e:
                    logger.error(f"Singular barrier Hessian at a={a.tolist()} (t={t:g})")
                    raise ConvergenceError(
                        "Barrier Newton step failed",
                        {"t": t, "a": a.tolist(), "reason": str(e)},
                    )
                decrement = float(-grad @ step)
                if decrement / 2.0 < 1e-14:
                    break
                s, current = 1.0, barrier(a, t)
                while barrier(a + s * step, t) > current - 1e-4 * s * decrement:
                    s *= 0.5
                    if s < 1e-14:
                        break
                a = a + s * step
            t *= self.barrier_factor

        if self.verbose:
            logger.info(f"Barrier estimate of a(q) for q={q.tolist()}: {a.tolist()}")
        return a

    # vertical sections

    def _vertical_weights(self, alpha: np.ndarray) -> dict:
        """c(dy) = sum_x mu(x, dy) exp(alpha.x)."""
        w = np.exp(self._log_probs + self._x @ alpha)
        weights = {}
        for dy, wi in zip(self.model.jumps[:, -1], w):
            weights[int(dy)] = weights.get(int(dy), 0.0) + float(wi)
        return weights

    def _log_phi_section(self, alpha: np.ndarray) -> Callable[[float], float]:
        base = self._log_probs + self._x @ alpha
        return lambda b: float(logsumexp(base + self._dy * b))

    def beta_min(self, alpha) -> Tuple[float, float]:
        """
        Minimiser of beta -> log phi(alpha, beta) and the minimum value, which
        is the killed spectral radius lambda_+(alpha).

        Args:
            alpha: Horizontal tilt (d-1 coordinates)

        Returns:
            Tuple[float, float]: (beta_alpha^0, lambda_+(alpha))
        """
        alpha = self._alpha(alpha)
        if not (self._dy.min() < 0.0 < self._dy.max()):
            raise ModelError("Vertical marginal is one-sided: log phi is not coercive in beta")

        base = self._log_probs + self._x @ alpha

        def slope(b: float) -> float:
            z = base + self._dy * b
            z = z - z.max()
            w = np.exp(z)
            return float(w @ self._dy) / float(w.sum())

        lo, hi = -1.0, 1.0
        while slope(lo) > 0.0:
            lo *= 2.0
        while slope(hi) < 0.0:
            hi *= 2.0
        beta0 = brentq(slope, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        return float(beta0), self._log_phi_section(alpha)(beta0)

    def spectral_radius(self, alpha) -> float:
        """lambda_+(alpha) = inf_beta log phi(alpha, beta)."""
        return self.beta_min(alpha)[1]

    def boundary_point_for_alpha(self, alpha) -> DualPoint:
        """
        The point (alpha, beta_alpha) of the upper boundary with beta_alpha >= beta_alpha^0.

        Raises:
            ModelError: If lambda_+(alpha) > 0, i.e. alpha lies outside the projection of D
        """
        alpha = self._alpha(alpha)
        beta0, lam = self.beta_min(alpha)
        if lam > self.boundary_tol:
            raise ModelError(
                f"alpha={alpha.tolist()} lies outside the projected body: lambda_+ = {lam!r}"
            )
        if lam >= -self.boundary_tol:
            return DualPoint(np.append(alpha, beta0))

        section = self._log_phi_section(alpha)
        width = 1.0
        while section(beta0 + width) < 0.0:
            width *= 2.0
        beta = brentq(section, beta0, beta0 + width, xtol=1e-15, maxiter=500)
        return DualPoint(np.append(alpha, beta))

    def classify(self, a: VectorLike, class_tol: float = None) -> BoundaryClass:
        """
        Tangent (vertical derivative of phi vanishes) or positive interior point of
        the upper boundary.

        Raises:
            ModelError: If a is off the boundary or on its lower part
        """
        class_tol = self.class_tol if class_tol is None else class_tol
        a = self._point(a)
        phi_res = abs(self.phi(a) - 1.0)
        if phi_res > self.boundary_tol:
            raise ModelError(f"a={a.tolist()} is not on the boundary: |phi(a)-1| = {phi_res!r}")
        dbeta = float(self.grad_phi(a)[-1])
        if abs(dbeta) <= class_tol:
            return BoundaryClass.TANGENT
        if dbeta > 0.0:
            return BoundaryClass.POSITIVE_INTERIOR
        raise ModelError(
            f"a={a.tolist()} lies on the lower boundary: d phi/d beta = {dbeta!r}"
        )

    def conjugate_point(self, a: VectorLike) -> DualPoint:
        """
        The second boundary point sharing the horizontal coordinates of a,
        with beta_bar <= beta_alpha^0; a itself when a is tangent.
        """
        a = self._point(a)
        if self.classify(a) is BoundaryClass.TANGENT:
            return DualPoint(a)

        alpha = a[:-1]
        beta0, _ = self.beta_min(alpha)
        section = self._log_phi_section(alpha)
        width = 1.0
        while section(beta0 - width) < 0.0:
            width *= 2.0
        beta_bar = brentq(section, beta0 - width, beta0, xtol=1e-15, maxiter=500)
        return DualPoint(np.append(alpha, beta_bar))

    def minimizer_walk(self, alpha) -> OneDWalk:
        """Vertical walk twisted at (alpha, beta_alpha^0), normalised by phi; its drift is zero."""
        alpha = self._alpha(alpha)
        beta0, lam = self.beta_min(alpha)
        scale = math.exp(-lam)
        entries = {
            dy: c * math.exp(beta0 * dy) * scale
            for dy, c in self._vertical_weights(alpha).items()
        }
        return OneDWalk(entries=entries, sum_tol=1e-9)

    # Legendre transform

    def legendre_point(self, v: Sequence[float], a0: Sequence[float] = None) -> DualPoint:
        """
        Solve grad log phi(a) = v by damped Newton on log phi(a) - a.v.

        Raises:
            ModelError: If v is not an attainable velocity (|a| exceeds the cap)
        """
        v = self._point(v)
        a = np.zeros(self.dim) if a0 is None else self._point(a0)

        def objective(x: np.ndarray) -> float:
            return self.log_phi(x) - float(x @ v)

        for it in range(self.max_iter):
            grad = self.grad_log_phi(a) - v
            if float(np.linalg.norm(grad)) <= 1e-2 * self.tol:
                return DualPoint(a)
            try:
                step = np.linalg.solve(self.hessian_log_phi(a), -grad)
            except np.linalg.LinAlgError:
                raise ModelError(f"Velocity {v.tolist()} is not attainable (singular curvature)")

            s, current, slope = 1.0, objective(a), float(grad @ step)
            while objective(a + s * step) > current + 1e-4 * s * slope:
                s *= 0.5
                if s < 1e-14:
                    break
            a = a + s * step
            if float(np.linalg.norm(a)) > self.velocity_cap:
                raise ModelError(f"Velocity {v.tolist()} is not attainable")

        grad_norm = float(np.linalg.norm(self.grad_log_phi(a) - v))
        if grad_norm <= self.tol:
            return DualPoint(a)
        raise ConvergenceError(
            f"Legendre point for v={v.tolist()} did not converge",
            {"iterations": self.max_iter, "gradient_residual": grad_norm},
        )

    def log_phi_conjugate(self, v: Sequence[float]) -> float:
        """(log phi)*(v) = sup_a (a.v - log phi(a))."""
        v = self._point(v)
        a = self.legendre_point(v).coords
        return float(a @ v) - self.log_phi(a)

    def phi_minimizer(self) -> DualPoint:
        """Unique minimiser of phi; phi there is < 1 exactly when the mean is non-zero."""
        return self.legendre_point(np.zeros(self.dim))

    # truncated Feynman-Kac transform

    def feynman_kac_matrix(self, alpha, K: int, offset: int = 0) -> sp.csr_matrix:
        """
        Truncation of P(alpha; y, y') = sum_x mu(x, y'-y) exp(alpha.x) to the
        window y, y' in {offset+1 .. offset+K}.
        """
        alpha = self._alpha(alpha)
        if K < 1:
            raise ModelError(f"Truncation size must be >= 1, got {K}")
        window = np.arange(offset + 1, offset + K + 1)
        rows, cols, vals = [], [], []
        for dy, c in self._vertical_weights(alpha).items():
            src = window[(window + dy >= window[0]) & (window + dy <= window[-1])]
            rows.append(src - window[0])
            cols.append(src + dy - window[0])
            vals.append(np.full(len(src), c))
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(K, K),
        )

    def spectral_radius_truncated(self, alpha, K: int, offset: int = 0) -> float:
        """
        Log of the dominant eigenvalue of the K x K truncated Feynman-Kac matrix,
        by power iteration with a Collatz-Wielandt bracket.
        """
        matrix = self.feynman_kac_matrix(alpha, K, offset)
        shift = 1.0 if np.any(matrix.diagonal() == 0.0) else 0.0
        if shift:
            matrix = matrix + shift * sp.identity(K, format="csr")

        v = np.ones(K)
        lo = hi = 0.0
        for it in range(self.spectral_max_iter):
            w = matrix @ v
            ratios = w / v
            lo, hi = float(ratios.min()), float(ratios.max())
            if hi - lo <= self.spectral_tol * hi:
                rho = 0.5 * (lo + hi) - shift
                if self.verbose:
                    logger.info(f"Power iteration K={K} converged in {it + 1} steps")
                return math.log(rho)
            v = w / w.max()

        logger.error(f"Power iteration did not converge for K={K}")
        raise ConvergenceError(
            "Power iteration did not converge",
            {"K": K, "iterations": self.spectral_max_iter, "bracket": (lo, hi)},
        )
