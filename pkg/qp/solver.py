import logging
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e10


class QpStatus(Enum):
    OPTIMAL = 'optimal'
    INFEASIBLE = 'infeasible'
    UNBOUNDED = 'unbounded'
    MAX_ITER = 'max_iter'


class QpSolverError(RuntimeError):
    """A caller needed an optimal solution and the solver could not provide one."""

    def __init__(self, message: str, status: Optional[QpStatus] = None):
        super().__init__(message)
        self.status = status


@dataclass
class QpSpec:
    """
    minimize   1/2 x'Hx + f'x
    subject to A_eq x = b_eq,  A_in x <= b_in
    """

    H: np.ndarray
    f: np.ndarray
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    A_in: Optional[np.ndarray] = None
    b_in: Optional[np.ndarray] = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.f = np.asarray(self.f, dtype=float).reshape(-1)
        n = self.f.size
        if self.H.shape != (n, n):
            raise ValueError(f"H has shape {self.H.shape}, expected {(n, n)}")
        if not np.allclose(self.H, self.H.T, atol=1e-10, rtol=0.0):
            raise ValueError("H must be symmetric")
        self.A_eq, self.b_eq = self._block(self.A_eq, self.b_eq, n, 'equality')
        self.A_in, self.b_in = self._block(self.A_in, self.b_in, n, 'inequality')

    @staticmethod
    def _block(A, b, n, label) -> Tuple[np.ndarray, np.ndarray]:
        if A is None:
            return np.zeros((0, n)), np.zeros(0)
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape[1] != n or A.shape[0] != b.size:
            raise ValueError(f"Inconsistent {label} block: A {A.shape}, b {b.shape}, n={n}")
        return A, b

    @property
    def n(self) -> int:
        return self.f.size

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.f @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    lambda_eq: np.ndarray
    mu_in: np.ndarray
    status: QpStatus
    kkt_residual: float
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def kkt_residual(spec: QpSpec, x: np.ndarray, lambda_eq: np.ndarray, mu_in: np.ndarray) -> float:
    """
    Infinity norm over stationarity, equality residual, inequality violation,
    multiplier sign and complementarity, recomputed from (x, lambda, mu) alone.
    """
    stationarity = spec.H @ x + spec.f + spec.A_eq.T @ lambda_eq + spec.A_in.T @ mu_in
    slack = spec.b_in - spec.A_in @ x
    parts = [
        stationarity,
        spec.A_eq @ x - spec.b_eq,
        np.maximum(-slack, 0.0),
        np.maximum(-mu_in, 0.0),
        mu_in * slack,
    ]
    return float(max((np.max(np.abs(p)) for p in parts if p.size), default=0.0))


def _solve_dense(K: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    # Late interior point iterations are ill-conditioned by construction.
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', linalg.LinAlgWarning)
        try:
            sol = linalg.solve(K, rhs, assume_a='sym')
            if np.all(np.isfinite(sol)):
                return sol
        except linalg.LinAlgError:
            pass
    return linalg.lstsq(K, rhs)[0]


def _initial_point(spec: QpSpec):
    n, m, p = spec.n, spec.A_eq.shape[0], spec.A_in.shape[0]
    K = np.zeros((n + m + p, n + m + p))
    K[:n, :n] = spec.H
    K[:n, n:n + m] = spec.A_eq.T
    K[:n, n + m:] = spec.A_in.T
    K[n:n + m, :n] = spec.A_eq
    K[n + m:, :n] = spec.A_in
    K[n + m:, n + m:] = -np.eye(p)
    sol = _solve_dense(K, np.concatenate((-spec.f, spec.b_eq, spec.b_in)))
    x, y, w = sol[:n], sol[n:n + m], sol[n + m:]

    s = spec.b_in - spec.A_in @ x
    shift = -np.min(s) if p else -1.0
    if shift >= 0:
        s = s + 1.0 + shift
    z = w.copy()
    shift = -np.min(z) if p else -1.0
    if shift >= 0:
        z = z + 1.0 + shift
    return x, y, s, z


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    negative = dv < 0
    if not np.any(negative):
        return 1.0
    return float(min(1.0, np.min(-v[negative] / dv[negative])))


def _solve_equality_only(spec: QpSpec, tol: float) -> QpSolution:
    n, m = spec.n, spec.A_eq.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = spec.H
    K[:n, n:] = spec.A_eq.T
    K[n:, :n] = spec.A_eq
    sol = _solve_dense(K, np.concatenate((-spec.f, spec.b_eq)))
    x, y = sol[:n], sol[n:]
    mu = np.zeros(0)
    residual = kkt_residual(spec, x, y, mu)
    if residual <= tol:
        status = QpStatus.OPTIMAL
    elif np.max(np.abs(spec.A_eq @ x - spec.b_eq), initial=0.0) > tol:
        status = QpStatus.INFEASIBLE
    else:
        status = QpStatus.UNBOUNDED
    return QpSolution(x, y, mu, status, residual, iterations=1)


def solve_qp(spec: QpSpec, tol: float = 1e-8, max_iter: int = 100) -> QpSolution:
    """
    Dense primal-dual interior point method with Mehrotra predictor-corrector
    steps. Suited to the small problems of this package (a few hundred
    variables at most).
    """
    if spec.A_in.shape[0] == 0:
        return _solve_equality_only(spec, tol)

    H, f = spec.H, spec.f
    A, b, G, h = spec.A_eq, spec.b_eq, spec.A_in, spec.b_in
    n, m, p = spec.n, A.shape[0], G.shape[0]

    x, y, s, z = _initial_point(spec)
    status = QpStatus.MAX_ITER
    residual = kkt_residual(spec, x, y, z)

    for iteration in range(1, max_iter + 1):
        r_dual = H @ x + f + A.T @ y + G.T @ z
        r_eq = A @ x - b
        r_in = G @ x + s - h
        mu = float(s @ z) / p

        residual = kkt_residual(spec, x, y, z)
        if residual <= tol:
            status = QpStatus.OPTIMAL
            break
        if np.max(np.abs(z)) > DIVERGENCE_LIMIT:
            status = QpStatus.INFEASIBLE
            break
        if np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            status = QpStatus.UNBOUNDED
            break

        K = np.zeros((n + m, n + m))
        K[:n, :n] = H + G.T @ ((z / s)[:, None] * G)
        K[:n, n:] = A.T
        K[n:, :n] = A

        def newton(r_comp):
            rhs_x = -r_dual - G.T @ ((r_comp + z * r_in) / s)
            sol = _solve_dense(K, np.concatenate((rhs_x, -r_eq)))
            dx, dy = sol[:n], sol[n:]
            ds = -r_in - G @ dx
            dz = (r_comp - z * ds) / s
            return dx, dy, ds, dz

        dx, dy, ds, dz = newton(-s * z)
        alpha = min(_max_step(s, ds), _max_step(z, dz))
        mu_affine = float((s + alpha * ds) @ (z + alpha * dz)) / p
        sigma = (mu_affine / mu) ** 3 if mu > 0 else 0.0

        dx, dy, ds, dz = newton(-s * z - ds * dz + sigma * mu)
        alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))

        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz
        logger.debug(f"IPM iter {iteration}: residual={residual:.3e} mu={mu:.3e} step={alpha:.3f}")
    else:
        residual = kkt_residual(spec, x, y, z)
        if residual <= tol:
            status = QpStatus.OPTIMAL

    if status is not QpStatus.OPTIMAL:
        logger.debug(f"QP finished with status {status.value}, residual {residual:.3e}")
    return QpSolution(x=x, lambda_eq=y, mu_in=z, status=status,
                      kkt_residual=residual, iterations=iteration)


def require_optimal(spec: QpSpec, tol: float = 1e-8, max_iter: int = 100,
                    context: str = 'QP') -> QpSolution:
    solution = solve_qp(spec, tol=tol, max_iter=max_iter)
    if not solution.optimal:
        raise QpSolverError(
            f"{context} solve ended with status {solution.status.value} "
            f"(residual {solution.kkt_residual:.3e})",
            status=solution.status,
        )
    return solution
