import logging

import numpy as np
from scipy import linalg

from .solver import QpSolution, QpSpec

logger = logging.getLogger(__name__)

ACTIVE_TOL = 1e-6
RANK_TOL = 1e-9


class DegenerateActiveSet(RuntimeError):
    """The active constraints are linearly dependent, so the solution map is not differentiable."""


def classify_constraints(spec: QpSpec, sol: QpSolution, tol: float = ACTIVE_TOL):
    """Split inequality rows into strongly active and weakly active index arrays."""
    slack = spec.b_in - spec.A_in @ sol.x
    tight = slack < tol
    strong = np.flatnonzero(tight & (sol.mu_in > tol))
    weak = np.flatnonzero(tight & (sol.mu_in <= tol))
    return strong, weak


def _independent_rows(base: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Indices of candidate rows that add rank to the row space of base."""
    if candidates.shape[0] == 0:
        return np.zeros(0, dtype=int)
    if base.shape[0]:
        q, _ = linalg.qr(base.T, mode='economic')
        residual = candidates - (candidates @ q) @ q.T
    else:
        residual = candidates
    _, r, pivots = linalg.qr(residual.T, mode='economic', pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0:
        return np.zeros(0, dtype=int)
    rank = int(np.sum(diag > RANK_TOL * max(1.0, diag[0])))
    return np.sort(pivots[:rank])


def active_constraint_matrix(spec: QpSpec, sol: QpSolution) -> np.ndarray:
    strong, weak = classify_constraints(spec, sol)
    base = np.vstack((spec.A_eq, spec.A_in[strong]))
    if base.shape[0] and np.linalg.matrix_rank(base, tol=RANK_TOL) < base.shape[0]:
        raise DegenerateActiveSet(
            f"{spec.A_eq.shape[0]} equalities and {strong.size} strongly active "
            f"inequalities are linearly dependent"
        )
    keep = _independent_rows(base, spec.A_in[weak])
    if weak.size:
        logger.debug(f"Holding {keep.size} of {weak.size} weakly active constraints fixed")
    return np.vstack((base, spec.A_in[weak[keep]]))


def diff_solution_wrt_f(spec: QpSpec, sol: QpSolution, grad_x: np.ndarray) -> np.ndarray:
    """
    Gradient of a scalar loss L(x*) with respect to the linear cost f,
    given dL/dx* = grad_x. Solves the adjoint system of the KKT conditions
    restricted to the active set:

        [H  C'] [u]   [grad_x]
        [C  0 ] [v] = [  0   ],      dL/df = -u
    """
    if not sol.optimal:
        raise ValueError(f"Cannot differentiate a {sol.status.value} solution")
    grad_x = np.asarray(grad_x, dtype=float).reshape(-1)
    n = spec.n
    C = active_constraint_matrix(spec, sol)
    k = C.shape[0]

    K = np.zeros((n + k, n + k))
    K[:n, :n] = spec.H
    K[:n, n:] = C.T
    K[n:, :n] = C
    try:
        lu = linalg.lu_factor(K, check_finite=True)
    except (linalg.LinAlgError, ValueError) as e:
        raise DegenerateActiveSet(f"KKT factorization failed: {e}") from e
    if np.min(np.abs(np.diag(lu[0]))) < RANK_TOL * max(1.0, np.max(np.abs(K))):
        raise DegenerateActiveSet("KKT system restricted to the active set is singular")
    adjoint = linalg.lu_solve(lu, np.concatenate((grad_x, np.zeros(k))))
    return -adjoint[:n]
