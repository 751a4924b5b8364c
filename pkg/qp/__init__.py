from .solver import (
    QpSolution,
    QpSolverError,
    QpSpec,
    QpStatus,
    kkt_residual,
    require_optimal,
    solve_qp,
)
from .sensitivity import DegenerateActiveSet, classify_constraints, diff_solution_wrt_f
from .layer import QpLayer

__all__ = [
    'QpSolution', 'QpSolverError', 'QpSpec', 'QpStatus', 'kkt_residual', 'require_optimal',
    'solve_qp', 'DegenerateActiveSet', 'classify_constraints', 'diff_solution_wrt_f', 'QpLayer',
]
