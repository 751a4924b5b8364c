from dataclasses import replace

import numpy as np
import torch
from torch.autograd import Function

from .sensitivity import diff_solution_wrt_f
from .solver import QpSpec, require_optimal


class QpLayer(Function):
    """
    Optimization layer x*(f) = argmin 1/2 x'Hx + f'x over a fixed feasible set.
    Only the linear cost carries gradients; H and the constraints are constants.
    """

    @staticmethod
    def forward(ctx, f, template: QpSpec, tol: float = 1e-7):
        spec = replace(template, f=f.detach().cpu().double().numpy())
        solution = require_optimal(spec, tol=tol, context='QpLayer')
        ctx.spec = spec
        ctx.solution = solution
        return torch.as_tensor(solution.x, dtype=f.dtype)

    @staticmethod
    def backward(ctx, grad_x):
        grad_f = diff_solution_wrt_f(ctx.spec, ctx.solution,
                                     grad_x.detach().cpu().double().numpy())
        return torch.as_tensor(np.asarray(grad_f), dtype=grad_x.dtype), None, None
