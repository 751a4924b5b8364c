import numpy as np
import pytest
import torch

from qp import (
    QpLayer,
    QpSolverError,
    QpSpec,
    QpStatus,
    classify_constraints,
    diff_solution_wrt_f,
    kkt_residual,
    require_optimal,
    solve_qp,
)


def constructed_qp(rng, n=10, m_eq=2, p_in=6, n_active=3):
    """
    Strictly convex QP with a known optimum: x_star, its multipliers and the
    active set are drawn first and f is chosen to satisfy stationarity.
    """
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.5 * np.eye(n)
    x_star = rng.normal(size=n)
    A_eq = rng.normal(size=(m_eq, n))
    b_eq = A_eq @ x_star
    A_in = rng.normal(size=(p_in, n))
    b_in = A_in @ x_star + np.where(np.arange(p_in) < n_active, 0.0, rng.uniform(0.5, 1.5, size=p_in))
    lam = rng.normal(size=m_eq)
    mu = np.where(np.arange(p_in) < n_active, rng.uniform(0.5, 2.0, size=p_in), 0.0)
    f = -(H @ x_star + A_eq.T @ lam + A_in.T @ mu)
    return QpSpec(H=H, f=f, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in), x_star, mu


def test_single_bound_active():
    spec = QpSpec(H=[[2.0]], f=[0.0], A_in=[[-1.0]], b_in=[-1.0])
    sol = solve_qp(spec)
    assert sol.status is QpStatus.OPTIMAL
    assert sol.x[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.mu_in[0] == pytest.approx(2.0, abs=1e-6)


def test_unconstrained_minimum():
    sol = solve_qp(QpSpec(H=[[1.0]], f=[-3.0]))
    assert sol.optimal
    assert sol.x[0] == pytest.approx(3.0, abs=1e-9)


def test_recovers_constructed_optimum():
    rng = np.random.default_rng(0)
    for _ in range(200):
        spec, x_star, _ = constructed_qp(rng)
        sol = solve_qp(spec)
        assert sol.optimal
        np.testing.assert_allclose(sol.x, x_star, atol=1e-6)
        assert np.all(sol.mu_in >= -1e-8)


def test_reported_residual_matches_recomputation():
    rng = np.random.default_rng(1)
    spec, _, _ = constructed_qp(rng)
    sol = solve_qp(spec)
    assert kkt_residual(spec, sol.x, sol.lambda_eq, sol.mu_in) == pytest.approx(sol.kkt_residual, abs=1e-12)


def test_infeasible_problem_is_not_optimal():
    spec = QpSpec(H=[[1.0]], f=[0.0], A_in=[[1.0], [-1.0]], b_in=[-1.0, -1.0])
    sol = solve_qp(spec)
    assert sol.status is not QpStatus.OPTIMAL
    with pytest.raises(QpSolverError):
        require_optimal(spec)


def test_spec_rejects_asymmetric_hessian():
    with pytest.raises(ValueError, match="symmetric"):
        QpSpec(H=[[1.0, 2.0], [0.0, 1.0]], f=[0.0, 0.0])


def test_classify_constraints_on_constructed_problem():
    rng = np.random.default_rng(2)
    spec, _, _ = constructed_qp(rng)
    strong, weak = classify_constraints(spec, solve_qp(spec))
    np.testing.assert_array_equal(strong, [0, 1, 2])
    assert weak.size == 0


def test_gradient_of_unconstrained_solution():
    # x* = -f, so dx*/df = -1
    spec = QpSpec(H=[[1.0]], f=[-2.0])
    sol = solve_qp(spec)
    assert diff_solution_wrt_f(spec, sol, [1.0])[0] == pytest.approx(-1.0)


def test_gradient_vanishes_on_active_bound():
    spec = QpSpec(H=[[1.0]], f=[-2.0], A_in=[[1.0]], b_in=[0.0])
    sol = solve_qp(spec)
    assert sol.x[0] == pytest.approx(0.0, abs=1e-6)
    assert diff_solution_wrt_f(spec, sol, [1.0])[0] == pytest.approx(0.0, abs=1e-9)


def test_gradient_matches_active_set_formula():
    rng = np.random.default_rng(4)
    spec, _, _ = constructed_qp(rng)
    sol = solve_qp(spec, tol=1e-9)
    w = rng.normal(size=spec.n)

    C = np.vstack((spec.A_eq, spec.A_in[:3]))
    k = C.shape[0]
    K = np.block([[spec.H, C.T], [C, np.zeros((k, k))]])
    dx_df = -np.linalg.inv(K)[:spec.n, :spec.n]
    np.testing.assert_allclose(diff_solution_wrt_f(spec, sol, w), dx_df.T @ w, atol=1e-8)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    spec, _, _ = constructed_qp(rng)
    w = rng.normal(size=spec.n)
    grad = diff_solution_wrt_f(spec, solve_qp(spec, tol=1e-9), w)

    h = 1e-3
    fd = np.zeros(spec.n)
    for i in range(spec.n):
        step = np.zeros(spec.n)
        step[i] = h
        up = QpSpec(spec.H, spec.f + step, spec.A_eq, spec.b_eq, spec.A_in, spec.b_in)
        down = QpSpec(spec.H, spec.f - step, spec.A_eq, spec.b_eq, spec.A_in, spec.b_in)
        fd[i] = (w @ solve_qp(up, tol=1e-9).x - w @ solve_qp(down, tol=1e-9).x) / (2 * h)
    np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-6)


def test_layer_passes_gradcheck():
    rng = np.random.default_rng(6)
    template, _, _ = constructed_qp(rng, n=6, m_eq=1, p_in=4, n_active=2)
    f = torch.tensor(template.f, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda v: QpLayer.apply(v, template, 1e-9), (f,), eps=1e-3, atol=1e-5)


def test_layer_forward_matches_solver():
    rng = np.random.default_rng(7)
    template, x_star, _ = constructed_qp(rng)
    f = torch.tensor(template.f, dtype=torch.float64)
    np.testing.assert_allclose(QpLayer.apply(f, template, 1e-9).numpy(), x_star, atol=1e-6)
