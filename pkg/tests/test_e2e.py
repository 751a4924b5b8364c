import numpy as np
import pandas as pd
import pytest
import torch

from battery import (
    BatteryParams,
    DispatchPlan,
    PriceScenario,
    RewardMode,
    RewardSeries,
    TargetSpec,
    check_plan,
    stopping_reward_value,
)
from e2e import (
    E2eConfig,
    InsufficientCalibration,
    PricePredictor,
    UncertaintyBox,
    backward_through_dispatch,
    conformal_calibrate,
    dispatch_layer,
    dispatch_template,
    load_predictor,
    marginal_coverage,
    min_calibration_samples,
    nominal_dispatch,
    robust_dispatch,
    sample_task_loss,
    save_predictor,
    task_loss,
    task_loss_grad,
    train_e2e,
)


# conformal calibration

def test_conformal_radius_is_order_statistic():
    residuals = np.arange(1.0, 11.0)[:, None]
    assert conformal_calibrate(residuals, 0.2)[0] == 9.0


def test_conformal_radius_of_exact_predictions_is_zero():
    np.testing.assert_array_equal(conformal_calibrate(np.zeros((20, 3)), 0.1), np.zeros(3))


def test_conformal_radius_shrinks_with_delta():
    residuals = np.random.default_rng(0).normal(size=(100, 4))
    radii = [conformal_calibrate(residuals, delta) for delta in (0.05, 0.1, 0.2, 0.5)]
    for wide, narrow in zip(radii, radii[1:]):
        assert np.all(narrow <= wide)


def test_conformal_needs_enough_samples():
    with pytest.raises(InsufficientCalibration):
        conformal_calibrate(np.ones((3, 2)), 0.05)
    assert min_calibration_samples(0.05) == 19
    conformal_calibrate(np.ones((19, 2)), 0.05)


def test_box_rejects_negative_halfwidth():
    with pytest.raises(ValueError):
        UncertaintyBox(center=[1.0, 2.0], halfwidth=[0.5, -0.1])


def test_marginal_coverage_extremes():
    realized = [PriceScenario(prices=[10.0, 20.0]), PriceScenario(prices=[30.0, 40.0])]
    wide = [UncertaintyBox([0.0, 0.0], [np.inf, np.inf]) for _ in realized]
    assert marginal_coverage(wide, realized) == 1.0
    missed = [UncertaintyBox([1.0, 1.0], [0.0, 0.0]) for _ in realized]
    assert marginal_coverage(missed, realized) == 0.0


def test_marginal_coverage_grows_with_halfwidth():
    rng = np.random.default_rng(1)
    realized = [PriceScenario(prices=rng.normal(40, 5, size=24)) for _ in range(20)]
    previous = 0.0
    for q in np.linspace(0, 20, 11):
        coverage = marginal_coverage([UncertaintyBox(np.full(24, 40.0), np.full(24, q)) for _ in realized],
                                     realized)
        assert coverage >= previous
        previous = coverage


def test_split_conformal_coverage():
    rng = np.random.default_rng(2)
    q = conformal_calibrate(rng.normal(0, 5, size=(200, 24)), 0.05)
    realized = [PriceScenario(prices=40 + rng.normal(0, 5, size=24)) for _ in range(420)]
    boxes = [UncertaintyBox(np.full(24, 40.0), q) for _ in realized]
    assert marginal_coverage(boxes, realized) >= 0.93


# predictor

def test_zero_weights_predict_bias():
    predictor = PricePredictor(in_dim=5, horizon=3)
    with torch.no_grad():
        predictor.net[0].weight.zero_()
        predictor.net[0].bias.copy_(torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64))
    out = predictor(torch.rand(5, dtype=torch.float64))
    np.testing.assert_array_equal(out.detach().numpy(), [1.0, 2.0, 3.0])


def test_identity_weights_reproduce_features():
    predictor = PricePredictor(in_dim=24, horizon=24)
    with torch.no_grad():
        predictor.net[0].weight.copy_(torch.eye(24, dtype=torch.float64))
        predictor.net[0].bias.zero_()
    x = torch.linspace(0, 1, 24, dtype=torch.float64)
    assert torch.equal(predictor(x), x)


def test_predictor_rejects_wrong_dimension():
    with pytest.raises(ValueError):
        PricePredictor(in_dim=5, horizon=3)(torch.zeros(4, dtype=torch.float64))


def test_linear_predictor_gradient():
    predictor = PricePredictor(in_dim=4, horizon=3)
    x = torch.tensor([1.0, -2.0, 0.5, 3.0], dtype=torch.float64)
    predictor(x).sum().backward()
    np.testing.assert_allclose(predictor.net[0].weight.grad.numpy(), np.ones((3, 1)) * x.numpy()[None, :])
    np.testing.assert_allclose(predictor.net[0].bias.grad.numpy(), np.ones(3))


def test_predictor_round_trip(tmp_path):
    torch.manual_seed(0)
    predictor = PricePredictor(in_dim=6, horizon=4, architecture='mlp', hidden=(8, 5))
    path = tmp_path / 'predictor.bin'
    save_predictor(predictor, path)
    assert path.read_bytes().startswith(b'E2EW1 ')
    loaded = load_predictor(path)
    x = torch.rand(3, 6, dtype=torch.float64)
    assert torch.equal(loaded(x), predictor(x))
    assert loaded.hidden == (8, 5)


def test_load_rejects_foreign_file(tmp_path):
    path = tmp_path / 'other.bin'
    path.write_bytes(b'NOPE {}\n')
    with pytest.raises(ValueError):
        load_predictor(path)


# robust dispatch

def single_hour_target():
    return TargetSpec(band_lo=0.0, band_hi=10.0, e_target=5.0, rho=0.0, epsilon=0.05, critical_hours=(1,))


def test_single_hour_robust_dispatch(params):
    box = UncertaintyBox(center=[50.0], halfwidth=[10.0])
    result = robust_dispatch(box, RewardSeries.constant(0.0, 1), params, single_hour_target(), mu=0.1)
    assert result.plan.d[0] == pytest.approx(0.8955, abs=1e-4)
    assert result.objective == pytest.approx(179.10, abs=1e-2)
    assert result.plan.terminal_soc == pytest.approx(0.0, abs=1e-5)


def test_zero_halfwidth_is_nominal(params):
    center = np.random.default_rng(3).uniform(20, 60, size=6)
    reward = RewardSeries.constant(2.0, 6)
    target = TargetSpec(5.0, 7.0, 6.0, 10.0, 0.05, (6,))
    robust = robust_dispatch(UncertaintyBox(center, np.zeros(6)), reward, params, target, mu=0.1)
    nominal = nominal_dispatch(center, reward, params, target, mu=0.1)
    assert robust.objective == pytest.approx(nominal.objective, abs=1e-9)


def test_huge_halfwidth_idles(params):
    center = np.random.default_rng(4).uniform(20, 60, size=6)
    target = TargetSpec(5.0, 7.0, 6.0, 10.0, 0.05, (6,))
    result = robust_dispatch(UncertaintyBox(center, np.full(6, 1e4)), RewardSeries.constant(0.0, 6),
                             params, target, mu=0.1)
    assert np.max(result.plan.c) < 1e-6
    assert np.max(result.plan.d) < 1e-6


def test_wider_boxes_never_help(params):
    rng = np.random.default_rng(5)
    center = rng.uniform(20, 60, size=6)
    reward = RewardSeries.constant(2.0, 6)
    target = TargetSpec(5.0, 7.0, 6.0, 10.0, 0.05, (6,))
    values = [robust_dispatch(UncertaintyBox(center, np.full(6, q)), reward, params, target, mu=0.1)
              .regularized_objective for q in np.linspace(0, 19, 20)]
    for wider, narrower in zip(values[1:], values):
        assert wider <= narrower + 1e-4


def test_dispatch_plan_is_feasible(params):
    rng = np.random.default_rng(6)
    center = rng.uniform(20, 60, size=12)
    reward = RewardSeries.constant(3.0, 12, RewardMode.ONCE_AT_STOP)
    target = TargetSpec(5.0, 7.0, 6.0, 10.0, 0.05, (12,))
    result = robust_dispatch(UncertaintyBox(center, np.full(12, 3.0)), reward, params, target, mu=0.1)
    plan = result.plan
    assert check_plan(plan, params, tol=1e-5) == []
    np.testing.assert_allclose(plan.c + plan.d + plan.g + plan.z, 1.0, atol=1e-6)
    assert np.all(np.diff(plan.z) >= -1e-6)


def test_stop_reward_grows_along_reward_sweep(params, target, synth_table):
    scenarios = synth_table.to_scenarios()
    prices = np.array([s.prices for s in scenarios])
    # Yesterday's prices as the forecast, calibrated on the first 20 days.
    residuals = np.abs(prices[1:20] - prices[:19])
    halfwidth = conformal_calibrate(residuals, 0.1)
    boxes = [UncertaintyBox(prices[d - 1], halfwidth) for d in range(20, len(prices))]

    means = []
    for c in range(16):
        reward = RewardSeries.constant(float(c), 24)
        plans = [robust_dispatch(box, reward, params, target, mu=0.1).plan for box in boxes]
        means.append(np.mean([stopping_reward_value(plan, reward) for plan in plans]))
    assert means[0] == 0.0
    for lower, higher in zip(means, means[1:]):
        assert higher >= lower - 1e-4
    assert means[-1] > 0.0


# gradients through the dispatch

def smooth_instance(params, seed=7):
    """Strongly regularized instance whose solution sits away from kinks."""
    rng = np.random.default_rng(seed)
    T = 4
    center = rng.uniform(30, 60, size=T)
    realized = PriceScenario(prices=center + rng.normal(0, 5, size=T))
    reward = RewardSeries.constant(-1.0, T)
    target = TargetSpec(0.0, 10.0, 6.0, 1.0, 0.05, (T,))
    return T, center, realized, reward, target


def center_gradients(params, instance, h, q=2.0, mu=2000.0):
    """Analytic and central-difference gradients of the task loss with respect to the box center."""
    T, center, realized, reward, target = instance
    halfwidth = np.full(T, q)

    def loss_at(c):
        result = robust_dispatch(UncertaintyBox(c, halfwidth), reward, params, target, mu, tol=1e-9)
        return task_loss(result.plan, realized, reward, target, target.rho, params), result

    _, result = loss_at(center)
    grad_x = task_loss_grad(result.plan, realized.prices, reward, target, target.rho, params.power)
    grad_center, _ = backward_through_dispatch(result, grad_x, params.power)
    fd = np.zeros(T)
    for t in range(T):
        step = np.zeros(T)
        step[t] = h
        fd[t] = (loss_at(center + step)[0] - loss_at(center - step)[0]) / (2 * h)
    return grad_center, fd, result


def test_dispatch_gradient_matches_finite_differences(params):
    grad_center, fd, _ = center_gradients(params, smooth_instance(params), h=1e-2)
    np.testing.assert_allclose(grad_center, fd, rtol=1e-3, atol=1e-5)
    assert np.linalg.norm(fd) > 0


@pytest.mark.slow
def test_dispatch_gradient_matches_finite_differences_across_instances(params):
    for seed in range(100):
        grad_center, fd, _ = center_gradients(params, smooth_instance(params, seed), h=1e-3)
        np.testing.assert_allclose(grad_center, fd, rtol=1e-3, atol=1e-4, err_msg=f"seed {seed}")


def test_dispatch_is_equivariant_under_hour_swap():
    lossless = BatteryParams(e_min=0.0, e_max=10.0, power=5.0, eta_c=1.0, eta_d=1.0, eta_self=1.0, e0=5.0)
    reward = RewardSeries.constant(-1.0, 2)
    target = TargetSpec(0.0, 10.0, 5.0, 1.0, 0.05, (2,))
    center, realized = np.array([40.0, 50.0]), np.array([42.0, 47.0])
    forward = (2, center, PriceScenario(prices=realized), reward, target)
    swapped = (2, center[::-1].copy(), PriceScenario(prices=realized[::-1].copy()), reward, target)

    grad, _, result = center_gradients(lossless, forward, h=1e-2)
    grad_swapped, _, result_swapped = center_gradients(lossless, swapped, h=1e-2)
    np.testing.assert_allclose(result_swapped.plan.c, result.plan.c[::-1], atol=1e-6)
    np.testing.assert_allclose(result_swapped.plan.d, result.plan.d[::-1], atol=1e-6)
    np.testing.assert_allclose(grad_swapped, grad[::-1], atol=1e-5)
    assert result.plan.c[0] > 1e-4 and result.plan.d[1] > 1e-4


def test_dispatch_gradient_vanishes_when_idle(params):
    T, center, realized, reward, target = smooth_instance(params)
    target = TargetSpec(0.0, 10.0, 6.0, 0.0, 0.05, (T,))
    result = robust_dispatch(UncertaintyBox(center, np.full(T, 1e4)), reward, params, target, mu=0.1, tol=1e-9)
    grad_x = task_loss_grad(result.plan, realized.prices, reward, target, 0.0, params.power)
    grad_center, _ = backward_through_dispatch(result, grad_x, params.power)
    np.testing.assert_allclose(grad_center, 0.0, atol=1e-8)


def test_end_to_end_gradcheck(params):
    T, center, realized, reward, target = smooth_instance(params)
    q, mu = np.full(T, 2.0), 2000.0
    template = dispatch_template(T, reward, params, target, target.rho, mu)
    prices = torch.as_tensor(realized.prices)
    W = torch.tensor(center[:, None] / 2, dtype=torch.float64, requires_grad=True)
    b = torch.tensor(center / 2, dtype=torch.float64, requires_grad=True)
    x = torch.ones(1, dtype=torch.float64)

    def loss(W, b):
        x_star = dispatch_layer(W @ x + b, q, template, T, params.power, 1e-9)
        return sample_task_loss(x_star, prices, reward, target, target.rho, params.power)

    assert torch.autograd.gradcheck(loss, (W, b), eps=1e-2, atol=1e-4, rtol=1e-3)


# task loss

def test_task_loss_of_profitable_plan(params, full_band):
    plan = DispatchPlan(c=[0.0, 0.0], d=[1.0, 0.0], g=[0.0, 0.0], z=[0.0, 1.0], e=[5.0, 5.0, 5.0])
    reward = RewardSeries(values=[0.0, 42.37])
    loss = task_loss(plan, PriceScenario(prices=[20.0, 0.0]), reward, full_band(2, rho=0.0), 0.0, params)
    assert loss == pytest.approx(-142.37)


def test_task_loss_of_terminal_deviation(params, target):
    plan = DispatchPlan(c=[0.0], d=[0.0], g=[1.0], z=[0.0], e=[4.0, 4.0])
    loss = task_loss(plan, PriceScenario(prices=[30.0]), RewardSeries.constant(0.0, 1), target, 10.0, params)
    assert loss == pytest.approx(40.0)


def test_torch_task_loss_matches_numpy(params, target):
    center = np.random.default_rng(8).uniform(20, 60, size=24)
    reward = RewardSeries.constant(2.0, 24)
    realized = PriceScenario(prices=center + 3.0)
    result = robust_dispatch(UncertaintyBox(center, np.full(24, 5.0)), reward, params, target, mu=0.1)
    torch_loss = sample_task_loss(torch.as_tensor(result.solution.x), torch.as_tensor(realized.prices),
                                  reward, target, 10.0, params.power)
    assert float(torch_loss) == pytest.approx(task_loss(result.plan, realized, reward, target, 10.0, params),
                                              abs=1e-4)


# training

def e2e_config(**kwargs):
    base = dict(reward=RewardSeries.constant(2.0, 24), delta=0.2, epochs=2, batch_size=5,
                learning_rate=1e-2, seed=0)
    base.update(kwargs)
    return E2eConfig(**base)


def test_training_never_worsens_train_loss(params, target, synth_table):
    scenarios = synth_table.to_scenarios()
    train, cal = scenarios[:10], scenarios[10:30]
    model, log = train_e2e(e2e_config(), train, cal, params, target)
    assert log.best_loss <= log.initial_loss
    outcomes, coverage = model.evaluate(train)
    assert -np.mean([o.profit for o in outcomes]) == pytest.approx(log.best_loss, rel=1e-9, abs=1e-9)
    assert 0.0 <= coverage <= 1.0
    assert len(log.records) == 2


def test_training_is_deterministic(params, target, synth_table):
    scenarios = synth_table.to_scenarios()
    train, cal = scenarios[:8], scenarios[8:20]
    _, first = train_e2e(e2e_config(), train, cal, params, target)
    _, second = train_e2e(e2e_config(), train, cal, params, target)
    pd.testing.assert_frame_equal(first.to_frame(), second.to_frame())
    assert first.best_loss == second.best_loss


def test_training_needs_calibration_samples(params, target, synth_table):
    scenarios = synth_table.to_scenarios()
    with pytest.raises(InsufficientCalibration):
        train_e2e(e2e_config(), scenarios[:5], scenarios[5:7], params, target)


def test_training_rejects_overlapping_splits(params, target, synth_table):
    scenarios = synth_table.to_scenarios()
    with pytest.raises(ValueError, match="share scenarios"):
        train_e2e(e2e_config(), scenarios[:5], scenarios[4:12], params, target)
