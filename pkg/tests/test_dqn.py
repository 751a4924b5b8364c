import dataclasses
import itertools

import numpy as np
import pytest
import torch
from scipy import stats

from battery import PriceScenario, RewardMode, RewardSeries, TargetSpec, case_study_params
from dqn import (
    ACTIONS,
    Action,
    BinningSpec,
    DqnConfig,
    InfeasibleAction,
    MdpState,
    PolicyTable,
    QNetwork,
    ReplayBuffer,
    Transition,
    bin_price,
    env_step,
    evaluate_policy,
    extract_policy,
    feasible_actions,
    q_forward,
    rollout,
    select_action,
    soc_levels,
    stopped_value,
    terminal_penalty,
    train_dqn,
    transition,
)

BINS = BinningSpec(0.0, 100.0, 10)


def make_cfg(c=0.0, horizon=24, mode=RewardMode.ONCE_AT_STOP, **kwargs):
    return DqnConfig(reward=RewardSeries.constant(c, horizon, mode), **kwargs)


def constant_net(values, params, horizon=24):
    net = QNetwork(params.e_max, BINS.n_bins, horizon, hidden=(4,))
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
        net.body[-1].bias.copy_(torch.tensor(values, dtype=torch.float64))
    return net


def test_bin_price():
    assert bin_price(37.0, BINS) == 3
    assert bin_price(0.0, BINS) == 0
    assert bin_price(150.0, BINS) == 9
    assert bin_price(-20.0, BINS) == 0


def test_binning_fit_spans_training_prices(scenario):
    spec = BinningSpec.fit([scenario([10, 50]), scenario([5, 30])], 4)
    assert (spec.lambda_min, spec.lambda_max, spec.n_bins) == (5.0, 50.0, 4)
    assert bin_price(50.0, spec) == 3


def test_soc_levels_case_study(params):
    assert soc_levels(params) == (0.0, 5.0)


def test_feasibility_mask(params):
    mask = feasible_actions(MdpState(e=5.0, p=0, t=1), params)
    assert list(mask) == [True, True, False, True]
    mask = feasible_actions(MdpState(e=0.0, p=0, t=1), params)
    assert list(mask) == [False, True, True, True]
    mask = feasible_actions(MdpState(e=5.0, p=0, t=1, u=True), params)
    assert list(mask) == [False, True, False, False]


def test_soc_levels_off_grid_start(params):
    assert soc_levels(dataclasses.replace(params, e0=2.5)) == (0.0, 2.5, 5.0, 7.5)


@pytest.mark.parametrize('e,expected', [
    (2.5, [False, True, True, True]),
    (4.9, [False, True, True, True]),
    (5.0, [True, True, False, True]),
    (7.5, [True, True, False, True]),
])
def test_feasibility_mask_off_grid(params, e, expected):
    off_grid = dataclasses.replace(params, e0=2.5)
    assert list(feasible_actions(MdpState(e=e, p=0, t=1), off_grid)) == expected


@pytest.mark.parametrize('e0', [5.0, 2.5, 0.0])
def test_masked_exploration_stays_on_grid(params, full_band, e0):
    battery = dataclasses.replace(params, e0=e0)
    horizon = 24
    cfg = make_cfg(5.0, horizon=horizon)
    band = full_band(horizon)
    top = np.floor(battery.e_max) - battery.power
    levels = np.array(soc_levels(battery))
    net = constant_net([0.0, 0.0, 0.0, 0.0], battery, horizon)
    rng = np.random.default_rng(11)
    steps = 0
    while steps < 100_000:
        prices = rng.uniform(0.0, 100.0, horizon)
        state = MdpState(e=float(rng.choice(levels)), p=bin_price(prices[0], BINS), t=1)
        for t in range(1, horizon + 1):
            mask = feasible_actions(state, battery)
            action = Action.IDLE if state.u else select_action(net, state, 1.0, mask, rng)
            if action is Action.CHARGE:
                assert state.e < top
            if action is Action.DISCHARGE:
                assert state.e >= battery.power - 1e-9
            nxt = prices[t] if t < horizon else None
            state = transition(state, action, prices[t - 1], nxt, cfg, battery, band, BINS).state
            assert 0.0 <= state.e < np.floor(battery.e_max)
            assert np.min(np.abs(levels - state.e)) < 1e-9
            steps += 1
    assert steps >= 100_000


def test_env_step_discharge(params, target):
    state, reward, done = env_step(MdpState(e=5.0, p=3, t=1), Action.DISCHARGE, 30.0, 40.0,
                                   make_cfg(), params, target, BINS)
    assert reward == pytest.approx(150.0)
    assert state == MdpState(e=0.0, p=4, t=2)
    assert not done


def test_env_step_charge(params, target):
    state, reward, _ = env_step(MdpState(e=0.0, p=2, t=1), Action.CHARGE, 20.0, 20.0,
                                make_cfg(), params, target, BINS)
    assert reward == pytest.approx(-100.0)
    assert state.e == 5.0


def test_stopped_state_is_absorbing(params, target):
    state = MdpState(e=5.0, p=0, t=3, u=True)
    nxt, reward, _ = env_step(state, Action.IDLE, 999.0, 10.0, make_cfg(15.0), params, target, BINS)
    assert reward == 0.0
    assert nxt.u and nxt.e == 5.0
    with pytest.raises(InfeasibleAction):
        env_step(state, Action.DISCHARGE, 999.0, 10.0, make_cfg(15.0), params, target, BINS)


def test_infeasible_charge_raises(params, target):
    with pytest.raises(InfeasibleAction):
        transition(MdpState(e=5.0, p=0, t=1), Action.CHARGE, 10.0, 10.0, make_cfg(), params, target, BINS)


@pytest.mark.parametrize('mode,expected', [
    (RewardMode.CUMULATIVE_AFTER_STOP, 360.0),
    (RewardMode.ONCE_AT_STOP, 15.0),
])
def test_stop_pays_reward(params, target, mode, expected):
    out = transition(MdpState(e=5.0, p=0, t=1), Action.STOP, 40.0, 40.0,
                     make_cfg(15.0, mode=mode), params, target, BINS)
    assert out.stop_reward == pytest.approx(expected)
    assert out.state.u


def test_terminal_penalty(params, target):
    assert terminal_penalty(5.0, params, target, 10.0) == 0.0
    assert terminal_penalty(0.0, params, target, 10.0) == pytest.approx(1000.0)
    assert terminal_penalty(0.0, params, target, 10.0, edges='band') == pytest.approx(10.0 * (49.0 + 25.0))


def test_last_step_applies_penalty(params, target):
    out = transition(MdpState(e=5.0, p=0, t=24), Action.DISCHARGE, 40.0, None, make_cfg(), params, target, BINS)
    assert out.done
    assert out.penalty == pytest.approx(1000.0)
    assert out.reward == pytest.approx(200.0 - 1000.0)


def test_greedy_choice_takes_argmax(params):
    net = constant_net([1.0, 2.0, 3.0, 0.0], params)
    mask = np.ones(4, dtype=bool)
    rng = np.random.default_rng(0)
    assert select_action(net, MdpState(e=0.0, p=0, t=1), 0.0, mask, rng) is Action.CHARGE


def test_greedy_ties_go_to_lowest_index(params):
    net = constant_net([0.0, 5.0, 5.0, 1.0], params)
    mask = np.ones(4, dtype=bool)
    assert select_action(net, MdpState(e=0.0, p=0, t=1), 0.0, mask, np.random.default_rng(0)) is Action.IDLE


def test_greedy_respects_mask(params):
    net = constant_net([0.0, 1.0, 9.0, 2.0], params)
    mask = feasible_actions(MdpState(e=5.0, p=0, t=1), params)
    assert select_action(net, MdpState(e=5.0, p=0, t=1), 0.0, mask, np.random.default_rng(0)) is Action.STOP


def test_exploration_is_uniform_over_feasible(params):
    net = constant_net([0.0, 0.0, 0.0, 0.0], params)
    state = MdpState(e=5.0, p=0, t=1)
    mask = feasible_actions(state, params)
    rng = np.random.default_rng(42)
    picks = [select_action(net, state, 1.0, mask, rng) for _ in range(10_000)]
    assert Action.CHARGE not in picks
    counts = [picks.count(a) for a in (Action.DISCHARGE, Action.IDLE, Action.STOP)]
    assert stats.chisquare(counts).pvalue > 1e-3


def test_q_forward_matches_hand_computation(params):
    net = QNetwork(params.e_max, 10, 24, hidden=(1,))
    W1, b1 = np.array([[1.0, 2.0, 3.0]]), np.array([0.5])
    W2, b2 = np.array([[1.0], [-1.0], [2.0], [0.5]]), np.array([0.0, 1.0, 2.0, 3.0])
    with torch.no_grad():
        net.body[0].weight.copy_(torch.tensor(W1))
        net.body[0].bias.copy_(torch.tensor(b1))
        net.body[2].weight.copy_(torch.tensor(W2))
        net.body[2].bias.copy_(torch.tensor(b2))
    x = np.array([5.0 / 10.0, 3.0 / 9.0, 12.0 / 24.0])
    expected = W2 @ np.maximum(W1 @ x + b1, 0.0) + b2
    np.testing.assert_allclose(q_forward(net, MdpState(e=5.0, p=3, t=12)), expected, atol=1e-12)


def test_network_gradients(params):
    torch.manual_seed(0)
    net = QNetwork(params.e_max, 10, 24, hidden=(8, 8))
    x = torch.rand(5, 3, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(net, (x,))


def _transition(k):
    return Transition(state=np.zeros(3), action=0, reward=float(k), next_state=np.zeros(3),
                      next_mask=np.ones(4, dtype=bool), bootstrap=True, fixed_next=0.0)


def test_replay_buffer_is_fifo():
    buffer = ReplayBuffer(3)
    for k in range(5):
        buffer.push(_transition(k))
    assert len(buffer) == 3
    rewards = sorted(t.reward for t in buffer.sample(3, np.random.default_rng(0)))
    assert rewards == [2.0, 3.0, 4.0]
    with pytest.raises(ValueError):
        buffer.sample(4, np.random.default_rng(0))


def test_zero_network_policy_prefers_lowest_feasible_action(params):
    net = constant_net([0.0, 0.0, 0.0, 0.0], params)
    policy = extract_policy(net, BINS, 24, params)
    assert policy.lookup(5.0, 0, 1) is Action.DISCHARGE
    assert policy.lookup(0.0, 0, 1) is Action.IDLE


def test_policy_csv_round_trip(params, tmp_path):
    rng = np.random.default_rng(0)
    actions = rng.choice([int(a) for a in ACTIONS], size=(2, 10, 24))
    policy = PolicyTable(levels=(0.0, 5.0), binning=BinningSpec(3.25, 97.5, 10), horizon=24, actions=actions)
    path = tmp_path / 'policy.csv'
    policy.to_csv(path)
    loaded = PolicyTable.from_csv(path)
    assert loaded.levels == policy.levels
    assert loaded.binning == policy.binning
    np.testing.assert_array_equal(loaded.actions, policy.actions)


def _constant_policy(action, horizon=24):
    return PolicyTable(levels=(0.0, 5.0), binning=BINS, horizon=horizon,
                       actions=np.full((2, BINS.n_bins, horizon), int(action)))


@pytest.mark.parametrize('mode,expected', [
    (RewardMode.CUMULATIVE_AFTER_STOP, 360.0),
    (RewardMode.ONCE_AT_STOP, 15.0),
])
def test_policy_stopping_at_once_collects_reward(params, target, scenario, mode, expected):
    cfg = make_cfg(15.0, mode=mode)
    (outcome,) = evaluate_policy(_constant_policy(Action.STOP), [scenario(np.full(24, 40.0))], cfg, params, target)
    assert outcome.tau == 1
    assert outcome.stop_reward == pytest.approx(expected)
    assert outcome.penalty == 0.0
    assert outcome.profit == pytest.approx(expected)


def test_idle_policy_never_stops(params, full_band, scenario):
    (outcome,) = evaluate_policy(_constant_policy(Action.IDLE), [scenario(np.full(24, 40.0))],
                                 make_cfg(15.0), params, full_band(24))
    assert outcome.tau == 25
    assert outcome.profit == 0.0


def best_return(prices, e0, cfg, params, target, binning):
    """Exhaustive search over feasible action sequences."""
    T = len(prices)
    best = -np.inf
    for sequence in itertools.product(ACTIONS, repeat=T):
        state, total = MdpState(e=e0, p=bin_price(prices[0], binning), t=1), 0.0
        for t, action in enumerate(sequence, start=1):
            if state.u:
                action = Action.IDLE
            if not feasible_actions(state, params)[ACTIONS.index(action)]:
                break
            nxt = prices[t] if t < T else None
            out = transition(state, action, prices[t - 1], nxt, cfg, params, target, binning)
            total += out.reward
            state = out.state
        else:
            best = max(best, total)
    return best


TOY_PRICES = np.array([10.0, 50.0, 20.0])


@pytest.fixture(scope='module')
def toy_run():
    battery = case_study_params()
    band = TargetSpec(band_lo=0.0, band_hi=10.0, e_target=5.0, rho=10.0, epsilon=0.05, critical_hours=(3,))
    cfg = make_cfg(0.0, horizon=3, gamma=0.99, learning_rate=1e-3, batch_size=32, buffer_capacity=5000,
                   target_sync_period=100, episodes=3000, optimizer='adam', reward_scale=0.01,
                   randomize_start=True, hidden=(32, 32), seed=0)
    result = train_dqn(cfg, [PriceScenario(prices=TOY_PRICES, id='toy')], battery, band)
    return cfg, result, battery, band


@pytest.mark.slow
def test_learns_three_hour_toy(toy_run):
    cfg, result, battery, band = toy_run
    policy = extract_policy(result.network, result.binning, 3, battery)
    for e0 in (0.0, 5.0):
        arbitrage, stop_reward, penalty, _, _ = rollout(policy, TOY_PRICES, cfg, battery, band, e0=e0)
        optimum = best_return(TOY_PRICES, e0, cfg, battery, band, result.binning)
        assert arbitrage + stop_reward - penalty == pytest.approx(optimum)


@pytest.mark.slow
def test_learned_q_is_bellman_consistent(toy_run):
    cfg, result, battery, band = toy_run
    net, binning = result.network, result.binning
    for e0 in result.levels:
        state = MdpState(e=e0, p=bin_price(TOY_PRICES[0], binning), t=1)
        for t in range(1, 4):
            mask = feasible_actions(state, battery)
            q = np.where(mask, q_forward(net, state), -np.inf)
            action = ACTIONS[int(np.argmax(q))]
            nxt = TOY_PRICES[t] if t < 3 else None
            out = transition(state, action, TOY_PRICES[t - 1], nxt, cfg, battery, band, binning)
            if out.done:
                future = 0.0
            elif out.state.u:
                future = stopped_value(out.state.e, out.state.t, cfg, battery, band) * cfg.reward_scale
            else:
                next_mask = feasible_actions(out.state, battery)
                future = np.max(np.where(next_mask, q_forward(net, out.state), -np.inf))
            expected = out.reward * cfg.reward_scale + cfg.gamma * future
            assert abs(q.max() - expected) <= 0.05 * (1.0 + abs(q.max()))
            if out.done or out.state.u:
                break
            state = out.state


@pytest.mark.slow
def test_dominant_reward_learns_to_stop(params, full_band):
    prices = np.array([10.0, 50.0, 20.0])
    cfg = make_cfg(1e4, horizon=3, mode=RewardMode.CUMULATIVE_AFTER_STOP, learning_rate=1e-3, batch_size=32,
                   buffer_capacity=5000, target_sync_period=100, episodes=1000, optimizer='adam',
                   reward_scale=1e-4, hidden=(32, 32), seed=1)
    result = train_dqn(cfg, [PriceScenario(prices=prices, id='toy')], params, full_band(3))
    policy = extract_policy(result.network, result.binning, 3, params)
    *_, tau, _ = rollout(policy, prices, cfg, params, full_band(3))
    assert tau == 1


def test_training_is_deterministic(params, target, synth_table):
    scenarios = synth_table.to_scenarios()[:5]
    cfg = make_cfg(5.0, episodes=8, batch_size=16, buffer_capacity=1000, hidden=(8,), seed=3,
                   optimizer='adam', reward_scale=1e-3)
    first = train_dqn(cfg, scenarios, params, target)
    second = train_dqn(cfg, scenarios, params, target)
    np.testing.assert_array_equal(first.log.returns, second.log.returns)
    np.testing.assert_array_equal(first.log.to_frame()['loss'].to_numpy(), second.log.to_frame()['loss'].to_numpy())
    for a, b in zip(first.network.parameters(), second.network.parameters()):
        assert torch.equal(a, b)
