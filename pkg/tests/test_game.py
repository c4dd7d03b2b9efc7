import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffarb.errors import BoundsError, DomainError
from diffarb.game import (
    IncentiveScheme,
    SoftmaxPolicyPair,
    TabularMarkovGame,
    best_response_value,
    dump_game,
    entropy,
    evaluate_value,
    exploitability,
    load_game,
    occupancy_measure,
    perturbed_reward,
    regularized_reward,
    reward_tensor,
    sample_trajectories,
    sample_trajectory,
)
from diffarb.instances import MATCHING_PENNIES, RPS, canonical_game, deterministic_chain, random_game, stage_game
from tests import oracles

seeds = st.integers(0, 2**31 - 1)


def _random_point(seed, n_states=2, n_actions=(2, 2), horizon=2, n_params=1, gamma=0.8):
    rng = np.random.default_rng(seed)
    game, scheme = random_game(rng, n_states, n_actions, gamma, horizon, n_params)
    theta = rng.uniform(-0.5, 0.5, n_params)
    return game, scheme, theta, SoftmaxPolicyPair.random(game, rng)


# ---------------------------------------------------------------------------
# construction and validation


def test_transition_rows_must_be_stochastic():
    P = np.full((1, 1, 1, 1), 0.9)
    with pytest.raises(DomainError):
        TabularMarkovGame(P, np.zeros((1, 1, 1)), 0.5, 1, [1.0])


def test_negative_probability_rejected():
    P = np.array([1.5, -0.5]).reshape(1, 1, 1, 2)
    with pytest.raises(DomainError):
        TabularMarkovGame(np.concatenate([P, P]), np.zeros((2, 1, 1)), 0.5, 1, [1.0, 0.0])


def test_reward_bound_enforced():
    with pytest.raises(DomainError):
        stage_game([[1.5]])


def test_rho0_must_be_distribution():
    with pytest.raises(DomainError):
        TabularMarkovGame(np.ones((1, 1, 1, 1)), np.zeros((1, 1, 1)), 0.5, 1, [0.5])


@pytest.mark.parametrize("gamma", [-0.1, 1.0])
def test_gamma_range(gamma):
    with pytest.raises(DomainError):
        TabularMarkovGame(np.ones((1, 1, 1, 1)), np.zeros((1, 1, 1)), gamma, 1, [1.0])


def test_declared_reward_bound_checked_on_the_box():
    game, _ = stage_game([[0.9]])
    scheme = IncentiveScheme(np.ones((1, 1, 1, 1)), [[-0.5, 0.5]], reward_bound=1.0)
    with pytest.raises(DomainError):
        scheme.validate_against(game)


# ---------------------------------------------------------------------------
# rewards


def test_zero_features_leave_base_reward():
    game, _ = canonical_game()
    scheme = IncentiveScheme(np.zeros((2,) + game.base_reward.shape), [[-1, 1], [-1, 1]])
    assert perturbed_reward(game, scheme, [0.7, -0.4], 1, 0, 1) == game.base_reward[1, 0, 1]


def test_zero_theta_leaves_base_reward():
    game, scheme = canonical_game()
    assert perturbed_reward(game, scheme, [0.0, 0.0], 0, 1, 1) == game.base_reward[0, 1, 1]


def test_theta_derivative_is_the_feature():
    game, scheme = canonical_game()
    h = 1e-3
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        slope = (perturbed_reward(game, scheme, e, 1, 1, 0) - perturbed_reward(game, scheme, -e, 1, 1, 0)) / (2 * h)
        assert slope == pytest.approx(scheme.features[j, 1, 1, 0], abs=1e-12)


def test_theta_outside_box_raises():
    game, scheme = canonical_game()
    with pytest.raises(BoundsError):
        perturbed_reward(game, scheme, [0.6, 0.0], 0, 0, 0)


def test_bad_index_raises():
    game, scheme = canonical_game()
    with pytest.raises(IndexError):
        perturbed_reward(game, scheme, [0.0, 0.0], 2, 0, 0)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_zero_sum_conservation(seed):
    game, scheme, theta, _ = _random_point(seed, n_params=2)
    for s in range(game.n_states):
        for a in range(2):
            for b in range(2):
                r1 = perturbed_reward(game, scheme, theta, s, a, b, player=1)
                r2 = perturbed_reward(game, scheme, theta, s, a, b, player=2)
                assert r1 + r2 == 0.0


def test_regularized_reward_without_regularization():
    game, scheme, theta, pol = _random_point(3)
    assert regularized_reward(game, scheme, theta, pol, 0.0, 1, 0, 1) == perturbed_reward(game, scheme, theta, 1, 0, 1)


def test_regularized_reward_uniform_policies_cancel():
    game, scheme, theta, _ = _random_point(4)
    pol = SoftmaxPolicyPair.uniform(game)
    r = perturbed_reward(game, scheme, theta, 0, 1, 0, player=2)
    assert regularized_reward(game, scheme, theta, pol, 0.7, 0, 1, 0, player=2) == pytest.approx(r, abs=1e-15)


def test_regularized_reward_hand_value():
    # pi1(a1) = 0.5 over two actions, pi2(a2) = 0.25 over four
    game, scheme = stage_game(np.zeros((2, 4)))
    pol = SoftmaxPolicyPair.uniform(game)
    assert regularized_reward(game, scheme, np.zeros(0), pol, 1.0, 0, 0, 0) == pytest.approx(-math.log(2), abs=1e-14)


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(0.0, 2.0))
def test_expected_regularized_reward_identity(seed, lam):
    game, scheme, theta, pol = _random_point(seed, n_actions=(3, 2))
    p1, p2 = pol.probs_1, pol.probs_2
    for s in range(game.n_states):
        lhs = sum(
            p1[s, a] * p2[s, b] * regularized_reward(game, scheme, theta, pol, lam, s, a, b)
            for a in range(3)
            for b in range(2)
        )
        plain = sum(p1[s, a] * p2[s, b] * perturbed_reward(game, scheme, theta, s, a, b) for a in range(3) for b in range(2))
        assert lhs == pytest.approx(plain + lam * entropy(p1[s]) - lam * entropy(p2[s]), abs=1e-12)


# ---------------------------------------------------------------------------
# policies


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(0.1, 30.0))
def test_softmax_probabilities_valid(seed, scale):
    game, _ = random_game(np.random.default_rng(seed), 3, (4, 2))
    pol = SoftmaxPolicyPair.random(game, np.random.default_rng(seed), scale)
    for p in (pol.probs_1, pol.probs_2):
        assert np.all(p > 0)
        assert np.allclose(p.sum(1), 1.0, atol=1e-12, rtol=0)
    assert pol.dims == (3 * 3, 3 * 1)
    assert pol.n_params == 12


def test_policy_vector_roundtrip():
    _, _, _, pol = _random_point(5)
    again = pol.with_vector(pol.vector())
    assert np.array_equal(again.logits_1, pol.logits_1) and np.array_equal(again.logits_2, pol.logits_2)
    back = SoftmaxPolicyPair.from_probs(pol.probs_1, pol.probs_2)
    assert np.allclose(back.vector(), pol.vector(), atol=1e-12)


# ---------------------------------------------------------------------------
# values


def test_one_step_value_is_bilinear():
    A = np.array([[0.3, -0.6, 0.1], [0.2, 0.5, -0.9]])
    game, scheme = stage_game(A)
    pol = SoftmaxPolicyPair.random(game, np.random.default_rng(0))
    v = evaluate_value(game, scheme, np.zeros(0), pol, 0.0)
    assert v[0] == pytest.approx(pol.probs_1[0] @ A @ pol.probs_2[0], abs=1e-15)


def test_zero_reward_zero_value():
    rng = np.random.default_rng(1)
    game, _ = random_game(rng, 3, (2, 3), horizon=4)
    game = TabularMarkovGame(game.transition, np.zeros_like(game.base_reward), game.gamma, game.horizon, game.rho0)
    pol = SoftmaxPolicyPair.random(game, rng)
    assert np.all(evaluate_value(game, IncentiveScheme.none(game), np.zeros(0), pol, 0.0) == 0.0)


def test_deterministic_chain_geometric_sum():
    game, scheme = deterministic_chain(1.0, 0.5, 3)
    v = evaluate_value(game, scheme, np.zeros(0), SoftmaxPolicyPair.uniform(game), 0.0)
    assert v[0] == pytest.approx(1.75, abs=1e-15)


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_value_matches_trajectory_enumeration(seed):
    game, scheme, theta, pol = _random_point(seed, horizon=2)
    r = reward_tensor(game, scheme, theta)
    ref, count = oracles.enumerate_returns(game.dense_transition(), r, game.gamma, 2, game.rho0, pol.probs_1, pol.probs_2)
    assert count <= 200
    v = game.rho0 @ evaluate_value(game, scheme, theta, pol, 0.0)
    assert v == pytest.approx(ref, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(seeds, st.floats(0.0, 1.0))
def test_player_values_sum_to_zero(seed, lam):
    game, scheme, theta, pol = _random_point(seed, horizon=4)
    v1 = evaluate_value(game, scheme, theta, pol, lam, player=1)
    v2 = evaluate_value(game, scheme, theta, pol, lam, player=2)
    assert np.all(v1 + v2 == 0.0)


def test_regularized_value_matches_recursion_oracle():
    game, scheme, theta, pol = _random_point(11, n_states=3, n_actions=(3, 2), horizon=5)
    r = reward_tensor(game, scheme, theta)
    ref = oracles.policy_value(game.dense_transition(), r, game.gamma, 5, game.rho0, pol.probs_1, pol.probs_2, 0.4)
    assert game.rho0 @ evaluate_value(game, scheme, theta, pol, 0.4) == pytest.approx(ref, abs=1e-13)


# ---------------------------------------------------------------------------
# trajectories


def test_deterministic_game_unique_trajectory():
    game, scheme = deterministic_chain(0.5, 0.9, 4)
    traj = sample_trajectory(game, scheme, np.zeros(0), SoftmaxPolicyPair.uniform(game), np.random.default_rng(0))
    assert traj.states.tolist() == [0, 1, 1, 1, 1]
    assert len(traj) == 4
    assert traj.total_discounted_reward() == pytest.approx(0.5 * (1 + 0.9 + 0.81 + 0.729), abs=1e-15)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_trajectory_shapes_and_return(seed):
    game, scheme, theta, pol = _random_point(seed, n_states=3, horizon=5)
    traj = sample_trajectory(game, scheme, theta, pol, np.random.default_rng(seed))
    assert len(traj) == 5 and len(traj.states) == 6
    assert traj.states.min() >= 0 and traj.states.max() < 3
    assert traj.actions_1.max() < 2 and traj.actions_2.max() < 2
    r = reward_tensor(game, scheme, theta)
    manual = sum(0.8**t * r[traj.states[t], traj.actions_1[t], traj.actions_2[t]] for t in range(5))
    assert traj.total_discounted_reward() == pytest.approx(manual, abs=1e-14)
    assert traj.total_discounted_reward(player=2) == -traj.total_discounted_reward()


def test_sampling_is_seed_deterministic():
    game, scheme, theta, pol = _random_point(8, n_states=3, horizon=6)
    a = sample_trajectories(game, pol, 50, np.random.default_rng(3))
    b = sample_trajectories(game, pol, 50, np.random.default_rng(3))
    assert np.array_equal(a.states, b.states) and np.array_equal(a.actions_1, b.actions_1)


def test_empirical_state_frequencies_match_marginals():
    game, _, _, pol = _random_point(21, horizon=6)
    n = 100_000
    batch = sample_trajectories(game, pol, n, np.random.default_rng(2024))
    exact = oracles.state_marginals(game.dense_transition(), 6, game.rho0, pol.probs_1, pol.probs_2)
    for t in range(7):
        freq = np.bincount(batch.states[:, t], minlength=2) / n
        sigma = np.sqrt(exact[t] * (1 - exact[t]) / n)
        assert np.all(np.abs(freq - exact[t]) <= 3 * sigma + 1e-12)


# ---------------------------------------------------------------------------
# occupancy


def test_occupancy_single_state_point_mass():
    game, _ = stage_game(RPS, gamma=0.9, horizon=5)
    assert occupancy_measure(game, SoftmaxPolicyPair.uniform(game)).tolist() == [1.0]


def test_occupancy_tiny_gamma_is_rho0():
    rng = np.random.default_rng(0)
    game, _ = random_game(rng, 3, (2, 2), gamma=1e-9, horizon=6)
    nu = occupancy_measure(game, SoftmaxPolicyPair.random(game, rng))
    assert np.allclose(nu, game.rho0, atol=1e-6)


def test_occupancy_chain_by_hand():
    # 0 -> 1 -> 1, gamma 0.5, T = 3: weights 1 at s0, 0.5 + 0.25 at s1
    game, _ = deterministic_chain(1.0, 0.5, 3)
    nu = occupancy_measure(game, SoftmaxPolicyPair.uniform(game))
    assert nu == pytest.approx([1 / 1.75, 0.75 / 1.75], abs=1e-15)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_occupancy_normalized(seed):
    game, _, _, pol = _random_point(seed, n_states=4, horizon=7)
    nu = occupancy_measure(game, pol)
    assert abs(nu.sum() - 1.0) <= 1e-12 and nu.min() >= 0
    assert abs(occupancy_measure(game, pol, horizon=math.inf).sum() - 1.0) <= 1e-12


# ---------------------------------------------------------------------------
# best responses and exploitability


def test_best_response_to_uniform_matching_pennies():
    game, scheme = stage_game(MATCHING_PENNIES)
    v, _ = best_response_value(game, scheme, np.zeros(0), np.full((1, 2), 0.5), 0.0)
    assert v[0] == pytest.approx(0.0, abs=1e-15)


def test_best_response_ties_go_to_lowest_index():
    game, scheme = stage_game(MATCHING_PENNIES)
    _, pi = best_response_value(game, scheme, np.zeros(0), np.full((1, 2), 0.5), 0.0)
    assert pi[0, 0].tolist() == [1.0, 0.0]


def test_best_response_to_regularized_ne_is_ne_value():
    A = np.array([[0.4, -0.2, 0.1], [-0.3, 0.6, -0.5]])
    lam = 0.3
    x, y = oracles.qre_fixed_point(A, lam)
    game, scheme = stage_game(A)
    ne_value = x @ A @ y + lam * entropy(x) - lam * entropy(y)
    v1, _ = best_response_value(game, scheme, np.zeros(0), y[None], lam, player=1)
    v2, _ = best_response_value(game, scheme, np.zeros(0), x[None], lam, player=2)
    assert v1[0] == pytest.approx(ne_value, abs=1e-10)
    assert v2[0] == pytest.approx(-ne_value, abs=1e-10)


def test_best_response_matches_policy_grid_search():
    rng = np.random.default_rng(12)
    game, scheme = random_game(rng, 2, (2, 2), gamma=0.9, horizon=3)
    lam = 0.1
    opp = SoftmaxPolicyPair.random(game, rng).probs_2
    v, _ = best_response_value(game, scheme, np.zeros(0), opp, lam, player=1, horizon=math.inf)
    best = game.rho0 @ v

    # exhaustive search over stationary policies for player 1 on a 401 x 401 grid
    P, r = game.dense_transition(), game.base_reward
    g = np.linspace(1e-6, 1 - 1e-6, 401)
    p0, p1 = np.meshgrid(g, g, indexing="ij")
    pi = np.stack([np.stack([p0, 1 - p0], -1), np.stack([p1, 1 - p1], -1)], axis=-2)  # (.., S, A1)
    c = np.einsum("...sa,sab,sb->...s", pi, r, opp) - lam * np.sum(pi * np.log(pi), -1) + lam * np.sum(opp * np.log(opp), -1)
    K = np.einsum("...sa,sb,sabt->...st", pi, opp, P)
    V = np.linalg.solve(np.eye(2) - game.gamma * K, c[..., None])[..., 0]
    grid_best = float(np.max(V @ game.rho0))
    assert 0.0 <= best - grid_best <= 1e-4


def test_exploitability_zero_at_matrix_ne():
    A = np.array([[0.2, -0.7], [-0.1, 0.5]])
    x, y = oracles.qre_fixed_point(A, 0.25)
    game, scheme = stage_game(A)
    pol = SoftmaxPolicyPair.from_probs(x[None], y[None])
    assert abs(exploitability(game, scheme, np.zeros(0), pol, 0.25)) <= 1e-8


def test_exploitability_zero_for_uniform_rps():
    game, scheme = stage_game(RPS)
    assert abs(exploitability(game, scheme, np.zeros(0), SoftmaxPolicyPair.uniform(game), 0.0)) <= 1e-15


def test_perturbed_ne_exploitable_by_both_sides():
    A = np.array([[0.2, -0.7, 0.3], [-0.1, 0.5, -0.4]])
    lam = 0.2
    x, y = oracles.qre_fixed_point(A, lam)
    game, scheme = stage_game(A)
    pol = SoftmaxPolicyPair.from_probs(x[None], y[None])
    noisy = pol.with_vector(pol.vector() + 0.1 * np.random.default_rng(0).standard_normal(pol.n_params))
    e = exploitability(game, scheme, np.zeros(0), noisy, lam)
    assert e > 1e-6
    # independent recomputation: each side's gain over the noisy value, from the oracle QRE formulas
    v = float(noisy.probs_1[0] @ A @ noisy.probs_2[0] + lam * entropy(noisy.probs_1[0]) - lam * entropy(noisy.probs_2[0]))
    p2, p1 = noisy.probs_2[0], noisy.probs_1[0]
    br1 = lam * np.log(np.sum(np.exp(A @ p2 / lam))) - lam * entropy(p2)
    br2 = lam * np.log(np.sum(np.exp(-A.T @ p1 / lam))) - lam * entropy(p1)
    assert br1 - v > 0 and br2 + v > 0
    assert e == pytest.approx(br1 + br2, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seeds, st.floats(0.0, 1.0))
def test_exploitability_non_negative(seed, lam):
    game, scheme, theta, pol = _random_point(seed, n_states=3, n_actions=(3, 2), horizon=4)
    assert exploitability(game, scheme, theta, pol, lam) >= -1e-10


# ---------------------------------------------------------------------------
# interchange format


def test_json_roundtrip(tmp_path):
    game, scheme = canonical_game()
    path = tmp_path / "g.json"
    path.write_text(json.dumps(dump_game(game, scheme)))
    g2, s2 = load_game(path)
    assert np.array_equal(g2.dense_transition(), game.dense_transition())
    assert np.array_equal(g2.base_reward, game.base_reward)
    assert np.array_equal(s2.features, scheme.features)
    assert g2.horizon == game.horizon and g2.gamma == game.gamma


def test_json_load_validates_probabilities():
    game, scheme = canonical_game()
    doc = dump_game(game, scheme)
    doc["transition"][0][0][0] = [0.7, 0.7]
    with pytest.raises(DomainError):
        load_game(doc)
