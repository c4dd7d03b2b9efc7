"""Small reproducible games used by the tests, the CLI defaults and the scripts."""

from __future__ import annotations

import numpy as np

from .game import IncentiveScheme, SoftmaxPolicyPair, TabularMarkovGame

RPS = np.array([[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]])
MATCHING_PENNIES = np.array([[1.0, -1.0], [-1.0, 1.0]])


def random_game(rng, n_states=3, n_actions=(2, 2), gamma=0.9, horizon=3, n_params=0, reward_scale=0.5):
    """Dense random game with stochastic transitions and a ``[-reward_scale, reward_scale]`` reward.

    Features are drawn in ``[-0.5, 0.5]`` with bounds ``[-0.5, 0.5]`` so the
    perturbed reward stays inside ``[-1, 1]``.
    """
    a1, a2 = n_actions
    P = rng.random((n_states, a1, a2, n_states)) + 0.05
    P /= P.sum(-1, keepdims=True)
    r = rng.uniform(-reward_scale, reward_scale, (n_states, a1, a2))
    rho0 = np.full(n_states, 1.0 / n_states)
    game = TabularMarkovGame(P, r, gamma, horizon, rho0)
    feats = rng.uniform(-0.5, 0.5, (n_params, n_states, a1, a2)) / max(n_params, 1)
    bounds = np.tile([-0.5, 0.5], (n_params, 1))
    return game, IncentiveScheme(feats, bounds, reward_bound=1.0)


def canonical_game(horizon=3, gamma=0.8):
    """The 2-state, 2x2-action, two-parameter test game (seed 20240611)."""
    return random_game(np.random.default_rng(20240611), 2, (2, 2), gamma, horizon, n_params=2)


def canonical_point():
    """Interior ``(theta, policy)`` at which the canonical game is differentiated."""
    game, scheme = canonical_game()
    rng = np.random.default_rng(7)
    theta = np.array([0.2, -0.3])
    return game, scheme, theta, SoftmaxPolicyPair.random(game, rng, scale=0.8)


def stage_game(payoff, gamma=0.0, horizon=1, features=None, bounds=None):
    """Single-state game whose only stage payoff is ``payoff``."""
    A = np.asarray(payoff, dtype=float)
    a1, a2 = A.shape
    P = np.ones((1, a1, a2, 1))
    game = TabularMarkovGame(P, A[None], gamma, horizon, np.ones(1))
    if features is None:
        return game, IncentiveScheme.none(game)
    g = np.asarray(features, dtype=float).reshape(-1, 1, a1, a2)
    return game, IncentiveScheme(g, np.reshape(bounds, (-1, 2)))


def replicated_rps(n_states=2, gamma=0.9, horizon=3):
    """RPS at every state with uniform (symmetric) transitions."""
    P = np.full((n_states, 3, 3, n_states), 1.0 / n_states)
    game = TabularMarkovGame(P, np.broadcast_to(RPS, (n_states, 3, 3)), gamma, horizon, np.full(n_states, 1.0 / n_states))
    return game, IncentiveScheme.none(game)


def deterministic_chain(reward=1.0, gamma=0.5, horizon=3):
    """Two states, one action each, ``0 -> 1 -> 1`` with constant reward."""
    P = np.zeros((2, 1, 1, 2))
    P[:, 0, 0, 1] = 1.0
    r = np.full((2, 1, 1), reward)
    game = TabularMarkovGame(P, r, gamma, horizon, np.array([1.0, 0.0]))
    return game, IncentiveScheme.none(game)
