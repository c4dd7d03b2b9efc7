"""Tabular two-player zero-sum Markov games with linear incentive perturbations.

Player 1 maximizes, player 2 minimizes.  Every reward tensor in this module is
stated from player 1's point of view; player 2 always receives the negation.
Transitions are stored as a CSR matrix with one row per ``(s, a1, a2)`` so that
grid-world builders with a few thousand states stay cheap.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import logsumexp

from .errors import BoundsError, DomainError, EnumerationCapError

PROB_ATOL = 1e-12


def _freeze(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TabularMarkovGame:
    """Finite zero-sum Markov game ``(S, A1, A2, P, r, gamma, T, rho0)``.

    ``transition`` may be a dense ``(S, A1, A2, S)`` array or any scipy sparse
    matrix of shape ``(S*A1*A2, S)``; it is stored as CSR either way.
    """

    transition: object
    base_reward: np.ndarray
    gamma: float
    horizon: int
    rho0: np.ndarray

    def __post_init__(self):
        r = _freeze(self.base_reward)
        if r.ndim != 3:
            raise DomainError("base_reward must have shape (S, A1, A2)")
        n, a1, a2 = r.shape
        P = self.transition
        if sp.issparse(P):
            P = sp.csr_matrix(P, dtype=float)
        else:
            P = np.asarray(P, dtype=float)
            if P.shape != (n, a1, a2, n):
                raise DomainError(f"transition shape {P.shape} != {(n, a1, a2, n)}")
            P = sp.csr_matrix(P.reshape(n * a1 * a2, n))
        if P.shape != (n * a1 * a2, n):
            raise DomainError(f"sparse transition shape {P.shape} != {(n * a1 * a2, n)}")
        P.eliminate_zeros()
        P.sort_indices()
        if P.nnz and P.data.min() < 0:
            raise DomainError("transition probabilities must be non-negative")
        row_sums = np.asarray(P.sum(axis=1)).ravel()
        if np.max(np.abs(row_sums - 1.0)) > PROB_ATOL:
            raise DomainError("transition rows must sum to 1")
        if np.max(np.abs(r)) > 1.0 + PROB_ATOL:
            raise DomainError("|base_reward| must be at most 1")
        rho0 = _freeze(self.rho0)
        if rho0.shape != (n,) or rho0.min() < 0 or abs(rho0.sum() - 1.0) > PROB_ATOL:
            raise DomainError("rho0 must be a distribution over states")
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError("gamma must lie in [0, 1)")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise DomainError("horizon must be a positive integer")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "base_reward", r)
        object.__setattr__(self, "rho0", rho0)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def n_states(self) -> int:
        return self.base_reward.shape[0]

    @property
    def n_actions_1(self) -> int:
        return self.base_reward.shape[1]

    @property
    def n_actions_2(self) -> int:
        return self.base_reward.shape[2]

    def dense_transition(self) -> np.ndarray:
        n, a1, a2 = self.base_reward.shape
        return self.transition.toarray().reshape(n, a1, a2, n)

    def expected_next(self, values: np.ndarray) -> np.ndarray:
        """``E_{s'~P(.|s,a1,a2)}[values(s')]`` with shape ``(S, A1, A2, ...)``."""
        out = self.transition @ values
        return np.asarray(out).reshape(self.base_reward.shape + np.shape(values)[1:])

    def policy_transition(self, p1: np.ndarray, p2: np.ndarray) -> sp.csr_matrix:
        """State-to-state kernel ``P_pi`` induced by the per-state policies."""
        n = self.n_states
        joint = (p1[:, :, None] * p2[:, None, :]).reshape(-1)
        group = sp.csr_matrix(
            (joint, (np.repeat(np.arange(n), joint.size // n), np.arange(joint.size))),
            shape=(n, joint.size),
        )
        return (group @ self.transition).tocsr()


@dataclass(frozen=True, eq=False)
class IncentiveScheme:
    """Linear reward perturbation ``r(s, a; theta) = base(s, a) + theta . g(s, a)``.

    ``features`` has shape ``(m, S, A1, A2)``.  The perturbation is applied to
    player 1 and subtracted from player 2, so the game stays zero-sum.
    """

    features: np.ndarray
    theta_bounds: np.ndarray
    reward_bound: float | None = None

    def __post_init__(self):
        g = _freeze(self.features)
        if g.ndim != 4:
            raise DomainError("features must have shape (m, S, A1, A2)")
        b = _freeze(np.reshape(self.theta_bounds, (-1, 2)))
        if b.shape[0] != g.shape[0]:
            raise DomainError("need one [lo, hi] interval per incentive parameter")
        if np.any(b[:, 0] > b[:, 1]):
            raise DomainError("theta bounds must satisfy lo <= hi")
        object.__setattr__(self, "features", g)
        object.__setattr__(self, "theta_bounds", b)

    @classmethod
    def none(cls, game: TabularMarkovGame) -> "IncentiveScheme":
        return cls(np.zeros((0,) + game.base_reward.shape), np.zeros((0, 2)))

    @property
    def n_params(self) -> int:
        return self.features.shape[0]

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape != (self.n_params,):
            raise BoundsError(f"theta has {theta.size} entries, scheme has {self.n_params}")
        lo, hi = self.theta_bounds[:, 0], self.theta_bounds[:, 1]
        if np.any(theta < lo - 1e-12) or np.any(theta > hi + 1e-12):
            raise BoundsError(f"theta={theta} outside bounds {self.theta_bounds.tolist()}")
        return theta

    def project(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float), self.theta_bounds[:, 0], self.theta_bounds[:, 1])

    def max_abs_reward(self, game: TabularMarkovGame) -> float:
        """Worst-case ``|r(s, a; theta)|`` over the box."""
        tmax = np.max(np.abs(self.theta_bounds), axis=1) if self.n_params else np.zeros(0)
        pert = np.tensordot(tmax, np.abs(self.features), axes=1) if self.n_params else 0.0
        return float(np.max(np.abs(game.base_reward) + pert))

    def validate_against(self, game: TabularMarkovGame):
        if self.features.shape[1:] != game.base_reward.shape:
            raise DomainError("feature tensor does not match the game's (S, A1, A2)")
        if self.reward_bound is not None and self.max_abs_reward(game) > self.reward_bound + 1e-12:
            raise DomainError("perturbed reward can exceed the declared bound on the theta box")


def reward_tensor(game: TabularMarkovGame, scheme: IncentiveScheme, theta) -> np.ndarray:
    """Player-1 perturbed reward ``(S, A1, A2)``."""
    theta = scheme.check_theta(theta)
    if scheme.n_params == 0:
        return np.array(game.base_reward)
    return game.base_reward + np.tensordot(theta, scheme.features, axes=1)


def perturbed_reward(game, scheme, theta, s, a1, a2, player=1) -> float:
    theta = scheme.check_theta(theta)
    n, n1, n2 = game.base_reward.shape
    if not (0 <= s < n and 0 <= a1 < n1 and 0 <= a2 < n2):
        raise IndexError(f"(s, a1, a2)=({s}, {a1}, {a2}) out of range")
    r = game.base_reward[s, a1, a2] + float(theta @ scheme.features[:, s, a1, a2])
    return float(r) if player == 1 else -float(r)


def _log_softmax_pinned(z):
    full = np.concatenate([z, np.zeros(z.shape[:-1] + (1,))], axis=-1)
    return full - logsumexp(full, axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class SoftmaxPolicyPair:
    """Per-state softmax policies with the last action's logit pinned to zero.

    The flat parameter vector is ``phi = (logits_1.ravel(), logits_2.ravel())``,
    row-major over ``(state, action)``.
    """

    logits_1: np.ndarray
    logits_2: np.ndarray

    def __post_init__(self):
        z1, z2 = _freeze(self.logits_1), _freeze(self.logits_2)
        if z1.ndim != 2 or z2.ndim != 2 or z1.shape[0] != z2.shape[0]:
            raise DomainError("logit tables must have shapes (S, A1-1) and (S, A2-1)")
        object.__setattr__(self, "logits_1", z1)
        object.__setattr__(self, "logits_2", z2)

    @classmethod
    def uniform(cls, game: TabularMarkovGame) -> "SoftmaxPolicyPair":
        n = game.n_states
        return cls(np.zeros((n, game.n_actions_1 - 1)), np.zeros((n, game.n_actions_2 - 1)))

    @classmethod
    def random(cls, game: TabularMarkovGame, rng: np.random.Generator, scale=1.0):
        n = game.n_states
        return cls(
            scale * rng.standard_normal((n, game.n_actions_1 - 1)),
            scale * rng.standard_normal((n, game.n_actions_2 - 1)),
        )

    @classmethod
    def from_probs(cls, p1, p2) -> "SoftmaxPolicyPair":
        """Recover pinned logits ``log p(a) - log p(a_last)`` (exact for p > 0)."""
        p1, p2 = np.asarray(p1, dtype=float), np.asarray(p2, dtype=float)
        if p1.min() <= 0 or p2.min() <= 0:
            raise DomainError("softmax policies need strictly positive probabilities")
        l1, l2 = np.log(p1), np.log(p2)
        return cls(l1[:, :-1] - l1[:, -1:], l2[:, :-1] - l2[:, -1:])

    @classmethod
    def from_vector(cls, vec, n_states, n_actions_1, n_actions_2) -> "SoftmaxPolicyPair":
        vec = np.asarray(vec, dtype=float)
        d1 = n_states * (n_actions_1 - 1)
        return cls(
            vec[:d1].reshape(n_states, n_actions_1 - 1),
            vec[d1:].reshape(n_states, n_actions_2 - 1),
        )

    def with_vector(self, vec) -> "SoftmaxPolicyPair":
        n = self.n_states
        return SoftmaxPolicyPair.from_vector(vec, n, self.logits_1.shape[1] + 1, self.logits_2.shape[1] + 1)

    @property
    def n_states(self) -> int:
        return self.logits_1.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return self.logits_1.size, self.logits_2.size

    @property
    def n_params(self) -> int:
        return self.logits_1.size + self.logits_2.size

    def vector(self) -> np.ndarray:
        return np.concatenate([self.logits_1.ravel(), self.logits_2.ravel()])

    @cached_property
    def log_probs_1(self) -> np.ndarray:
        return _log_softmax_pinned(self.logits_1)

    @cached_property
    def log_probs_2(self) -> np.ndarray:
        return _log_softmax_pinned(self.logits_2)

    @cached_property
    def probs_1(self) -> np.ndarray:
        return np.exp(self.log_probs_1)

    @cached_property
    def probs_2(self) -> np.ndarray:
        return np.exp(self.log_probs_2)

    def probs(self, player: int) -> np.ndarray:
        return self.probs_1 if player == 1 else self.probs_2

    def log_probs(self, player: int) -> np.ndarray:
        return self.log_probs_1 if player == 1 else self.log_probs_2


def entropy(p: np.ndarray) -> np.ndarray:
    """Shannon entropy along the last axis."""
    return -np.sum(p * np.log(p), axis=-1)


def regularized_reward(game, scheme, theta, policy, lam, s, a1, a2, player=1) -> float:
    """Entropy-regularized reward ``r^i - lam log pi^i(a^i|s) + lam log pi^-i(a^-i|s)``."""
    if lam < 0:
        raise DomainError("lambda must be non-negative")
    r = perturbed_reward(game, scheme, theta, s, a1, a2, player)
    l1, l2 = policy.log_probs_1[s, a1], policy.log_probs_2[s, a2]
    own, opp = (l1, l2) if player == 1 else (l2, l1)
    return r - lam * own + lam * opp


def expected_regularized_reward(r, p1, p2, lam) -> np.ndarray:
    """Per-state ``E_pi[r] + lam H(pi1) - lam H(pi2)`` for player 1."""
    c = np.einsum("sab,sa,sb->s", r, p1, p2)
    if lam:
        c = c + lam * (entropy(p1) - entropy(p2))
    return c


def _is_infinite(horizon) -> bool:
    return horizon is not None and math.isinf(horizon)


def _value_from_probs(game, r, p1, p2, lam, horizon) -> np.ndarray:
    c = expected_regularized_reward(r, p1, p2, lam)
    Ppi = game.policy_transition(p1, p2)
    if _is_infinite(horizon):
        A = sp.identity(game.n_states, format="csc") - game.gamma * Ppi.tocsc()
        return np.atleast_1d(spla.spsolve(A, c))
    v = np.zeros(game.n_states)
    for _ in range(int(horizon)):
        v = c + game.gamma * (Ppi @ v)
    return v


def evaluate_value(game, scheme, theta, policy, lam=0.0, player=1, horizon=None) -> np.ndarray:
    """Regularized state values by exact backward induction.

    ``horizon=None`` uses the game's ``T``; ``math.inf`` solves the
    infinite-horizon Bellman system instead.
    """
    if lam < 0:
        raise DomainError("lambda must be non-negative")
    horizon = game.horizon if horizon is None else horizon
    r = reward_tensor(game, scheme, theta)
    v = _value_from_probs(game, r, policy.probs_1, policy.probs_2, lam, horizon)
    return v if player == 1 else -v


def _oriented(game, r, player):
    """Reward and next-value accessor from the given player's perspective."""
    if player == 1:
        return r, lambda v: game.expected_next(v)
    return -np.transpose(r, (0, 2, 1)), lambda v: np.transpose(game.expected_next(v), (0, 2, 1))


def _greedy(q):
    best = q.max(axis=1, keepdims=True)
    idx = np.argmax(q >= best - 1e-12, axis=1)
    pi = np.zeros_like(q)
    pi[np.arange(q.shape[0]), idx] = 1.0
    return best[:, 0], pi


def _soft_improve(q, lam):
    if lam == 0:
        return _greedy(q)
    # shift before dividing so that tiny lam cannot overflow
    top = q.max(axis=1, keepdims=True)
    z = (q - top) / lam
    v = top[:, 0] + lam * logsumexp(z, axis=1)
    return v, np.exp(z - logsumexp(z, axis=1, keepdims=True))


def _best_response_from_probs(game, r, p_opp, lam, player, horizon, max_iter=500):
    r_self, next_val = _oriented(game, r, player)
    # opponent's log-prob enters player i's regularized reward with a + sign
    opp_term = -lam * entropy(p_opp) if lam else 0.0
    r_tilde = np.einsum("sab,sb->sa", r_self, p_opp) + np.reshape(opp_term, (-1, 1))

    def q_of(v):
        return r_tilde + game.gamma * np.einsum("sab,sb->sa", next_val(v), p_opp)

    if not _is_infinite(horizon):
        v = np.zeros(game.n_states)
        policies = []
        for _ in range(int(horizon)):
            v, pi = _soft_improve(q_of(v), lam)
            policies.append(pi)
        return v, np.array(policies[::-1])

    # soft policy iteration: exact evaluation then improvement
    v = np.zeros(game.n_states)
    pi = None
    for _ in range(max_iter):
        _, new_pi = _soft_improve(q_of(v), lam)
        if pi is not None and lam == 0 and np.array_equal(new_pi, pi):
            break
        pi = new_pi
        p1, p2 = (pi, p_opp) if player == 1 else (p_opp, pi)
        c = np.sum(pi * r_tilde, axis=1) + (lam * entropy(pi) if lam else 0.0)
        Ppi = game.policy_transition(p1, p2)
        A = sp.identity(game.n_states, format="csc") - game.gamma * Ppi.tocsc()
        v_new = np.atleast_1d(spla.spsolve(A, c))
        done = np.max(np.abs(v_new - v)) <= 1e-14 * max(1.0, np.max(np.abs(v_new)))
        v = v_new
        if done:
            break
    return v, pi


def best_response_value(game, scheme, theta, opponent_policy, lam=0.0, player=1, horizon=None):
    """Value of the best response to a fixed opponent, plus the responding policy.

    ``opponent_policy`` is a ``(S, A_opp)`` probability table (or a
    :class:`SoftmaxPolicyPair`, whose opponent half is used).  Values are in
    the responding player's own reward units.  For finite horizons the
    returned policy has shape ``(T, S, A)`` (time-indexed); for infinite ones
    it is stationary ``(S, A)``.  At ``lam == 0`` ties go to the lowest index.
    """
    if isinstance(opponent_policy, SoftmaxPolicyPair):
        opponent_policy = opponent_policy.probs(2 if player == 1 else 1)
    horizon = game.horizon if horizon is None else horizon
    r = reward_tensor(game, scheme, theta)
    return _best_response_from_probs(game, r, np.asarray(opponent_policy, dtype=float), lam, player, horizon)


def exploitability_from_probs(game, r, p1, p2, lam, horizon) -> float:
    v1, _ = _best_response_from_probs(game, r, p2, lam, 1, horizon)
    v2, _ = _best_response_from_probs(game, r, p1, lam, 2, horizon)
    return float(game.rho0 @ (v1 + v2))


def exploitability(game, scheme, theta, policy, lam=0.0, horizon=None) -> float:
    """``E_rho0[BR_1(pi2)] - E_rho0[V^(1) when player 2 best-responds to pi1]``."""
    horizon = game.horizon if horizon is None else horizon
    r = reward_tensor(game, scheme, theta)
    return exploitability_from_probs(game, r, policy.probs_1, policy.probs_2, lam, horizon)


def occupancy_measure(game, policy, horizon=None) -> np.ndarray:
    """Normalized discounted state occupancy from ``rho0`` under ``policy``."""
    horizon = game.horizon if horizon is None else horizon
    Ppi_T = game.policy_transition(policy.probs_1, policy.probs_2).T.tocsr()
    if _is_infinite(horizon):
        A = sp.identity(game.n_states, format="csc") - game.gamma * Ppi_T.tocsc()
        nu = np.atleast_1d(spla.spsolve(A, game.rho0))
    else:
        d = np.array(game.rho0)
        nu = np.zeros(game.n_states)
        disc = 1.0
        for _ in range(int(horizon)):
            nu += disc * d
            d = Ppi_T @ d
            disc *= game.gamma
    nu = np.maximum(nu, 0.0)
    return nu / nu.sum()


@dataclass(frozen=True)
class Trajectory:
    """One sampled path ``s_0, (a1_0, a2_0), ..., s_T`` with player-1 rewards."""

    states: np.ndarray
    actions_1: np.ndarray
    actions_2: np.ndarray
    rewards: np.ndarray
    gamma: float

    def __len__(self):
        return len(self.actions_1)

    def total_discounted_reward(self, player=1) -> float:
        disc = self.gamma ** np.arange(len(self.rewards))
        total = float(disc @ self.rewards)
        return total if player == 1 else -total


@dataclass(frozen=True)
class TrajectoryBatch:
    """Many equal-length paths with per-path weights.

    For exact enumeration the weights are path probabilities; for Monte-Carlo
    batches they are ``1/n``.
    """

    states: np.ndarray
    actions_1: np.ndarray
    actions_2: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.weights)

    @property
    def horizon(self) -> int:
        return self.actions_1.shape[1]

    def rewards(self, r: np.ndarray) -> np.ndarray:
        return r[self.states[:, :-1], self.actions_1, self.actions_2]


def _start_distribution(game, start):
    if start is None:
        return np.asarray(game.rho0)
    if np.ndim(start) == 0:
        s = int(start)
        if not 0 <= s < game.n_states:
            raise IndexError(f"start state {s} out of range")
        mu = np.zeros(game.n_states)
        mu[s] = 1.0
        return mu
    return np.asarray(start, dtype=float)


def _sample_categorical(probs, u):
    cum = np.cumsum(probs, axis=1)
    idx = np.sum(u[:, None] > cum, axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


class _NextStateSampler:
    """Vectorized inverse-CDF draws from the CSR transition rows."""

    def __init__(self, game):
        P = game.transition
        self.P = P
        counts = np.diff(P.indptr)
        row_of_entry = np.repeat(np.arange(P.shape[0]), counts)
        cum = np.cumsum(P.data)
        row_start_cum = np.concatenate([[0.0], cum])[P.indptr[:-1]]
        self.keys = row_of_entry + (cum - np.repeat(row_start_cum, counts))

    def __call__(self, rows, u):
        P = self.P
        pos = np.searchsorted(self.keys, rows + u, side="right")
        pos = np.clip(pos, P.indptr[rows], P.indptr[rows + 1] - 1)
        return P.indices[pos]


def sample_trajectories(game, policy, n, rng, horizon=None, start=None) -> TrajectoryBatch:
    """Draw ``n`` independent paths; deterministic given the generator state."""
    horizon = game.horizon if horizon is None else int(horizon)
    mu = _start_distribution(game, start)
    n1, n2 = game.n_actions_1, game.n_actions_2
    sampler = _NextStateSampler(game)
    states = np.empty((n, horizon + 1), dtype=np.int64)
    a1 = np.empty((n, horizon), dtype=np.int64)
    a2 = np.empty((n, horizon), dtype=np.int64)
    states[:, 0] = _sample_categorical(np.broadcast_to(mu, (n, mu.size)), rng.random(n))
    for t in range(horizon):
        s = states[:, t]
        a1[:, t] = _sample_categorical(policy.probs_1[s], rng.random(n))
        a2[:, t] = _sample_categorical(policy.probs_2[s], rng.random(n))
        rows = (s * n1 + a1[:, t]) * n2 + a2[:, t]
        states[:, t + 1] = sampler(rows, rng.random(n))
    return TrajectoryBatch(states, a1, a2, np.full(n, 1.0 / n))


def sample_trajectory(game, scheme, theta, policy, rng, horizon=None, start=None) -> Trajectory:
    batch = sample_trajectories(game, policy, 1, rng, horizon=horizon, start=start)
    r = reward_tensor(game, scheme, theta)
    return Trajectory(
        batch.states[0], batch.actions_1[0], batch.actions_2[0], batch.rewards(r)[0], game.gamma
    )


def enumerate_trajectories(game, policy, start=None, horizon=None, cap=10**6) -> TrajectoryBatch:
    """Every positive-probability path of length ``T`` with its exact probability."""
    horizon = game.horizon if horizon is None else int(horizon)
    mu = _start_distribution(game, start)
    n1, n2 = game.n_actions_1, game.n_actions_2
    P = game.transition
    s0 = np.flatnonzero(mu > 0)
    states = s0[:, None]
    a1 = np.zeros((len(s0), 0), dtype=np.int64)
    a2 = np.zeros((len(s0), 0), dtype=np.int64)
    w = mu[s0]
    grid1, grid2 = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    grid1, grid2 = grid1.ravel(), grid2.ravel()
    for _ in range(horizon):
        N, J = len(w), n1 * n2
        s = states[:, -1]
        act1 = np.tile(grid1, N)
        act2 = np.tile(grid2, N)
        parent = np.repeat(np.arange(N), J)
        sp_ = s[parent]
        wj = w[parent] * policy.probs_1[sp_, act1] * policy.probs_2[sp_, act2]
        rows = (sp_ * n1 + act1) * n2 + act2
        counts = P.indptr[rows + 1] - P.indptr[rows]
        total = int(counts.sum())
        if total > cap:
            raise EnumerationCapError(f"{total} trajectories exceed the cap of {cap}")
        rep = np.repeat(np.arange(len(rows)), counts)
        offset = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        pos = P.indptr[rows][rep] + offset
        nxt = P.indices[pos]
        pr = P.data[pos]
        p = parent[rep]
        states = np.column_stack([states[p], nxt])
        a1 = np.column_stack([a1[p], act1[rep]])
        a2 = np.column_stack([a2[p], act2[rep]])
        w = wj[rep] * pr
    return TrajectoryBatch(states, a1, a2, w)


def dump_game(game: TabularMarkovGame, scheme: IncentiveScheme | None = None) -> dict:
    """JSON-ready document for ``game`` (and its incentive scheme)."""
    doc = {
        "states": game.n_states,
        "actions": [game.n_actions_1, game.n_actions_2],
        "gamma": game.gamma,
        "horizon": game.horizon,
        "rho0": game.rho0.tolist(),
        "transition": game.dense_transition().tolist(),
        "base_reward": game.base_reward.tolist(),
        "features": [],
        "theta_bounds": [],
    }
    if scheme is not None:
        doc["features"] = scheme.features.tolist()
        doc["theta_bounds"] = scheme.theta_bounds.tolist()
        if scheme.reward_bound is not None:
            doc["reward_bound"] = scheme.reward_bound
    return doc


def load_game(source) -> tuple[TabularMarkovGame, IncentiveScheme]:
    """Build a game and scheme from a JSON path, string or already-parsed dict."""
    if isinstance(source, dict):
        doc = source
    elif isinstance(source, (str, Path)) and Path(source).exists():
        doc = json.loads(Path(source).read_text())
    else:
        doc = json.loads(source)
    n = int(doc["states"])
    n1, n2 = (int(a) for a in doc["actions"])
    game = TabularMarkovGame(
        transition=np.asarray(doc["transition"], dtype=float).reshape(n, n1, n2, n),
        base_reward=np.asarray(doc["base_reward"], dtype=float).reshape(n, n1, n2),
        gamma=float(doc["gamma"]),
        horizon=int(doc["horizon"]),
        rho0=np.asarray(doc["rho0"], dtype=float),
    )
    feats = np.asarray(doc.get("features", []), dtype=float).reshape(-1, n, n1, n2)
    bounds = np.asarray(doc.get("theta_bounds", []), dtype=float).reshape(-1, 2)
    scheme = IncentiveScheme(feats, bounds, doc.get("reward_bound"))
    scheme.validate_against(game)
    return game, scheme
