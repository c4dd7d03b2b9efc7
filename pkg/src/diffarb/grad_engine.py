"""Value gradients and Hessians of the regularized game with respect to theta and phi.

Three routes compute the same quantities:

* ``value_grads_exact`` enumerates every trajectory and evaluates the
  score-function expectations exactly.  It is the oracle.
* ``value_grads_mc`` evaluates the same integrands on sampled trajectories and
  reports standard errors.
* ``value_grads_dp`` differentiates the backward-induction recursion directly.
  It is exact as well, but scales to games whose trajectory count would
  overflow enumeration.

Orientation: for player ``i`` the bundle stores ``hess_theta_phi`` as
``(d_i, m)`` and ``hess_phi_phi`` as ``(d_i, d)``, i.e. rows index player
``i``'s own logits.  Stacking both players' rows gives the Jacobians of the
stationarity map directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .game import enumerate_trajectories, reward_tensor, sample_trajectories

DEFAULT_CAP = 10**6


def policy_score(policy, player, s, a) -> np.ndarray:
    """``grad_{phi^i} log pi^i(a|s)`` as a ``d_i`` vector."""
    p = policy.probs(player)
    n, A = p.shape
    K = A - 1
    out = np.zeros(n * K)
    local = -p[s, :K].copy()
    if a < K:
        local[a] += 1.0
    out[s * K : (s + 1) * K] = local
    return out


def _local_hessian(p):
    """``-(diag p - p p')`` on the free coordinates, shape ``(S, K, K)``."""
    q = p[:, :-1]
    return np.einsum("sk,sl->skl", q, q) - np.einsum("sk,kl->skl", q, np.eye(q.shape[1]))


def policy_score_hessian(policy, player, s, a=None) -> np.ndarray:
    """``grad^2_{phi^i} log pi^i(a|s)``; the same for every action ``a``."""
    p = policy.probs(player)
    n, A = p.shape
    K = A - 1
    out = np.zeros((n * K, n * K))
    out[s * K : (s + 1) * K, s * K : (s + 1) * K] = _local_hessian(p[s : s + 1])[0]
    return out


@dataclass
class PlayerGrads:
    """Derivatives of ``V^(i)`` at one start distribution.

    ``grad_phi`` is the full ``d`` vector; ``grad_phi_own`` is player ``i``'s
    slice of it.
    """

    value: float
    grad_theta: np.ndarray
    grad_phi: np.ndarray
    grad_phi_own: np.ndarray
    hess_theta_phi: np.ndarray
    hess_phi_phi: np.ndarray
    stderr: dict | None = None

    def to_dict(self):
        out = {
            "value": self.value,
            "grad_theta": self.grad_theta.tolist(),
            "grad_phi": self.grad_phi.tolist(),
            "grad_phi_own": self.grad_phi_own.tolist(),
            "hess_theta_phi": self.hess_theta_phi.tolist(),
            "hess_phi_phi": self.hess_phi_phi.tolist(),
        }
        if self.stderr is not None:
            out["stderr"] = {k: np.asarray(v).tolist() for k, v in self.stderr.items()}
        return out


@dataclass
class ValueGradBundle:
    player1: PlayerGrads
    player2: PlayerGrads
    lam: float
    method: str
    n_trajectories: int = 0

    def player(self, i) -> PlayerGrads:
        return self.player1 if i == 1 else self.player2

    def to_dict(self):
        return {
            "lam": self.lam,
            "method": self.method,
            "n_trajectories": self.n_trajectories,
            "player1": self.player1.to_dict(),
            "player2": self.player2.to_dict(),
        }


def _player_slices(policy):
    d1, d2 = policy.dims
    return {1: slice(0, d1), 2: slice(d1, d1 + d2)}


# ---------------------------------------------------------------------------
# trajectory integrands


@dataclass
class _Integrands:
    """Per-trajectory statistics shared by the exact and Monte-Carlo routes."""

    weights: np.ndarray
    R: np.ndarray  # discounted player-1 return
    R_theta: np.ndarray  # (N, m)
    G: np.ndarray  # (N, d) undiscounted score sums, both players
    G_disc: np.ndarray  # (N, d) discounted score sums
    L: np.ndarray  # (N,) discounted log pi1 - log pi2
    C: np.ndarray  # (N, S) undiscounted visit counts
    C_disc: np.ndarray  # (N, S) discounted visit counts
    H: np.ndarray = field(repr=False)  # (S, d, d) per-state log-prob Hessian


def _score_sums(states, actions, p, disc):
    N, T = actions.shape
    n, A = p.shape
    K = A - 1
    out = np.zeros((N, n * K))
    rows = np.repeat(np.arange(N), T)
    s = states.ravel()
    a = actions.ravel()
    w = np.tile(disc, N)
    for k in range(K):
        val = ((a == k).astype(float) - p[s, k]) * w
        np.add.at(out, (rows, s * K + k), val)
    return out


def _state_hessians(policy):
    p1, p2 = policy.probs_1, policy.probs_2
    n = p1.shape[0]
    K1, K2 = p1.shape[1] - 1, p2.shape[1] - 1
    d1, d2 = n * K1, n * K2
    H = np.zeros((n, d1 + d2, d1 + d2))
    h1, h2 = _local_hessian(p1), _local_hessian(p2)
    for s in range(n):
        H[s, s * K1 : (s + 1) * K1, s * K1 : (s + 1) * K1] = h1[s]
        o = d1 + s * K2
        H[s, o : o + K2, o : o + K2] = h2[s]
    return H


def _integrands(game, scheme, theta, policy, batch) -> _Integrands:
    r = reward_tensor(game, scheme, theta)
    T = batch.horizon
    disc = game.gamma ** np.arange(T)
    st = batch.states[:, :-1]
    a1, a2 = batch.actions_1, batch.actions_2
    R = batch.rewards(r) @ disc
    if scheme.n_params:
        feats = scheme.features[:, st, a1, a2]  # (m, N, T)
        R_theta = np.einsum("mnt,t->nm", feats, disc)
    else:
        R_theta = np.zeros((len(batch), 0))
    ones = np.ones(T)
    G = np.hstack([_score_sums(st, a1, policy.probs_1, ones), _score_sums(st, a2, policy.probs_2, ones)])
    G_disc = np.hstack([_score_sums(st, a1, policy.probs_1, disc), _score_sums(st, a2, policy.probs_2, disc)])
    L = (policy.log_probs_1[st, a1] - policy.log_probs_2[st, a2]) @ disc
    n = game.n_states
    C = np.zeros((len(batch), n))
    C_disc = np.zeros((len(batch), n))
    rows = np.repeat(np.arange(len(batch)), T)
    np.add.at(C, (rows, st.ravel()), 1.0)
    np.add.at(C_disc, (rows, st.ravel()), np.tile(disc, len(batch)))
    return _Integrands(batch.weights, R, R_theta, G, G_disc, L, C, C_disc, _state_hessians(policy))


def _sign_vector(d1, d2):
    return np.concatenate([np.ones(d1), -np.ones(d2)])


def regularization_terms(ig: _Integrands, policy, player, weights=None):
    """The ``U^i`` pieces of ``V^(i) = V^i - lam U^i``, each as a weighted mean.

    Returns a dict with ``grad`` (the ``d`` gradient of ``U^i``) and the five
    Hessian summands ``t1`` .. ``t5`` restricted to player ``i``'s rows.
    """
    w = ig.weights if weights is None else weights
    sl = _player_slices(policy)[player]
    d1, d2 = policy.dims
    sign = 1.0 if player == 1 else -1.0
    L = sign * ig.L
    dL = sign * ig.G_disc * _sign_vector(d1, d2)  # grad of L^i, (N, d)
    Gi = ig.G[:, sl]
    Gdi = ig.G_disc[:, sl]
    wL = w * L
    grad = (wL @ ig.G) + (w @ dL)
    return {
        "grad": grad,
        "t1": (Gi * w[:, None]).T @ dL,
        "t2": (Gi * wL[:, None]).T @ ig.G,
        "t3": np.tensordot(wL @ ig.C, ig.H, axes=1)[sl],
        "t4": (Gdi * w[:, None]).T @ ig.G,
        "t5": np.tensordot(w @ ig.C_disc, ig.H, axes=1)[sl],
    }


def _player_grads(ig, policy, lam, player, term_weights=(1.0,) * 5, weights=None):
    w = ig.weights if weights is None else weights
    sl = _player_slices(policy)[player]
    sign = 1.0 if player == 1 else -1.0
    R = sign * ig.R
    Rth = sign * ig.R_theta
    Gi = ig.G[:, sl]
    wR = w * R
    value = float(w @ R)
    grad_theta = w @ Rth
    grad_phi = wR @ ig.G
    h_tp = (Gi * w[:, None]).T @ Rth
    h_pp = (Gi * wR[:, None]).T @ ig.G + np.tensordot(wR @ ig.C, ig.H, axes=1)[sl]
    if lam:
        reg = regularization_terms(ig, policy, player, w)
        value -= lam * float(w @ (sign * ig.L))
        grad_phi = grad_phi - lam * reg["grad"]
        for c, key in zip(term_weights, ("t1", "t2", "t3", "t4", "t5")):
            h_pp = h_pp - lam * c * reg[key]
    return value, grad_theta, grad_phi, grad_phi[sl], h_tp, h_pp


def value_grads_exact(
    game, scheme, theta, policy, lam, start=None, cap=DEFAULT_CAP, horizon=None, term_weights=(1.0,) * 5
) -> ValueGradBundle:
    """All value derivatives by exhaustive trajectory enumeration.

    ``start`` is a state index or a distribution (default ``rho0``).
    ``term_weights`` scales the five regularization Hessian summands and exists
    only so that tests can corrupt one of them on purpose.
    """
    batch = enumerate_trajectories(game, policy, start=start, horizon=horizon, cap=cap)
    ig = _integrands(game, scheme, theta, policy, batch)
    players = [PlayerGrads(*_player_grads(ig, policy, lam, i, term_weights)) for i in (1, 2)]
    return ValueGradBundle(players[0], players[1], lam, "exact", len(batch))


def value_grads_mc(
    game, scheme, theta, policy, lam, n_traj, rng, start=None, horizon=None, baseline=False
) -> ValueGradBundle:
    """Monte-Carlo estimate of the same expectations, with per-entry standard errors.

    ``baseline=True`` subtracts the batch-mean return (and log-ratio) from the
    score-weighted terms.  That is a variance-reduction control.  It is off by
    default so the estimator matches the raw score-function formulas.
    """
    if n_traj < 2:
        raise ValueError("n_traj must be at least 2")
    batch = sample_trajectories(game, policy, n_traj, rng, horizon=horizon, start=start)
    ig = _integrands(game, scheme, theta, policy, batch)
    raw_R, raw_L = ig.R, ig.L
    if baseline:
        ig.R, ig.L = raw_R - raw_R.mean(), raw_L - raw_L.mean()
    players = []
    for i in (1, 2):
        mean = _player_grads(ig, policy, lam, i)
        stderr = _stderr(ig, policy, lam, i, mean)
        sign = 1.0 if i == 1 else -1.0
        value = sign * float(np.mean(raw_R - lam * raw_L))
        stderr["value"] = float(np.std(raw_R - lam * raw_L, ddof=1) / np.sqrt(n_traj))
        players.append(PlayerGrads(value, *mean[1:], stderr=stderr))
    return ValueGradBundle(players[0], players[1], lam, "mc", n_traj)


def _player_samples(ig, policy, lam, player, idx):
    """Per-trajectory integrands for the trajectories in ``idx``."""
    sl = _player_slices(policy)[player]
    d1, d2 = policy.dims
    sign = 1.0 if player == 1 else -1.0
    R, L = sign * ig.R[idx], sign * ig.L[idx]
    Rth, G, Gd = sign * ig.R_theta[idx], ig.G[idx], ig.G_disc[idx]
    Gi, Gdi = G[:, sl], Gd[:, sl]
    Hi = ig.H[:, sl]
    g_phi = R[:, None] * G
    h_tp = np.einsum("ni,nm->nim", Gi, Rth)
    h_pp = np.einsum("n,ni,nj->nij", R, Gi, G) + np.tensordot(R[:, None] * ig.C[idx], Hi, axes=1)
    if lam:
        dL = sign * Gd * _sign_vector(d1, d2)
        g_phi = g_phi - lam * (L[:, None] * G + dL)
        h_pp = h_pp - lam * (
            np.einsum("ni,nj->nij", Gi, dL)
            + np.einsum("n,ni,nj->nij", L, Gi, G)
            + np.tensordot(L[:, None] * ig.C[idx], Hi, axes=1)
            + np.einsum("ni,nj->nij", Gdi, G)
            + np.tensordot(ig.C_disc[idx], Hi, axes=1)
        )
    return Rth, g_phi, g_phi[:, sl], h_tp, h_pp


def _stderr(ig, policy, lam, player, mean, chunk=1024):
    """Per-entry standard errors of the sample means, accumulated in chunks."""
    N = len(ig.weights)
    keys = ("grad_theta", "grad_phi", "grad_phi_own", "hess_theta_phi", "hess_phi_phi")
    centers = [np.asarray(m, dtype=float) for m in mean[1:]]
    sq = [np.zeros_like(c) for c in centers]
    for lo in range(0, N, chunk):
        idx = np.arange(lo, min(N, lo + chunk))
        for j, x in enumerate(_player_samples(ig, policy, lam, player, idx)):
            sq[j] += np.sum((x - centers[j]) ** 2, axis=0)
    return {k: np.sqrt(s / (N - 1) / N) for k, s in zip(keys, sq)}


# ---------------------------------------------------------------------------
# exact dynamic programming


def _local_columns(n, K1, K2):
    d1 = n * K1
    cols = np.zeros((n, K1 + K2), dtype=np.int64)
    for s in range(n):
        cols[s, :K1] = s * K1 + np.arange(K1)
        cols[s, K1:] = d1 + s * K2 + np.arange(K2)
    return cols


def _joint_scores(p1, p2):
    """``SC[s, a1, a2, :]``: stacked local scores of both players, ``(S, A1, A2, K1+K2)``."""
    n, A1 = p1.shape
    A2 = p2.shape[1]
    sc1 = np.eye(A1)[None, :, : A1 - 1] - p1[:, None, : A1 - 1]
    sc2 = np.eye(A2)[None, :, : A2 - 1] - p2[:, None, : A2 - 1]
    return np.concatenate(
        [
            np.broadcast_to(sc1[:, :, None, :], (n, A1, A2, A1 - 1)),
            np.broadcast_to(sc2[:, None, :, :], (n, A1, A2, A2 - 1)),
        ],
        axis=-1,
    )


def value_grads_dp(game, scheme, theta, policy, lam, start=None, horizon=None) -> ValueGradBundle:
    """Exact value derivatives by differentiating backward induction.

    Uses ``V^(2) = -V^(1)``: only player 1's full gradient and Hessian are
    built, and player 2's rows are their negation.
    """
    T = game.horizon if horizon is None else int(horizon)
    n, A1, A2 = game.base_reward.shape
    K1, K2 = A1 - 1, A2 - 1
    d1, d2 = n * K1, n * K2
    d = d1 + d2
    m = scheme.n_params
    gam = game.gamma
    p1, p2 = policy.probs_1, policy.probs_2
    pj = p1[:, :, None] * p2[:, None, :]  # (S, A1, A2)
    r = reward_tensor(game, scheme, theta)
    c = r - lam * policy.log_probs_1[:, :, None] + lam * policy.log_probs_2[:, None, :]
    SC = _joint_scores(p1, p2)  # (S, A1, A2, K)
    K = K1 + K2
    cols = _local_columns(n, K1, K2)
    H1, H2 = _local_hessian(p1), _local_hessian(p2)
    Hloc = np.zeros((n, K, K))
    Hloc[:, :K1, :K1] = H1
    Hloc[:, K1:, K1:] = H2
    reg_loc = np.zeros((n, K, K))
    reg_loc[:, :K1, :K1] = lam * H1
    reg_loc[:, K1:, K1:] = -lam * H2
    Ppi = game.policy_transition(p1, p2)
    P = game.transition
    feats = scheme.features  # (m, S, A1, A2)

    # scatter helpers: local (S, K) blocks -> (S, d) sparse and (d,) dense
    row_idx = np.repeat(np.arange(n), K)
    col_idx = cols.ravel()

    def scatter_rows(local):  # (S, K) -> sparse (S, d)
        return sp.csr_matrix((local.ravel(), (row_idx, col_idx)), shape=(n, d))

    # backward pass: V_k, grad V_k (S, d), grad_theta V_k (S, m)
    V = [np.zeros(n)]
    dV = [np.zeros((n, d))]
    tV = [np.zeros((n, m))]
    Qs, ells = [None], [None]
    for k in range(1, T + 1):
        Q = c + gam * game.expected_next(V[-1])
        ell = np.einsum("sab,sab,sabk->sk", pj, Q, SC)
        Vk = np.einsum("sab,sab->s", pj, Q)
        dVk = scatter_rows(ell).toarray() + gam * (Ppi @ dV[-1])
        if m:
            gQ = np.moveaxis(feats, 0, -1) + gam * game.expected_next(tV[-1])  # (S,A1,A2,m)
            tVk = np.einsum("sab,sabm->sm", pj, gQ)
        else:
            tVk = np.zeros((n, 0))
        Qs.append(Q)
        ells.append(ell)
        V.append(Vk)
        dV.append(dVk)
        tV.append(tVk)

    mu = np.asarray(game.rho0 if start is None else _as_distribution(start, n), dtype=float)

    # forward pass: discounted state weights w_t and their gradients
    grad = np.zeros(d)
    hess = np.zeros((d, d))
    cross = np.zeros((d, m))
    gth = np.zeros(m)
    w = mu.copy()
    Dw = sp.csr_matrix((n, d))
    PT = P.T.tocsr()
    for t in range(T):
        k = T - t
        ell, Q = ells[k], Qs[k]
        L_sp = scatter_rows(ell)  # (S, d)
        grad += w @ L_sp
        # outer(ell, grad w)
        hess += (L_sp.T @ Dw).toarray() if Dw.nnz else 0.0
        # local second-order block
        Bloc = np.einsum("sab,sab,sabk,sabl->skl", pj, Q, SC, SC) + V[k][:, None, None] * Hloc + reg_loc
        Bloc *= w[:, None, None]
        ri = np.repeat(cols, K, axis=1).ravel()
        ci = np.tile(cols, (1, K)).ravel()
        hess += sp.csr_matrix((Bloc.ravel(), (ri, ci)), shape=(d, d)).toarray()
        # continuation term: sum_a w p SC (x) gamma P grad V_{k-1}
        if k > 1:
            Z = _score_weighted(w[:, None, None] * pj, SC, cols, d)  # (d, S*A1*A2)
            hess += gam * np.asarray(Z @ (P @ dV[k - 1]))
        if m:
            gQ = np.moveaxis(feats, 0, -1) + gam * game.expected_next(tV[k - 1])
            cross += _scatter_dense(np.einsum("s,sab,sabk,sabm->skm", w, pj, SC, gQ), cols, d)
        # propagate w and its gradient
        X = _score_weighted(w[:, None, None] * pj, SC, cols, d).T  # (S*A1*A2, d)
        if t < T - 1:
            Dw = (gam * (Ppi.T @ Dw + PT @ X)).tocsr()
        w = gam * (Ppi.T @ w)

    value = float(mu @ V[T])
    gth = mu @ tV[T]
    p1g = PlayerGrads(value, gth, grad, grad[:d1], cross[:d1], hess[:d1])
    p2g = PlayerGrads(-value, -gth, -grad, -grad[d1:], -cross[d1:], -hess[d1:])
    return ValueGradBundle(p1g, p2g, lam, "dp")


def value_grads_stationary(game, scheme, theta, policy, lam, start=None) -> ValueGradBundle:
    """Exact derivatives of the infinite-horizon (stationary) regularized value.

    With ``M = I - gamma P_pi`` and ``w = M^{-T} nu`` the Hessian of
    ``J = nu' V`` is ``w' (F_ab + gamma P_a V_b + gamma P_b V_a)`` where ``F``
    is the per-state one-step payoff at fixed continuation.  Each ``V_b`` is a
    column of ``M^{-1}`` scaled by a local gradient, so a single sparse LU
    factorization serves every block.  This is the stationarity condition of
    the equilibria the lower-level solvers return, whatever the game's ``T``.
    """
    n, A1, A2 = game.base_reward.shape
    K1, K2 = A1 - 1, A2 - 1
    d1, d2 = n * K1, n * K2
    d = d1 + d2
    m = scheme.n_params
    gam = game.gamma
    p1, p2 = policy.probs_1, policy.probs_2
    pj = p1[:, :, None] * p2[:, None, :]
    r = reward_tensor(game, scheme, theta)
    c = r - lam * policy.log_probs_1[:, :, None] + lam * policy.log_probs_2[:, None, :]
    SC = _joint_scores(p1, p2)
    K = K1 + K2
    cols = _local_columns(n, K1, K2)
    H1, H2 = _local_hessian(p1), _local_hessian(p2)

    M = (sp.identity(n, format="csc") - gam * game.policy_transition(p1, p2)).tocsc()
    lu = spla.splu(M)
    V = lu.solve(np.einsum("sab,sab->s", pj, c))
    mu = np.asarray(game.rho0 if start is None else _as_distribution(start, n), dtype=float)
    w = lu.solve(mu, trans="T")

    Q = c + gam * game.expected_next(V)
    ell = np.einsum("sab,sab,sabk->sk", pj, Q, SC)
    grad = np.zeros(d)
    np.add.at(grad, cols.ravel(), (w[:, None] * ell).ravel())

    Bloc = np.einsum("sab,sab,sabk,sabl->skl", pj, Q, SC, SC)
    Bloc[:, :K1, :K1] += (V + lam)[:, None, None] * H1
    Bloc[:, K1:, K1:] += (V - lam)[:, None, None] * H2
    Bloc *= w[:, None, None]
    hess = np.zeros((d, d))
    np.add.at(hess, (np.repeat(cols, K, axis=1).ravel(), np.tile(cols, (1, K)).ravel()), Bloc.ravel())

    if gam > 0:
        Z = _score_weighted(w[:, None, None] * pj, SC, cols, d)  # (d, S*A1*A2)
        Ut = gam * (Z @ game.transition)  # (d, S): row a is gamma w_s dP_s/dphi_a
        Y = lu.solve(np.asarray(Ut.todense()).T, trans="T").T  # Ut M^{-1}, (d, S)
        owner = np.empty(d, dtype=np.int64)
        owner[cols.ravel()] = np.repeat(np.arange(n), K)
        gflat = np.zeros(d)
        gflat[cols.ravel()] = ell.ravel()
        cross_pp = Y[:, owner] * gflat[None, :]
        hess += cross_pp + cross_pp.T

    if m:
        feats = np.moveaxis(scheme.features, 0, -1)  # (S, A1, A2, m)
        tV = lu.solve(np.einsum("sab,sabm->sm", pj, feats))
        gQ = feats + gam * game.expected_next(tV)
        cross = _scatter_dense(np.einsum("s,sab,sabk,sabm->skm", w, pj, SC, gQ), cols, d)
        gth = mu @ tV
    else:
        cross = np.zeros((d, 0))
        gth = np.zeros(0)

    value = float(mu @ V)
    p1g = PlayerGrads(value, gth, grad, grad[:d1], cross[:d1], hess[:d1])
    p2g = PlayerGrads(-value, -gth, -grad, -grad[d1:], -cross[d1:], -hess[d1:])
    return ValueGradBundle(p1g, p2g, lam, "stationary")


def _as_distribution(start, n):
    if np.ndim(start) == 0:
        mu = np.zeros(n)
        mu[int(start)] = 1.0
        return mu
    return np.asarray(start, dtype=float)


def _score_weighted(weight, SC, cols, d):
    """Sparse ``(d, S*A1*A2)`` with entry ``weight[s,a] * SC[s,a,k]`` at ``(cols[s,k], (s,a))``."""
    n, A1, A2, K = SC.shape
    vals = (weight[..., None] * SC).reshape(-1)
    rows = np.broadcast_to(cols[:, None, None, :], SC.shape).reshape(-1)
    colj = np.repeat(np.arange(n * A1 * A2), K)
    return sp.csr_matrix((vals, (rows, colj)), shape=(d, n * A1 * A2))


def _scatter_dense(local, cols, d):
    n, K, m = local.shape
    out = np.zeros((d, m))
    np.add.at(out, cols.ravel(), local.reshape(n * K, m))
    return out


# ---------------------------------------------------------------------------
# finite differences


def finite_difference(fn, x, step=1e-5, order=2, richardson=True, rtol=1e-4):
    """Central-difference derivative of ``fn`` at ``x``.

    ``fn`` may return a scalar or an array; the result has shape
    ``fn(x).shape + x.shape``.  With ``richardson=True`` the estimate at
    ``step`` is compared against one at ``10 * step``.  If the two disagree by
    more than ``rtol`` relative, the Richardson extrapolation of the pair is
    returned instead.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)

    def central(h):
        cols = []
        for j in range(x.size):
            e = np.zeros(x.size)
            e[j] = h
            e = e.reshape(x.shape)
            if order == 2:
                dj = (np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * h)
            elif order == 4:
                dj = (
                    -np.asarray(fn(x + 2 * e))
                    + 8 * np.asarray(fn(x + e))
                    - 8 * np.asarray(fn(x - e))
                    + np.asarray(fn(x - 2 * e))
                ) / (12 * h)
            else:
                raise ValueError("order must be 2 or 4")
            cols.append(np.asarray(dj, dtype=float))
        return np.stack(cols, axis=-1).reshape(np.shape(cols[0]) + x.shape)

    fine = central(step)
    if not richardson:
        return fine
    coarse = central(10 * step)
    scale = np.maximum(np.abs(fine), 1e-8)
    if np.all(np.abs(fine - coarse) <= rtol * scale):
        return fine
    p = order
    return (10**p * fine - coarse) / (10**p - 1)


def relative_error(analytic, reference, floor=1e-4):
    """Per-entry ``|a - b| / max(|b|, floor)``."""
    a, b = np.asarray(analytic, dtype=float), np.asarray(reference, dtype=float)
    return np.abs(a - b) / np.maximum(np.abs(b), floor)
