"""Lower-level Nash solvers for entropy-regularized zero-sum Markov games.

Both solvers work on the infinite-horizon discounted game.  The returned
certificate is the infinite-horizon exploitability; the horizon-``T``
exploitability is reported alongside, together with the truncation slack
``gamma**T / (1 - gamma)`` that separates the two.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError
from .game import SoftmaxPolicyPair, exploitability_from_probs, reward_tensor
from .matrix_solvers import _mw, duality_gap, stable_eta, regularized_payoff, solve_batch

METHODS = ("pem", "er-omwu")


@dataclass(frozen=True)
class SolveConfig:
    """Lower-level solver settings.

    Attributes:
        method: ``"pem"`` (double loop) or ``"er-omwu"`` (single loop).
        lam: entropy regularization weight, must be positive.
        eta: policy step size; ``None`` picks the method default.
        tol: exploitability required for a certified result.
        max_iter: outer iteration budget.
        inner_method: matrix solver used inside PEM (``"pu"`` or ``"omwu"``).
        inner_tol: per-state duality gap for PEM's inner solves; ``None`` means
            ``(1 - gamma) * tol / 10``.
        inner_max_iter: iteration budget of each inner solve.
        eta_factor: ER-OMWU multiplier on the conservative step constant
            ``(1-gamma)^3 / (32000 |S|)``; ``None`` uses the stability cap
            directly.
        warm_start: reuse the previous inner solution as PEM's starting point.
        init: ``"uniform"`` or ``"random"`` initial policies.
        seed: seeds the random initialization.
        check_every: ER-OMWU iterations between exploitability checks.
    """

    method: str = "pem"
    lam: float = 0.1
    eta: float | None = None
    tol: float = 1e-8
    max_iter: int = 200_000
    inner_method: str = "pu"
    inner_tol: float | None = None
    inner_max_iter: int = 200_000
    eta_factor: float | None = None
    warm_start: bool = True
    init: str = "uniform"
    seed: int = 0
    check_every: int = 50

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.lam <= 0:
            raise DomainError("the Markov-game solvers need lam > 0")
        if self.init not in ("uniform", "random"):
            raise DomainError("init must be 'uniform' or 'random'")

    def to_dict(self):
        return asdict(self)


@dataclass
class SolveResult:
    """Regularized NE with its certificate and diagnostics."""

    policy: SoftmaxPolicyPair
    pi1: np.ndarray
    pi2: np.ndarray
    Q: np.ndarray
    V: np.ndarray
    exploitability: float
    exploitability_horizon: float
    truncation_slack: float
    certified: bool
    iterations: int
    inner_iterations: int
    method: str
    eta: float
    trace: list = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def values_player2(self) -> np.ndarray:
        return -self.V

    def to_dict(self) -> dict:
        """JSON-ready summary; wall-clock is left out so reruns are byte-identical."""
        return {
            "method": self.method,
            "eta": self.eta,
            "certified": self.certified,
            "exploitability": self.exploitability,
            "exploitability_horizon": self.exploitability_horizon,
            "truncation_slack": self.truncation_slack,
            "iterations": self.iterations,
            "inner_iterations": self.inner_iterations,
            "pi1": self.pi1.tolist(),
            "pi2": self.pi2.tolist(),
            "logits_1": self.policy.logits_1.tolist(),
            "logits_2": self.policy.logits_2.tolist(),
            "V": self.V.tolist(),
            "Q": self.Q.tolist(),
            "trace": self.trace,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _initial_logs(game, config):
    n, a1, a2 = game.base_reward.shape
    if config.init == "uniform":
        return np.full((n, a1), -math.log(a1)), np.full((n, a2), -math.log(a2))
    rng = np.random.default_rng(config.seed)
    z1, z2 = rng.standard_normal((n, a1)), rng.standard_normal((n, a2))
    return z1 - np.log(np.exp(z1).sum(1, keepdims=True)), z2 - np.log(np.exp(z2).sum(1, keepdims=True))


def _certify(game, r, p1, p2, lam):
    expl = exploitability_from_probs(game, r, p1, p2, lam, math.inf)
    expl_t = exploitability_from_probs(game, r, p1, p2, lam, game.horizon)
    return expl, expl_t


def _finish(game, r, config, eta, l1, l2, Q, V, iters, inner, trace, start, expl=None):
    p1, p2 = np.exp(l1), np.exp(l2)
    if expl is None:
        expl = _certify(game, r, p1, p2, config.lam)
    return SolveResult(
        policy=SoftmaxPolicyPair.from_probs(p1, p2),
        pi1=p1,
        pi2=p2,
        Q=Q,
        V=V,
        exploitability=float(expl[0]),
        exploitability_horizon=float(expl[1]),
        truncation_slack=game.gamma**game.horizon / (1.0 - game.gamma),
        certified=bool(expl[0] <= config.tol),
        iterations=iters,
        inner_iterations=inner,
        method=config.method,
        eta=eta,
        trace=trace,
        wall_clock=time.perf_counter() - start,
    )


def lam_for_epsilon(game, epsilon: float) -> float:
    """Regularization that makes the regularized NE an ``epsilon``-NE of the original game."""
    logs = math.log(game.n_actions_1) + math.log(game.n_actions_2)
    if logs == 0:
        raise DomainError("single-action games need no regularization")
    return (1.0 - game.gamma) * epsilon / (2.0 * logs)


def pem_solve(game, scheme, theta, config: SolveConfig, warm_start=None) -> SolveResult:
    """Policy extragradient method: value iteration with exact stage-game solves.

    Each outer step forms ``Q = r + gamma P V``, solves every state's
    regularized matrix game to duality gap ``inner_tol`` and sets
    ``V(s) = f_lam(Q(s); pi1(s), pi2(s))``.  ``warm_start`` (a previous
    :class:`SolveResult`) seeds both the policies and the value table.
    """
    start = time.perf_counter()
    lam = config.lam
    r = reward_tensor(game, scheme, theta)
    n_act = max(game.n_actions_1, game.n_actions_2)
    eta = config.eta if config.eta is not None else stable_eta(lam, n_act, game.gamma)
    inner_tol = config.inner_tol if config.inner_tol is not None else (1 - game.gamma) * config.tol / 10
    value_tol = (1 - game.gamma) * config.tol / 4
    if warm_start is None:
        l1, l2 = _initial_logs(game, config)
        V = np.zeros(game.n_states)
    else:
        l1, l2 = np.log(warm_start.pi1), np.log(warm_start.pi2)
        V = np.array(warm_start.V)
    init_logs = (l1, l2)
    inner_total, trace = 0, []
    Q = r + game.gamma * game.expected_next(V)
    for t in range(1, config.max_iter + 1):
        Q = r + game.gamma * game.expected_next(V)
        out = solve_batch(
            Q, lam, eta, config.inner_method, inner_tol, config.inner_max_iter, init=init_logs
        )
        inner_total += int(out.iterations.sum())
        if not out.converged.all():
            bad = int(np.flatnonzero(~out.converged)[0])
            partial = _finish(game, r, config, eta, out.log_pi1, out.log_pi2, Q, V, t, inner_total, trace, start)
            raise ConvergenceError(
                f"inner solve at state {bad} stuck at gap {out.gaps[bad]:.3e}", result=partial
            )
        l1, l2 = out.log_pi1, out.log_pi2
        if config.warm_start:
            init_logs = (l1, l2)
        V_new = regularized_payoff(Q, np.exp(l1), np.exp(l2), lam)
        dv = float(np.max(np.abs(V_new - V)))
        V = V_new
        trace.append({"iteration": t, "value_change": dv})
        if dv <= value_tol:
            expl = _certify(game, r, np.exp(l1), np.exp(l2), lam)
            if expl[0] <= config.tol:
                return _finish(game, r, config, eta, l1, l2, Q, V, t, inner_total, trace, start, expl)
            value_tol /= 10
    return _finish(game, r, config, eta, l1, l2, Q, V, config.max_iter, inner_total, trace, start)


def er_omwu_eta(game, config: SolveConfig) -> float:
    """Scaled conservative step, capped by the single-stage stability schedule."""
    if config.eta is not None:
        return config.eta
    cap = stable_eta(config.lam, max(game.n_actions_1, game.n_actions_2), game.gamma)
    if config.eta_factor is None:
        return cap
    base = (1 - game.gamma) ** 3 / (32000 * game.n_states)
    return min(config.eta_factor * base, cap)


def er_omwu_solve(game, scheme, theta, config: SolveConfig, warm_start=None) -> SolveResult:
    """Single-loop entropy-regularized OMWU with a slow value update ``alpha = eta lam``.

    Starts from uniform policies, ``Q = 0`` and ``V = lam (log|A1| + log|A2|)``
    unless ``warm_start`` supplies policies and tables from an earlier solve.
    """
    start = time.perf_counter()
    lam = config.lam
    r = reward_tensor(game, scheme, theta)
    eta = er_omwu_eta(game, config)
    alpha = eta * lam
    if warm_start is None:
        l1, l2 = _initial_logs(game, config)
        Q = np.zeros_like(r)
        V = np.full(game.n_states, lam * (math.log(game.n_actions_1) + math.log(game.n_actions_2)))
    else:
        l1, l2 = np.log(warm_start.pi1), np.log(warm_start.pi2)
        Q, V = np.array(warm_start.Q), np.array(warm_start.V)
    b1, b2 = l1.copy(), l2.copy()
    q1, q2 = np.exp(b1), np.exp(b2)
    value_tol = (1 - game.gamma) * config.tol / 4
    trace = []
    for t in range(config.max_iter):
        g1 = np.einsum("sab,sb->sa", Q, q2)
        g2 = -np.einsum("sab,sa->sb", Q, q1)
        if t >= 1:
            l1 = _mw(l1, g1, eta, lam)
            l2 = _mw(l2, g2, eta, lam)
        b1 = _mw(l1, g1, eta, lam)
        b2 = _mw(l2, g2, eta, lam)
        q1, q2 = np.exp(b1), np.exp(b2)
        Q = r + game.gamma * game.expected_next(V)
        target = regularized_payoff(Q, q1, q2, lam)
        residual = float(np.abs(target - V).max())
        V = (1 - alpha) * V + alpha * target
        if (t + 1) % config.check_every == 0:
            trace.append({"iteration": t + 1, "residual": residual})
            gap = float(np.max(duality_gap(Q, q1, q2, lam)))
            if residual <= value_tol and gap <= value_tol:
                expl = _certify(game, r, q1, q2, lam)
                if expl[0] <= config.tol:
                    return _finish(game, r, config, eta, b1, b2, Q, V, t + 1, 0, trace, start, expl)
                value_tol /= 10
    return _finish(game, r, config, eta, b1, b2, Q, V, config.max_iter, 0, trace, start)


def nash_solve(game, scheme, theta, config: SolveConfig, warm_start=None) -> SolveResult:
    """Dispatch to the configured solver.

    ``warm_start`` may be a previous :class:`SolveResult`; its policies replace
    the configured initialization (PEM also reuses its value table as the
    first ``V``).
    """
    if config.method == "pem":
        return pem_solve(game, scheme, theta, config, warm_start)
    return er_omwu_solve(game, scheme, theta, config, warm_start)
