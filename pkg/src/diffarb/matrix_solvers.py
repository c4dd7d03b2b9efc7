"""Extragradient solvers for entropy-regularized zero-sum matrix games.

Player 1 maximizes ``f(p1, p2) = p1' A p2 + lam H(p1) - lam H(p2)``.  All
updates happen on log-probabilities and renormalize after every step, and the
core routines are batched over a leading axis so that the Markov-game solvers
can push every state's stage game through one call.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError

METHODS = ("pu", "omwu")


def stable_eta(lam: float, n_actions: int, gamma: float = 0.0) -> float:
    """Learning rate ``(1-gamma) / (2 (1 + lam (log|A| + 1 - gamma)))``."""
    return (1.0 - gamma) / (2.0 * (1.0 + lam * (math.log(n_actions) + 1.0 - gamma)))


def default_eta(payoff: np.ndarray, lam: float) -> float:
    return 0.1 / (lam + float(np.max(np.abs(payoff))))


@dataclass(frozen=True, eq=False)
class MatrixGameProblem:
    """Payoff ``A`` (player 1 maximizes), regularization ``lam`` and step ``eta``."""

    payoff: np.ndarray
    lam: float
    eta: float | None = None

    def __post_init__(self):
        A = np.array(self.payoff, dtype=float)
        if A.ndim != 2 or not np.all(np.isfinite(A)):
            raise DomainError("payoff must be a finite 2-D matrix")
        if self.lam < 0:
            raise DomainError("lambda must be non-negative")
        eta = default_eta(A, self.lam) if self.eta is None else float(self.eta)
        if eta <= 0 or eta * self.lam >= 1:
            raise DomainError(f"eta={eta} outside (0, 1/lambda)")
        A.setflags(write=False)
        object.__setattr__(self, "payoff", A)
        object.__setattr__(self, "eta", eta)


def logsumexp(z, axis=-1, keepdims=False):
    # scipy's version carries array-API overhead that dominates the tiny
    # per-state problems solved here
    zmax = z.max(axis=axis, keepdims=True)
    out = np.log(np.exp(z - zmax).sum(axis=axis, keepdims=True)) + zmax
    return out if keepdims else np.squeeze(out, axis=axis)


def entropy(p, axis=-1):
    return -(p * np.log(p)).sum(axis=axis)


def regularized_payoff(A, p1, p2, lam):
    """``f_lam(A; p1, p2)``, batched over leading axes."""
    val = np.einsum("...a,...ab,...b->...", p1, A, p2)
    if lam:
        val = val + lam * (entropy(p1) - entropy(p2))
    return val


def duality_gap(A, p1, p2, lam):
    """Closed-form regularized duality gap ``max f(., p2) - min f(p1, .)``."""
    A = np.asarray(A, dtype=float)
    g1 = np.einsum("...ab,...b->...a", A, p2)
    g2 = -np.einsum("...ab,...a->...b", A, p1)
    if lam == 0:
        return g1.max(axis=-1) + g2.max(axis=-1)
    best1 = _soft_max(g1, lam) - lam * entropy(p2)
    best2 = _soft_max(g2, lam) - lam * entropy(p1)
    return best1 + best2


def _soft_max(g, lam):
    """``lam logsumexp(g / lam)`` without overflow for small ``lam``."""
    top = g.max(axis=-1)
    return top + lam * logsumexp((g - top[..., None]) / lam, axis=-1)


def _normalize(z):
    return z - logsumexp(z, axis=-1, keepdims=True)


def _mw(logp, grad, eta, lam):
    return _normalize((1.0 - eta * lam) * logp + eta * grad)


def _grads(A, l1, l2):
    return (
        np.einsum("...ab,...b->...a", A, np.exp(l2)),
        -np.einsum("...ab,...a->...b", A, np.exp(l1)),
    )


def _pu_logstep(A, eta, lam, l1, l2):
    g1, g2 = _grads(A, l1, l2)
    m1, m2 = _mw(l1, g1, eta, lam), _mw(l2, g2, eta, lam)
    h1, h2 = _grads(A, m1, m2)
    return _mw(l1, h1, eta, lam), _mw(l2, h2, eta, lam), m1, m2


def _omwu_logstep(A, eta, lam, l1, l2, b1, b2):
    g1, g2 = _grads(A, b1, b2)
    m1, m2 = _mw(l1, g1, eta, lam), _mw(l2, g2, eta, lam)
    h1, h2 = _grads(A, m1, m2)
    return _mw(l1, h1, eta, lam), _mw(l2, h2, eta, lam), m1, m2


def _check_simplex(p, name):
    p = np.asarray(p, dtype=float)
    if p.min() <= 0 or np.max(np.abs(p.sum(axis=-1) - 1.0)) > 1e-10:
        raise DomainError(f"{name} must be a strictly positive probability vector")
    return p


def pu_step(problem: MatrixGameProblem, pi1, pi2):
    """One PU iteration; returns ``(pi1_next, pi2_next, (mid1, mid2))``."""
    l1 = np.log(_check_simplex(pi1, "pi1"))
    l2 = np.log(_check_simplex(pi2, "pi2"))
    n1, n2, m1, m2 = _pu_logstep(problem.payoff, problem.eta, problem.lam, l1, l2)
    return np.exp(n1), np.exp(n2), (np.exp(m1), np.exp(m2))


def omwu_step(problem: MatrixGameProblem, pi1, pi2, prev_midpoints, optimistic=True):
    """One OMWU iteration.

    With ``optimistic=True`` the midpoint uses the gradient at the previous
    midpoint; with ``False`` it uses the current iterate and coincides with PU.
    """
    if not optimistic:
        return pu_step(problem, pi1, pi2)
    l1 = np.log(_check_simplex(pi1, "pi1"))
    l2 = np.log(_check_simplex(pi2, "pi2"))
    b1 = np.log(_check_simplex(prev_midpoints[0], "midpoint 1"))
    b2 = np.log(_check_simplex(prev_midpoints[1], "midpoint 2"))
    n1, n2, m1, m2 = _omwu_logstep(problem.payoff, problem.eta, problem.lam, l1, l2, b1, b2)
    return np.exp(n1), np.exp(n2), (np.exp(m1), np.exp(m2))


@dataclass
class BatchSolveOutput:
    log_pi1: np.ndarray
    log_pi2: np.ndarray
    gaps: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    gap_trace: list = field(default_factory=list)


def solve_batch(A, lam, eta, method="pu", tol=1e-10, max_iter=100_000, init=None, trace=False):
    """Solve a stack of regularized matrix games ``A[b]`` independently.

    Each game is frozen the moment its own gap reaches ``tol``, so the result
    for one game never depends on the others in the batch.  ``init`` is an
    optional pair of log-policy stacks for warm starting.
    """
    if method not in METHODS:
        raise DomainError(f"unknown method {method!r}; expected one of {METHODS}")
    if lam <= 0:
        raise DomainError("solve_batch needs lam > 0; use averaged iterates for lam = 0")
    A = np.asarray(A, dtype=float)
    B, m, n = A.shape
    if init is None:
        l1 = np.full((B, m), -math.log(m))
        l2 = np.full((B, n), -math.log(n))
    else:
        l1, l2 = (np.array(x, dtype=float) for x in init)
    b1, b2 = l1.copy(), l2.copy()
    iters = np.zeros(B, dtype=np.int64)
    gaps = duality_gap(A, np.exp(l1), np.exp(l2), lam)
    active = gaps > tol
    gap_trace = [gaps.copy()] if trace else []
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        Ai = A[idx]
        if method == "pu":
            n1, n2, m1, m2 = _pu_logstep(Ai, eta, lam, l1[idx], l2[idx])
        else:
            n1, n2, m1, m2 = _omwu_logstep(Ai, eta, lam, l1[idx], l2[idx], b1[idx], b2[idx])
        l1[idx], l2[idx], b1[idx], b2[idx] = n1, n2, m1, m2
        iters[idx] += 1
        gaps[idx] = duality_gap(Ai, np.exp(n1), np.exp(n2), lam)
        active[idx] = gaps[idx] > tol
        if trace:
            gap_trace.append(gaps.copy())
    return BatchSolveOutput(l1, l2, gaps, iters, ~active, gap_trace)


@dataclass
class MatrixSolveDiagnostics:
    method: str
    iterations: int
    gap: float
    converged: bool
    certified: bool
    gaps: list

    def to_dict(self):
        return asdict(self)


def solve_regularized_matrix_game(
    problem: MatrixGameProblem, method="pu", tol=1e-10, max_iter=100_000, raise_on_failure=True
):
    """Run PU or OMWU until the duality gap is at most ``tol``.

    Returns ``(pi1, pi2, diagnostics)``.  For ``lam == 0`` the averaged
    iterates are returned and the result is never marked certified.  When the
    iteration budget runs out a :class:`ConvergenceError` carrying the last
    iterate is raised unless ``raise_on_failure`` is false.
    """
    A, lam, eta = problem.payoff, problem.lam, problem.eta
    if lam == 0:
        return _solve_unregularized(problem, method, tol, max_iter)
    out = solve_batch(A[None], lam, eta, method, tol, max_iter, trace=True)
    pi1, pi2 = np.exp(out.log_pi1[0]), np.exp(out.log_pi2[0])
    diag = MatrixSolveDiagnostics(
        method=method,
        iterations=int(out.iterations[0]),
        gap=float(out.gaps[0]),
        converged=bool(out.converged[0]),
        certified=bool(out.converged[0]),
        gaps=[float(g[0]) for g in out.gap_trace],
    )
    if not diag.converged and raise_on_failure:
        raise ConvergenceError(
            f"{method} did not reach gap {tol} in {max_iter} iterations (gap {diag.gap:.3e})",
            result=(pi1, pi2, diag),
        )
    return pi1, pi2, diag


def _solve_unregularized(problem, method, tol, max_iter):
    A, eta = problem.payoff, problem.eta
    m, n = A.shape
    l1, l2 = np.full(m, -math.log(m)), np.full(n, -math.log(n))
    b1, b2 = l1.copy(), l2.copy()
    s1, s2 = np.zeros(m), np.zeros(n)
    gaps = []
    for t in range(1, max_iter + 1):
        if method == "pu":
            l1, l2, b1, b2 = _pu_logstep(A, eta, 0.0, l1, l2)
        else:
            l1, l2, b1, b2 = _omwu_logstep(A, eta, 0.0, l1, l2, b1, b2)
        s1 += np.exp(b1)
        s2 += np.exp(b2)
        gap = float(duality_gap(A, s1 / t, s2 / t, 0.0))
        gaps.append(gap)
        if gap <= tol:
            break
    diag = MatrixSolveDiagnostics(method, t, gaps[-1], gaps[-1] <= tol, False, gaps)
    return s1 / t, s2 / t, diag
