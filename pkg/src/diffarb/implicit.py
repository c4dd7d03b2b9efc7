"""Implicit differentiation through the regularized Nash equilibrium.

The equilibrium is characterized by the stacked first-order condition
``u(theta, phi) = (E_nu grad_{phi1} V^(1), E_nu grad_{phi2} V^(2)) = 0``.
Differentiating it gives the sensitivity ``d phi*/d theta = -[grad_phi u]^{-1}
grad_theta u``, and the designer's total derivative follows by the chain rule.
The default evaluation is the adjoint form, which solves one transposed system
against ``grad_phi f`` instead of materializing the full sensitivity.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .errors import SingularSystemError
from .game import occupancy_measure
from .grad_engine import finite_difference, relative_error, value_grads_dp, value_grads_exact, value_grads_mc, value_grads_stationary
from .mg_solvers import nash_solve

COND_LIMIT = 1e10
RIDGE_SCALE = 1e-8


class UntrustedGradientWarning(UserWarning):
    """Raised as a warning when the system is built at an uncertified equilibrium."""


def spectral_norm(J, iters=100, rtol=1e-10) -> float:
    """Largest singular value by power iteration on ``J^T J`` (avoids a dense SVD)."""
    v = np.ones(J.shape[1]) / math.sqrt(J.shape[1])
    sigma = 0.0
    for _ in range(iters):
        w = J.T @ (J @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        prev, sigma = sigma, math.sqrt(nw)
        if abs(sigma - prev) <= rtol * sigma:
            break
    return sigma


def _lu_with_condition(J):
    """LU factors plus the reciprocal-condition estimate from ``gecon``."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        try:
            lu, piv = sla.lu_factor(J)
        except ValueError as exc:
            raise SingularSystemError(str(exc), condition=math.inf) from exc
    if not np.all(np.isfinite(lu)):
        return lu, piv, math.inf
    gecon = sla.get_lapack_funcs("gecon", (lu,))
    rcond, _ = gecon(lu, np.linalg.norm(J, 1), norm="1")
    return lu, piv, (1.0 / rcond if rcond > 0 else math.inf)


@dataclass(eq=False)
class SensitivitySystem:
    """Stationarity residual ``u`` and its Jacobians at one ``(theta, phi)``."""

    u: np.ndarray
    grad_theta_u: np.ndarray
    grad_phi_u: np.ndarray
    nu: np.ndarray
    trusted: bool = True
    stderr: dict | None = None

    @cached_property
    def _raw_factor(self):
        return _lu_with_condition(self.grad_phi_u)

    @cached_property
    def condition(self) -> float:
        """LAPACK 1-norm condition estimate of ``grad_phi_u`` (from its LU factors)."""
        return self._raw_factor[2] if self.grad_phi_u.size else 1.0

    @cached_property
    def factorization(self):
        """``(lu, piv, ridge)``; a ridge ``mu`` is subtracted from the diagonal when ill-conditioned."""
        J = self.grad_phi_u
        lu, piv, cond = self._raw_factor
        mu = 0.0
        if not np.isfinite(cond) or cond > COND_LIMIT:
            mu = RIDGE_SCALE * spectral_norm(J)
            lu, piv, cond = _lu_with_condition(J - mu * np.eye(J.shape[0]))
            if mu == 0.0 or not np.isfinite(cond) or cond > 1e3 * COND_LIMIT:
                raise SingularSystemError(
                    f"grad_phi u is singular (condition {self.condition:.3e}, {cond:.3e} after ridge)",
                    condition=self.condition,
                )
        return lu, piv, mu

    @property
    def ridge(self) -> float:
        return self.factorization[2]

    @property
    def regularized(self) -> bool:
        return self.ridge > 0

    def to_dict(self):
        return {
            "u": self.u.tolist(),
            "grad_theta_u": self.grad_theta_u.tolist(),
            "grad_phi_u": self.grad_phi_u.tolist(),
            "nu": self.nu.tolist(),
            "condition": self.condition,
            "trusted": self.trusted,
        }


def assemble_system(
    game,
    scheme,
    theta,
    policy,
    lam,
    nu=None,
    grad_mode="stationary",
    n_traj=100_000,
    seed=0,
    certificate=None,
    tol=None,
) -> SensitivitySystem:
    """Build ``u`` and its Jacobians at ``policy``.

    Args:
        nu: weighting over start states; ``None`` uses the discounted
            occupancy of ``policy`` itself, ``"rho0"`` the initial distribution.
            It is held fixed while differentiating.
        grad_mode: ``"stationary"`` (infinite-horizon values, matching the
            equilibria the solvers return), or one of the horizon-``T``
            routes ``"exact"`` (trajectory enumeration), ``"dp"`` (exact
            recursion) and ``"mc"`` (sampled, with ``n_traj`` and ``seed``).
            The horizon-``T`` routes only agree with the stationary one up
            to the truncation ``gamma^T``.
        certificate, tol: the equilibrium's exploitability and the tolerance it
            was certified against.  Without them the system is tagged untrusted.
    """
    if nu is None:
        nu = occupancy_measure(game, policy)
    elif isinstance(nu, str) and nu == "rho0":
        nu = np.asarray(game.rho0)
    nu = np.asarray(nu, dtype=float)
    if grad_mode == "stationary":
        bundle = value_grads_stationary(game, scheme, theta, policy, lam, start=nu)
    elif grad_mode == "exact":
        bundle = value_grads_exact(game, scheme, theta, policy, lam, start=nu)
    elif grad_mode == "dp":
        bundle = value_grads_dp(game, scheme, theta, policy, lam, start=nu)
    elif grad_mode == "mc":
        bundle = value_grads_mc(game, scheme, theta, policy, lam, n_traj, np.random.default_rng(seed), start=nu)
    else:
        raise ValueError(f"unknown grad_mode {grad_mode!r}")
    b1, b2 = bundle.player1, bundle.player2
    trusted = certificate is not None and (tol is None or certificate <= tol)
    if not trusted:
        warnings.warn("sensitivity system built without a valid NE certificate", UntrustedGradientWarning, stacklevel=2)
    stderr = None
    if b1.stderr is not None:
        stderr = {
            "u": np.concatenate([b1.stderr["grad_phi_own"], b2.stderr["grad_phi_own"]]),
            "grad_theta_u": np.vstack([b1.stderr["hess_theta_phi"], b2.stderr["hess_theta_phi"]]),
            "grad_phi_u": np.vstack([b1.stderr["hess_phi_phi"], b2.stderr["hess_phi_phi"]]),
        }
    return SensitivitySystem(
        u=np.concatenate([b1.grad_phi_own, b2.grad_phi_own]),
        grad_theta_u=np.vstack([b1.hess_theta_phi, b2.hess_theta_phi]),
        grad_phi_u=np.vstack([b1.hess_phi_phi, b2.hess_phi_phi]),
        nu=nu,
        trusted=trusted,
        stderr=stderr,
    )


def ne_sensitivity(system: SensitivitySystem) -> np.ndarray:
    """``d phi*/d theta = -[grad_phi u]^{-1} grad_theta u`` as a ``(d, m)`` matrix."""
    if system.grad_theta_u.shape[1] == 0:
        return np.zeros_like(system.grad_theta_u)
    lu, piv, _ = system.factorization
    return -sla.lu_solve((lu, piv), system.grad_theta_u)


@dataclass
class DesignerGradient:
    value: float
    grad: np.ndarray
    trusted: bool
    regularized: bool
    form: str

    def to_dict(self):
        return {
            "value": self.value,
            "grad": self.grad.tolist(),
            "trusted": self.trusted,
            "regularized": self.regularized,
            "form": self.form,
        }


def designer_gradient(objective, theta, policy, system: SensitivitySystem, form="adjoint") -> DesignerGradient:
    """Total derivative ``grad f*(theta)`` at the equilibrium ``policy``.

    ``form="adjoint"`` evaluates ``grad_theta f - (grad_theta u)' [grad_phi u]^{-T} grad_phi f``;
    ``form="explicit"`` forms the sensitivity matrix first.  Both share one
    LU factorization.
    """
    theta = np.asarray(theta, dtype=float)
    g_theta = np.asarray(objective.grad_theta(theta, policy), dtype=float)
    g_phi = np.asarray(objective.grad_phi(theta, policy), dtype=float)
    if system.grad_theta_u.shape[1] == 0 or not np.any(g_phi):
        grad = g_theta.copy()
    elif form == "adjoint":
        lu, piv, _ = system.factorization
        y = sla.lu_solve((lu, piv), g_phi, trans=1)
        grad = g_theta - system.grad_theta_u.T @ y
    elif form == "explicit":
        grad = g_theta + ne_sensitivity(system).T @ g_phi
    else:
        raise ValueError(f"unknown form {form!r}")
    regularized = system.regularized if system.grad_theta_u.shape[1] and np.any(g_phi) else False
    return DesignerGradient(
        float(objective.value(theta, policy)), grad, system.trusted, regularized, form
    )


# ---------------------------------------------------------------------------
# designer objectives


class DesignerObjective:
    """Upper-level loss ``f(theta, phi)`` with its partial gradients.

    Subclasses implement :meth:`value`, :meth:`grad_theta` and
    :meth:`grad_phi`; :meth:`self_check` compares the latter two against
    central finite differences of :meth:`value`.
    """

    def value(self, theta, policy) -> float:
        raise NotImplementedError

    def grad_theta(self, theta, policy) -> np.ndarray:
        raise NotImplementedError

    def grad_phi(self, theta, policy) -> np.ndarray:
        raise NotImplementedError

    def self_check(self, theta, policy, step=1e-5, floor=1e-4) -> dict:
        theta = np.asarray(theta, dtype=float)
        phi = policy.vector()
        fd_t = finite_difference(lambda t: self.value(t, policy), theta, step) if theta.size else np.zeros(0)
        fd_p = finite_difference(lambda p: self.value(theta, policy.with_vector(p)), phi, step)
        err_t = relative_error(self.grad_theta(theta, policy), fd_t, floor)
        err_p = relative_error(self.grad_phi(theta, policy), fd_p, floor)
        return {
            "theta": float(err_t.max()) if err_t.size else 0.0,
            "phi": float(err_p.max()) if err_p.size else 0.0,
        }


@dataclass
class PolicyTargetObjective(DesignerObjective):
    """``(pi^player(action|state) - target)^2 + c ||theta - center||^2``."""

    state: int = 0
    action: int = 0
    player: int = 1
    target: float = 0.5
    theta_weight: float = 0.0
    theta_center: np.ndarray | float = 0.0

    def _prob(self, policy):
        return policy.probs(self.player)[self.state, self.action]

    def value(self, theta, policy):
        diff = np.asarray(theta, dtype=float) - self.theta_center
        return float((self._prob(policy) - self.target) ** 2 + self.theta_weight * diff @ diff)

    def grad_theta(self, theta, policy):
        return 2.0 * self.theta_weight * (np.asarray(theta, dtype=float) - self.theta_center)

    def grad_phi(self, theta, policy):
        p = policy.probs(self.player)[self.state]
        K = p.size - 1
        d1, d2 = policy.dims
        out = np.zeros(d1 + d2)
        dprob = p[self.action] * ((np.arange(K) == self.action).astype(float) - p[:K])
        off = (0 if self.player == 1 else d1) + self.state * K
        out[off : off + K] = 2.0 * (self._prob(policy) - self.target) * dprob
        return out


@dataclass
class CallableObjective(DesignerObjective):
    """Wraps plain callables ``f(theta, policy)``, ``grad_theta`` and ``grad_phi``."""

    f: object = None
    f_theta: object = None
    f_phi: object = None

    def value(self, theta, policy):
        return float(self.f(theta, policy))

    def grad_theta(self, theta, policy):
        return np.asarray(self.f_theta(theta, policy), dtype=float)

    def grad_phi(self, theta, policy):
        return np.asarray(self.f_phi(theta, policy), dtype=float)


# ---------------------------------------------------------------------------
# convenience: one upper-level evaluation


@dataclass
class UpperEvaluation:
    theta: np.ndarray
    f_star: float
    gradient: DesignerGradient | None
    solve: object
    system: SensitivitySystem | None = field(default=None, repr=False)


def differentiate_solution(game, scheme, objective, theta, solve, solve_config, grad_mode="stationary", nu=None):
    """Assemble the stationarity system at a solved equilibrium and return ``(gradient, system)``."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UntrustedGradientWarning)
        system = assemble_system(
            game,
            scheme,
            theta,
            solve.policy,
            solve_config.lam,
            nu=nu,
            grad_mode=grad_mode,
            certificate=solve.exploitability,
            tol=solve_config.tol,
        )
    return designer_gradient(objective, theta, solve.policy, system), system


def evaluate_upper(
    game, scheme, objective, theta, solve_config, with_gradient=True, warm_start=None, grad_mode="stationary", nu=None
) -> UpperEvaluation:
    """Solve the lower level at ``theta`` and (optionally) differentiate through it."""
    theta = scheme.check_theta(theta)
    res = nash_solve(game, scheme, theta, solve_config, warm_start=warm_start)
    f_star = float(objective.value(theta, res.policy))
    if not with_gradient:
        return UpperEvaluation(theta, f_star, None, res)
    grad, system = differentiate_solution(game, scheme, objective, theta, res, solve_config, grad_mode, nu)
    return UpperEvaluation(theta, f_star, grad, res, system)


def fd_designer_gradient(game, scheme, objective, theta, solve_config, step=1e-4) -> np.ndarray:
    """Reference ``grad f*`` by central differences, re-solving the equilibrium at each point."""
    theta = np.asarray(theta, dtype=float)
    out = np.zeros(theta.size)
    for j in range(theta.size):
        e = np.zeros(theta.size)
        e[j] = step
        vals = []
        for t in (theta + e, theta - e):
            res = nash_solve(game, scheme, t, solve_config)
            vals.append(objective.value(t, res.policy))
        out[j] = (vals[0] - vals[1]) / (2 * step)
    return out


def fd_sensitivity(game, scheme, theta, solve_config, step=1e-4) -> np.ndarray:
    """Reference ``d phi*/d theta`` by re-solving at ``theta +- step``."""
    theta = np.asarray(theta, dtype=float)
    cols = []
    for j in range(theta.size):
        e = np.zeros(theta.size)
        e[j] = step
        hi = nash_solve(game, scheme, theta + e, solve_config).policy.vector()
        lo = nash_solve(game, scheme, theta - e, solve_config).policy.vector()
        cols.append((hi - lo) / (2 * step))
    return np.stack(cols, axis=1)
