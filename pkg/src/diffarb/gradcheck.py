"""Finite-difference validation matrix for value derivatives and implicit gradients.

Every check compares an analytic array against a central-difference
reference entry by entry (``|a - b| / max(|b|, 1e-4)``) and passes when the
largest entry error is under its threshold.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EnumerationCapError
from .game import SoftmaxPolicyPair, evaluate_value
from .grad_engine import finite_difference, relative_error, value_grads_dp, value_grads_exact, value_grads_stationary
from .implicit import PolicyTargetObjective, assemble_system, designer_gradient, fd_designer_gradient, fd_sensitivity, ne_sensitivity
from .mg_solvers import SolveConfig, nash_solve

NO_PARAMS_NOTE = "no incentive parameters: theta blocks skipped"


@dataclass
class Check:
    name: str
    threshold: float
    analytic: np.ndarray
    reference: np.ndarray
    index: list = field(default_factory=list)

    @property
    def errors(self) -> np.ndarray:
        return relative_error(self.analytic, self.reference)

    @property
    def max_error(self) -> float:
        err = self.errors
        return float(err.max()) if err.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error <= self.threshold

    def offending(self):
        err = self.errors
        flat = np.argwhere(err > self.threshold)
        return [tuple(int(i) for i in idx) for idx in flat]

    def to_dict(self):
        a, b, e = self.analytic.ravel(), self.reference.ravel(), self.errors.ravel()
        shape = self.analytic.shape
        entries = [
            {
                "index": [int(i) for i in np.unravel_index(j, shape)] if shape else [],
                "analytic": float(a[j]),
                "finite_difference": float(b[j]),
                "rel_error": float(e[j]),
            }
            for j in range(a.size)
        ]
        return {
            "name": self.name,
            "threshold": self.threshold,
            "max_rel_error": self.max_error,
            "passed": self.passed,
            "columns": self.index,
            "entries": entries,
        }


@dataclass
class GradcheckReport:
    checks: list[Check]
    notes: list[str]
    settings: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self):
        return [(c.name, c.max_error, c.threshold, c.offending()) for c in self.checks if not c.passed]

    def to_dict(self):
        return {
            "passed": self.passed,
            "notes": self.notes,
            "settings": self.settings,
            "checks": [c.to_dict() for c in self.checks],
        }


def run_gradcheck(game, scheme, options: dict, objective=None, solve_config: SolveConfig | None = None) -> GradcheckReport:
    """Run the validation matrix described by ``options`` (see ``GRADCHECK_DEFAULTS``)."""
    lam = float(options["lam"])
    h = float(options["fd_step"])
    m = scheme.n_params
    notes: list[str] = []
    if options["theta"] is not None:
        theta = scheme.check_theta(options["theta"])
    else:
        theta = np.asarray(scheme.theta_bounds, dtype=float).mean(axis=1) if m else np.zeros(0)
    policy = SoftmaxPolicyPair.random(game, np.random.default_rng(options["policy_seed"]), options["policy_scale"])
    weights = tuple(float(w) for w in options["term_weights"])
    if weights != (1.0,) * 5:
        notes.append(f"regularization Hessian terms scaled by {list(weights)}")
    d1, d2 = policy.dims
    d = d1 + d2
    rho = game.rho0

    try:
        value_grads_exact(game, scheme, theta, policy, lam, term_weights=weights)

        def bundle_at(th, pol):
            return value_grads_exact(game, scheme, th, pol, lam, term_weights=weights)

        analytic_route = "exact"
    except EnumerationCapError:
        notes.append("trajectory enumeration over cap: analytic blocks from the dynamic-programming route")

        def bundle_at(th, pol):
            return value_grads_dp(game, scheme, th, pol, lam)

        analytic_route = "dp"

    rng = np.random.default_rng(options["policy_seed"])
    coords = np.arange(d) if d <= options["max_coords"] else np.sort(rng.choice(d, options["max_coords"], replace=False))
    if coords.size < d:
        notes.append(f"policy coordinates subsampled: {coords.size} of {d}")
    base_vec = policy.vector()

    def pol_at(z):
        v = base_vec.copy()
        v[coords] = z
        return policy.with_vector(v)

    z0 = base_vec[coords]
    bundle = bundle_at(theta, policy)
    checks: list[Check] = []
    vt = options["value_threshold"]
    cols = coords.tolist()
    if m == 0:
        notes.append(NO_PARAMS_NOTE)

    for i in (1, 2):
        pg = bundle.player(i)

        def value(th, pol, i=i):
            return float(rho @ evaluate_value(game, scheme, th, pol, lam, player=i))

        checks.append(Check(f"player{i}.value", vt, np.array([pg.value]), np.array([value(theta, policy)])))
        fd_phi = finite_difference(lambda z: value(theta, pol_at(z)), z0, h)
        checks.append(Check(f"player{i}.grad_phi", vt, pg.grad_phi[coords], fd_phi, cols))
        fd_hpp = finite_difference(lambda z: bundle_at(theta, pol_at(z)).player(i).grad_phi_own, z0, h)
        checks.append(Check(f"player{i}.hess_phi_phi", vt, pg.hess_phi_phi[:, coords], fd_hpp, cols))
        if m:
            fd_th = finite_difference(lambda th: value(th, policy), theta, h)
            checks.append(Check(f"player{i}.grad_theta", vt, pg.grad_theta, fd_th))
            fd_htp = finite_difference(lambda th: bundle_at(th, policy).player(i).grad_phi_own, theta, h)
            checks.append(Check(f"player{i}.hess_theta_phi", vt, pg.hess_theta_phi, fd_htp))

    if analytic_route == "exact":
        dp = value_grads_dp(game, scheme, theta, policy, lam)
        for i in (1, 2):
            a, b = bundle.player(i), dp.player(i)
            for blk in ("grad_phi", "hess_phi_phi") + (("grad_theta", "hess_theta_phi") if m else ()):
                checks.append(Check(f"player{i}.{blk}.dp_vs_exact", options["dp_threshold"], getattr(b, blk), getattr(a, blk)))

    # the implicit system uses stationary (infinite-horizon) values
    for i in (1, 2):

        def stationary_value(th, pol, i=i):
            return float(rho @ evaluate_value(game, scheme, th, pol, lam, player=i, horizon=math.inf))

        def stationary_grad(th, pol, i=i):
            return value_grads_stationary(game, scheme, th, pol, lam).player(i).grad_phi_own

        sg = value_grads_stationary(game, scheme, theta, policy, lam).player(i)
        fd_phi = finite_difference(lambda z: stationary_value(theta, pol_at(z)), z0, h)
        checks.append(Check(f"player{i}.stationary.grad_phi", vt, sg.grad_phi[coords], fd_phi, cols))
        fd_hpp = finite_difference(lambda z: stationary_grad(theta, pol_at(z)), z0, h)
        checks.append(Check(f"player{i}.stationary.hess_phi_phi", vt, sg.hess_phi_phi[:, coords], fd_hpp, cols))
        if m:
            fd_htp = finite_difference(lambda th: stationary_grad(th, policy), theta, h)
            checks.append(Check(f"player{i}.stationary.hess_theta_phi", vt, sg.hess_theta_phi, fd_htp))

    if m and options["implicit"]:
        obj = objective or PolicyTargetObjective(state=0, action=0, player=1, target=0.5, theta_weight=0.1)
        cfg = dataclasses.replace(solve_config or SolveConfig(), lam=lam, tol=options["implicit_tol"])
        res = nash_solve(game, scheme, theta, cfg)
        system = assemble_system(game, scheme, theta, res.policy, lam, certificate=res.exploitability, tol=cfg.tol)
        step = options["implicit_step"]
        sens = ne_sensitivity(system)
        checks.append(Check("implicit.sensitivity", options["implicit_threshold"], sens, fd_sensitivity(game, scheme, theta, cfg, step)))
        dg = designer_gradient(obj, theta, res.policy, system)
        checks.append(
            Check("implicit.designer_gradient", options["implicit_threshold"], dg.grad, fd_designer_gradient(game, scheme, obj, theta, cfg, step))
        )
        if system.regularized:
            notes.append("implicit system was ill-conditioned; ridge applied")

    settings = {
        "lam": lam,
        "theta": theta.tolist(),
        "fd_step": h,
        "analytic_route": analytic_route,
        "coords": cols,
        "term_weights": list(weights),
    }
    return GradcheckReport(checks, notes, settings)
