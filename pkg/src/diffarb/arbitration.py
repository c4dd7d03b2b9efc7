"""Upper-level incentive design: projected implicit-gradient descent and zeroth-order baselines.

``da_run`` alternates a lower-level equilibrium solve with a projected step
along the implicit designer gradient.  ``grid_search``, ``bayes_opt`` and
``random_search`` only query ``f*(theta)`` and are the comparison baselines;
all of them count equilibrium solves so efficiency curves line up.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .bayesopt import minimize_ei
from .errors import ConvergenceError, DomainError
from .implicit import PolicyTargetObjective, differentiate_solution
from .instances import stage_game
from .mg_solvers import SolveConfig, nash_solve

SCHEMA_VERSION = 1
CSV_FIXED = ("method", "k")
CSV_TAIL = ("f_star", "grad_norm", "solves_cum")


def csv_header(n_params: int) -> list[str]:
    """Column names of the flat per-solve CSV."""
    return [*CSV_FIXED, *(f"theta_{j}" for j in range(n_params)), *CSV_TAIL]


# ---------------------------------------------------------------------------
# synthetic benchmark


SYNTHETIC_A0 = np.array([[0.2, -0.3], [-0.4, 0.3]])
SYNTHETIC_G = np.array([[0.5, 0.5], [-0.5, -0.5]])


@dataclass(frozen=True)
class SyntheticInstance:
    """One-state 2x2 game with payoff ``A0 + theta G`` and a policy-target designer loss."""

    lam: float = 0.5
    p_target: float = 0.7
    penalty: float = 0.02
    bounds: tuple = (-1.0, 1.0)

    def build(self):
        game, scheme = stage_game(SYNTHETIC_A0, features=SYNTHETIC_G, bounds=self.bounds)
        objective = PolicyTargetObjective(state=0, action=0, player=1, target=self.p_target, theta_weight=self.penalty)
        return game, scheme, objective

    def solve_config(self, **overrides) -> SolveConfig:
        return SolveConfig(**{"lam": self.lam, "tol": 1e-12, **overrides})


# ---------------------------------------------------------------------------
# evaluators


@dataclass
class Evaluation:
    """One lower-level solve seen from the upper level."""

    theta: np.ndarray
    f_star: float
    grad: np.ndarray | None
    certified: bool
    exploitability: float
    solver_iterations: int
    solves_cum: int
    trusted: bool = True
    regularized: bool = False
    solve: object = field(default=None, repr=False)

    @property
    def grad_norm(self) -> float:
        return float(np.linalg.norm(self.grad)) if self.grad is not None else math.nan


class UpperEvaluator:
    """``theta -> f*(theta)`` with a solve counter; optionally returns the implicit gradient.

    Calling the instance returns the scalar ``f*`` (what the zeroth-order
    baselines see).  ``evaluate`` exposes the full :class:`Evaluation`.
    """

    def __init__(self, game, scheme, objective, solve_config, grad_mode="stationary", nu=None, warm_start=False):
        self.game, self.scheme, self.objective = game, scheme, objective
        self.solve_config, self.grad_mode, self.nu = solve_config, grad_mode, nu
        self.warm_start = warm_start
        self.n_solves = 0
        self._last = None

    def evaluate(self, theta, with_gradient=False, warm=None) -> Evaluation:
        theta = self.scheme.check_theta(theta)
        if warm is None and self.warm_start:
            warm = self._last
        try:
            res = nash_solve(self.game, self.scheme, theta, self.solve_config, warm_start=warm)
        except ConvergenceError as err:
            res = err.result
        self.n_solves += 1
        self._last = res
        f_star = float(self.objective.value(theta, res.policy))
        grad, trusted, regularized = None, True, False
        if with_gradient:
            dg, _ = differentiate_solution(
                self.game, self.scheme, self.objective, theta, res, self.solve_config, self.grad_mode, self.nu
            )
            grad, trusted, regularized = dg.grad, dg.trusted, dg.regularized
        return Evaluation(
            theta=theta,
            f_star=f_star,
            grad=grad,
            certified=bool(res.certified),
            exploitability=float(res.exploitability),
            solver_iterations=int(res.iterations),
            solves_cum=self.n_solves,
            trusted=trusted,
            regularized=regularized,
            solve=res,
        )

    def __call__(self, theta) -> float:
        return self.evaluate(theta).f_star


class _Counted:
    """Wraps a plain callable so baselines can count and log invocations."""

    def __init__(self, fn):
        self.fn = fn
        self.log: list[tuple[np.ndarray, float]] = []

    def __call__(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float)).copy()
        value = float(self.fn(theta))
        self.log.append((theta, value))
        return value


# ---------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class StepSchedule:
    """``beta_k = base / (k + 1)^decay`` with ``base = 1/lipschitz`` when a surrogate is given.

    ``backtracking`` halves the step (persistently) whenever the trial point
    increases ``f*`` by more than ``f_tol``, which should sit above the noise
    level of ``f*`` left by the lower-level tolerance.
    """

    beta: float = 1.0
    lipschitz: float | None = None
    decay: float = 0.0
    backtracking: bool = True
    max_halvings: int = 30
    f_tol: float = 1e-6

    def __post_init__(self):
        if self.beta < 0 or (self.lipschitz is not None and self.lipschitz <= 0):
            raise DomainError("step size must be non-negative and the Lipschitz surrogate positive")

    def base(self) -> float:
        return 1.0 / self.lipschitz if self.lipschitz is not None else self.beta

    def __call__(self, k: int) -> float:
        return self.base() / (k + 1) ** self.decay


@dataclass
class ArbitrationRecord:
    k: int
    theta: np.ndarray
    f_star: float
    grad: np.ndarray
    grad_norm: float
    solver_iterations: int
    exploitability: float
    certified: bool
    trusted: bool
    regularized: bool
    step: float
    wall_clock: float
    solves_cum: int

    def to_dict(self):
        out = asdict(self)
        del out["wall_clock"]  # timings live outside the reproducible outputs
        out["theta"] = self.theta.tolist()
        out["grad"] = self.grad.tolist()
        return out


@dataclass
class SolveRow:
    """One equilibrium solve, as written to the flat CSV."""

    method: str
    k: int
    theta: np.ndarray
    f_star: float
    grad_norm: float
    solves_cum: int
    accepted: bool = True


def _rows_to_csv(rows, n_params, stream):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(csv_header(n_params))
    for r in rows:
        gn = "" if not np.isfinite(r.grad_norm) else repr(float(r.grad_norm))
        writer.writerow([r.method, r.k, *(repr(float(t)) for t in r.theta), repr(float(r.f_star)), gn, r.solves_cum])


def _efficiency(rows):
    best, curve = math.inf, []
    for r in rows:
        best = min(best, r.f_star)
        curve.append((r.solves_cum, r.f_star, best))
    return curve


def _solves_to_within(rows, target, delta):
    for r in rows:
        if r.f_star <= target + delta:
            return r.solves_cum
    return None


@dataclass
class ArbitrationHistory:
    records: list[ArbitrationRecord]
    rows: list[SolveRow]
    config: dict = field(default_factory=dict)
    method: str = "da"

    @property
    def thetas(self) -> np.ndarray:
        return np.array([r.theta for r in self.records])

    @property
    def f_values(self) -> np.ndarray:
        return np.array([r.f_star for r in self.records])

    @property
    def grad_norms(self) -> np.ndarray:
        return np.array([r.grad_norm for r in self.records])

    @property
    def n_solves(self) -> int:
        return self.records[-1].solves_cum if self.records else 0

    @property
    def n_params(self) -> int:
        return len(self.records[0].theta)

    def efficiency_curve(self):
        """``(solves_cum, f_star, best f_star so far)`` for every solve, rejected trials included."""
        return _efficiency(self.rows)

    def solves_to_within(self, target, delta):
        return _solves_to_within(self.rows, target, delta)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "method": self.method,
            "config": self.config,
            "records": [r.to_dict() for r in self.records],
            "n_solves": self.n_solves,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        _rows_to_csv(self.rows, self.n_params, buf)
        return buf.getvalue()


@dataclass
class BaselineResult:
    method: str
    points: list[tuple[np.ndarray, float]]
    best_theta: np.ndarray
    best_f: float
    n_solves: int
    wall_clock: float = 0.0
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_log(cls, method, log, wall_clock=0.0, **extra):
        if not log:
            raise DomainError("baseline evaluated no points")
        i = int(np.argmin([f for _, f in log]))
        return cls(method, list(log), log[i][0], log[i][1], len(log), wall_clock, extra)

    @property
    def rows(self) -> list[SolveRow]:
        return [SolveRow(self.method, i, t, f, math.nan, i + 1) for i, (t, f) in enumerate(self.points)]

    @property
    def n_params(self) -> int:
        return len(self.best_theta)

    def efficiency_curve(self):
        return _efficiency(self.rows)

    def solves_to_within(self, target, delta):
        return _solves_to_within(self.rows, target, delta)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "method": self.method,
            "points": [{"theta": t.tolist(), "f_star": f} for t, f in self.points],
            "best_theta": self.best_theta.tolist(),
            "best_f": self.best_f,
            "n_solves": self.n_solves,
            "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        _rows_to_csv(self.rows, self.n_params, buf)
        return buf.getvalue()


# ---------------------------------------------------------------------------
# DA


def _project(theta, bounds):
    return np.clip(theta, bounds[:, 0], bounds[:, 1])


def da_run(
    game,
    scheme,
    objective,
    theta0,
    solve_config: SolveConfig,
    step_schedule: StepSchedule = StepSchedule(),
    K: int = 50,
    warm_start: bool = True,
    grad_mode: str = "stationary",
    nu=None,
    max_retries: int = 3,
    grad_tol: float = 0.0,
    callback=None,
) -> ArbitrationHistory:
    """Projected gradient descent on ``f*(theta)`` through the implicit designer gradient.

    The history holds ``K + 1`` records (``theta_0`` through ``theta_K``),
    each backed by its own equilibrium solve.  Rejected backtracking trials
    and non-certified retries are extra solves and appear only in ``rows``.
    The loop stops early once ``||grad f*|| <= grad_tol``.
    """
    if K < 1:
        raise DomainError("K must be at least 1")
    bounds = np.asarray(scheme.theta_bounds, dtype=float)
    theta = scheme.check_theta(theta0)
    ev = UpperEvaluator(game, scheme, objective, solve_config, grad_mode, nu)
    start = time.perf_counter()
    records: list[ArbitrationRecord] = []
    rows: list[SolveRow] = []

    def record(k, e, step):
        rec = ArbitrationRecord(
            k,
            e.theta,
            e.f_star,
            e.grad,
            e.grad_norm,
            e.solver_iterations,
            e.exploitability,
            e.certified,
            e.trusted,
            e.regularized,
            step,
            time.perf_counter() - start,
            e.solves_cum,
        )
        records.append(rec)
        if callback:
            callback(rec)

    def solve(k, point, warm):
        e = ev.evaluate(point, with_gradient=True, warm=warm)
        rows.append(SolveRow("da", k, e.theta, e.f_star, e.grad_norm, e.solves_cum, accepted=False))
        return e

    cur = solve(0, theta, None)
    rows[-1].accepted = True
    record(0, cur, 0.0)
    scale = 1.0
    for k in range(1, K + 1):
        if grad_tol > 0 and cur.grad_norm <= grad_tol:
            break
        beta = step_schedule(k - 1) * scale
        if not cur.trusted:
            beta *= 0.5
        warm = cur.solve if warm_start else None
        halvings = retries = 0
        while True:
            trial_theta = _project(cur.theta - beta * cur.grad, bounds)
            trial = solve(k, trial_theta, warm)
            if not trial.certified and retries < max_retries:
                retries += 1
                beta *= 0.5
                continue
            increase = trial.f_star > cur.f_star + step_schedule.f_tol
            if step_schedule.backtracking and increase and halvings < step_schedule.max_halvings:
                halvings += 1
                beta *= 0.5
                scale *= 0.5
                continue
            break
        rows[-1].accepted = True
        record(k, trial, beta)
        cur = trial
    config = {
        "theta0": np.asarray(theta0, dtype=float).tolist(),
        "K": K,
        "step_schedule": asdict(step_schedule),
        "solve_config": solve_config.to_dict(),
        "warm_start": warm_start,
        "grad_mode": grad_mode,
        "max_retries": max_retries,
    }
    return ArbitrationHistory(records, rows, config)


# ---------------------------------------------------------------------------
# baselines


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned grid: ``n_points`` per axis, or a fixed ``step`` anchored at the lower bound."""

    bounds: tuple
    n_points: int | None = None
    step: float | None = None

    def axes(self):
        bounds = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
        out = []
        for lo, hi in bounds:
            if self.step is not None:
                n = int(math.floor((hi - lo) / self.step + 1e-9)) + 1
                out.append(lo + self.step * np.arange(n))
            else:
                out.append(np.linspace(lo, hi, self.n_points))
        return out

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def grid_search(evaluator, grid_spec: GridSpec) -> BaselineResult:
    """Evaluate ``f*`` at every grid point (one solve each) and return the argmin."""
    fn = _Counted(evaluator)
    t0 = time.perf_counter()
    for p in grid_spec.points():
        fn(p)
    return BaselineResult.from_log("grid", fn.log, time.perf_counter() - t0)


def two_stage_grid_search(evaluator, bounds, coarse_step=0.05, fine_step=0.005) -> BaselineResult:
    """Coarse grid, then a fine grid on the coarse cells around the coarse argmin.

    Fine points sit on the lattice ``lo + i * fine_step`` so they coincide
    with a single-stage fine grid; points already evaluated are not re-solved.
    """
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    ratio = int(round(coarse_step / fine_step))
    if not math.isclose(ratio * fine_step, coarse_step, rel_tol=1e-9):
        raise DomainError("coarse_step must be an integer multiple of fine_step")
    fn = _Counted(evaluator)
    t0 = time.perf_counter()
    seen: dict[tuple, float] = {}

    def visit(idx):
        key = tuple(int(i) for i in idx)
        if key not in seen:
            seen[key] = fn(bounds[:, 0] + fine_step * np.asarray(key, dtype=float))
        return seen[key]

    n_fine = [int(math.floor((hi - lo) / fine_step + 1e-9)) for lo, hi in bounds]
    coarse_axes = [np.arange(0, n + 1, ratio) for n in n_fine]
    coarse = np.stack([m.ravel() for m in np.meshgrid(*coarse_axes, indexing="ij")], axis=1)
    best = min(coarse, key=lambda idx: (visit(idx), tuple(idx)))
    fine_axes = [np.arange(max(0, b - ratio), min(n, b + ratio) + 1) for b, n in zip(best, n_fine)]
    for idx in np.stack([m.ravel() for m in np.meshgrid(*fine_axes, indexing="ij")], axis=1):
        visit(idx)
    return BaselineResult.from_log(
        "grid2", fn.log, time.perf_counter() - t0, coarse_step=coarse_step, fine_step=fine_step
    )


def random_search(evaluator, bounds, n, seed=0) -> BaselineResult:
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    rng = np.random.default_rng(seed)
    fn = _Counted(evaluator)
    t0 = time.perf_counter()
    for u in rng.random((n, len(bounds))):
        fn(bounds[:, 0] + u * (bounds[:, 1] - bounds[:, 0]))
    return BaselineResult.from_log("random", fn.log, time.perf_counter() - t0)


def bayes_opt(evaluator, bounds, n_init=4, n_iter=10, seed=0) -> BaselineResult:
    """GP-EI Bayesian optimization; ``n_init + n_iter`` solves in total."""
    fn = _Counted(evaluator)
    t0 = time.perf_counter()
    _, _, trace = minimize_ei(fn, bounds, n_init=n_init, n_iter=n_iter, seed=seed)
    return BaselineResult.from_log(
        "bayes",
        fn.log,
        time.perf_counter() - t0,
        length_scales=trace.length_scales,
        jitter_events=int(trace.jitter_events),
    )


# ---------------------------------------------------------------------------
# convergence monitoring


@dataclass
class ConvergenceReport:
    """Running-min gradient curve against the ``C / (k+1)`` envelope.

    ``C = 2 L_eff (f_0 - f_min)`` with ``L_eff = max(L_hat, 1 / beta_min)``:
    the descent-lemma constant for steps no larger than ``1/L``, which
    reduces to ``2 L (f_0 - f_min)`` when ``beta = 1/L``.  ``L_hat`` is the
    largest secant slope of the recorded gradients.
    """

    k: np.ndarray
    running_min: np.ndarray
    C: float
    L_hat: float
    beta_min: float
    envelope: np.ndarray
    violations: int
    violation_fraction: float
    efficiency: list

    def to_dict(self):
        return {
            "k": self.k.tolist(),
            "running_min": self.running_min.tolist(),
            "C": self.C,
            "L_hat": self.L_hat,
            "beta_min": self.beta_min,
            "envelope": self.envelope.tolist(),
            "violations": self.violations,
            "violation_fraction": self.violation_fraction,
            "efficiency": [list(p) for p in self.efficiency],
        }


def lipschitz_estimate(thetas, grads) -> float:
    """Largest ``||g_i - g_j|| / ||theta_i - theta_j||`` over distinct recorded points."""
    thetas, grads = np.asarray(thetas, dtype=float), np.asarray(grads, dtype=float)
    dt = np.linalg.norm(thetas[:, None] - thetas[None], axis=-1)
    dg = np.linalg.norm(grads[:, None] - grads[None], axis=-1)
    mask = dt > 1e-12
    return float(np.max(dg[mask] / dt[mask])) if mask.any() else math.nan


def convergence_report(history: ArbitrationHistory) -> ConvergenceReport:
    if not history.records:
        raise DomainError("empty history")
    g2 = history.grad_norms**2
    running = np.minimum.accumulate(g2)
    k = np.arange(len(g2))
    L_hat = lipschitz_estimate(history.thetas, [r.grad for r in history.records])
    steps = [r.step for r in history.records[1:] if r.step > 0]
    beta_min = min(steps) if steps else math.nan
    L_eff = np.nanmax([L_hat, 1.0 / beta_min if steps else math.nan]) if len(g2) > 1 else math.nan
    drop = float(history.f_values[0] - history.f_values.min())
    C = float(2.0 * L_eff * drop) if np.isfinite(L_eff) else math.nan
    envelope = C / (k + 1) if np.isfinite(C) else np.full(len(k), math.nan)
    # tiny slack absorbs round-off once the gradient has reached machine zero
    viol = int(np.sum(~(running <= envelope * (1 + 1e-9) + 1e-20)))
    return ConvergenceReport(
        k, running, C, L_hat, beta_min, envelope, viol, viol / len(k), history.efficiency_curve()
    )
