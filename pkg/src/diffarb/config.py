"""Experiment configuration: schema, default materialization and object construction.

A config is a JSON object with the top-level keys listed in
``ExperimentConfig``.  Unknown keys are rejected.  ``resolve_config`` fills
every default so that ``config.resolved.json`` reproduces a run on its own.

Seeds: one master ``seed``.  Each consumer draws its own stream from
``derive_seed(seed, name)``, the first 8 bytes of ``sha256(f"{seed}:{name}")``
read as a big-endian unsigned integer.  Streams therefore do not depend on
evaluation order or on the number of worker processes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .environments import ExplorationObjective, PpConfig, RwsConfig, build_pp, build_rws, pp_lite_config, rws_lite_config
from .errors import DomainError
from .game import IncentiveScheme, load_game
from .implicit import PolicyTargetObjective
from .instances import RPS, canonical_game, random_game, replicated_rps, stage_game
from .mg_solvers import SolveConfig, lam_for_epsilon

ENV_KINDS = ("synthetic", "rws", "pp", "canonical", "rps", "random", "file")
METHODS = ("da", "grid", "bayes", "random", "compare")


def derive_seed(master: int, name: str) -> int:
    digest = hashlib.sha256(f"{int(master)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _tupleize(x):
    if isinstance(x, list):
        return tuple(_tupleize(v) for v in x)
    return x


def _listify(x):
    if isinstance(x, (tuple, list)):
        return [_listify(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    return x


def _check_keys(section, data, allowed):
    extra = set(data) - set(allowed)
    if extra:
        raise DomainError(f"unknown keys in {section}: {sorted(extra)}")


# ---------------------------------------------------------------------------
# environment specs

_SYNTHETIC_DEFAULTS = {"lam": 0.5, "p_target": 0.7, "penalty": 0.02, "bounds": [-1.0, 1.0]}
_CANONICAL_DEFAULTS = {"horizon": 3, "gamma": 0.8}
_RPS_DEFAULTS = {"n_states": 1, "gamma": 0.9, "horizon": 3}
_RANDOM_DEFAULTS = {"n_states": 3, "n_actions": [2, 2], "gamma": 0.9, "horizon": 3, "n_params": 0, "reward_scale": 0.5}


def _resolve_env(env: dict) -> dict:
    env = dict(env)
    kind = env.pop("kind", None)
    if kind not in ENV_KINDS:
        raise DomainError(f"env.kind must be one of {ENV_KINDS}, got {kind!r}")
    if kind in ("rws", "pp"):
        preset = env.pop("preset", "lite")
        if preset not in ("lite", "default"):
            raise DomainError("env.preset must be 'lite' or 'default'")
        cls = RwsConfig if kind == "rws" else PpConfig
        names = {f.name for f in dataclasses.fields(cls)}
        _check_keys("env", env, names)
        overrides = {k: _tupleize(v) for k, v in env.items()}
        if preset == "lite":
            cfg = (rws_lite_config if kind == "rws" else pp_lite_config)(**overrides)
        else:
            cfg = cls(**overrides)
        return {"kind": kind, "preset": preset, **_listify(asdict(cfg))}
    if kind == "file":
        _check_keys("env", env, {"path"})
        if "path" not in env or not Path(env["path"]).exists():
            raise DomainError(f"env.path does not exist: {env.get('path')!r}")
        return {"kind": kind, "path": str(env["path"])}
    defaults = {
        "synthetic": _SYNTHETIC_DEFAULTS,
        "canonical": _CANONICAL_DEFAULTS,
        "rps": _RPS_DEFAULTS,
        "random": _RANDOM_DEFAULTS,
    }[kind]
    _check_keys("env", env, defaults)
    return {"kind": kind, **defaults, **_listify(env)}


@dataclass
class BuiltEnv:
    game: object
    scheme: IncentiveScheme
    world: object = None
    default_objective: object = None
    default_lam: float | None = None


def build_env(env: dict, seed: int = 0) -> BuiltEnv:
    """Instantiate a resolved environment spec."""
    kind = env["kind"]
    params = {k: v for k, v in env.items() if k not in ("kind", "preset")}
    if kind == "synthetic":
        from .arbitration import SyntheticInstance

        inst = SyntheticInstance(params["lam"], params["p_target"], params["penalty"], tuple(params["bounds"]))
        game, scheme, obj = inst.build()
        return BuiltEnv(game, scheme, default_objective=obj, default_lam=inst.lam)
    if kind in ("rws", "pp"):
        cfg = (RwsConfig if kind == "rws" else PpConfig)(**{k: _tupleize(v) for k, v in params.items()})
        world = (build_rws if kind == "rws" else build_pp)(cfg)
        return BuiltEnv(world.game, world.scheme, world, ExplorationObjective(world))
    if kind == "canonical":
        return BuiltEnv(*canonical_game(params["horizon"], params["gamma"]))
    if kind == "rps":
        if params["n_states"] == 1:
            return BuiltEnv(*stage_game(RPS, gamma=params["gamma"], horizon=params["horizon"]))
        return BuiltEnv(*replicated_rps(params["n_states"], params["gamma"], params["horizon"]))
    if kind == "random":
        rng = np.random.default_rng(derive_seed(seed, "env"))
        game, scheme = random_game(
            rng,
            params["n_states"],
            tuple(params["n_actions"]),
            params["gamma"],
            params["horizon"],
            params["n_params"],
            params["reward_scale"],
        )
        return BuiltEnv(game, scheme)
    return BuiltEnv(*load_game(params["path"]))


# ---------------------------------------------------------------------------
# objectives


_OBJECTIVE_KEYS = {
    "default": set(),
    "policy_target": {"state", "action", "player", "target", "theta_weight", "theta_center"},
    "exploration": {"budget", "union"},
}


def _resolve_objective(obj: dict) -> dict:
    obj = dict(obj)
    kind = obj.pop("kind", "default")
    if kind not in _OBJECTIVE_KEYS:
        raise DomainError(f"objective.kind must be one of {sorted(_OBJECTIVE_KEYS)}")
    _check_keys("objective", obj, _OBJECTIVE_KEYS[kind])
    if kind == "policy_target":
        obj = {"state": 0, "action": 0, "player": 1, "target": 0.5, "theta_weight": 0.0, "theta_center": 0.0, **obj}
    elif kind == "exploration":
        obj = {"budget": None, "union": True, **obj}
    return {"kind": kind, **_listify(obj)}


def build_objective(spec: dict, built: BuiltEnv, seed: int = 0):
    kind = spec["kind"]
    if kind == "default":
        if built.default_objective is None:
            raise DomainError("this environment has no default objective; set objective.kind")
        return built.default_objective
    if kind == "policy_target":
        args = {k: v for k, v in spec.items() if k != "kind"}
        args["theta_center"] = np.asarray(args["theta_center"], dtype=float)
        return PolicyTargetObjective(**args)
    if built.world is None:
        raise DomainError("the exploration objective needs a grid-world environment")
    return ExplorationObjective(built.world, spec["budget"], derive_seed(seed, "exploration"), spec["union"])


# ---------------------------------------------------------------------------
# the experiment config


@dataclass
class ExperimentConfig:
    """Everything a CLI run needs.

    Attributes:
        env: resolved environment spec (``kind`` plus builder parameters).
        solver: :class:`SolveConfig` fields; ``lam`` may be ``null`` together
            with ``epsilon`` to use the epsilon-NE regularization rule.
        epsilon: target unregularized exploitability used when ``solver.lam``
            is ``null``.
        objective: designer objective spec.
        method: ``da``, ``grid``, ``bayes``, ``random`` or ``compare``.
        theta0: DA start point and the ``solve`` evaluation point (default:
            the lower corner of the box).
        grid: ``n_points`` per axis, or ``step``, or ``two_stage`` with
            ``coarse_step`` / ``fine_step``.
        K: DA outer iterations.
        n_init, n_iter: BayesOpt budget.
        n_random: random-search budget.
        step: :class:`StepSchedule` fields.
        warm_start: warm-start DA's lower level from the previous equilibrium.
        grad_mode: value-derivative route for the implicit system.
        gradcheck: thresholds and options of the ``gradcheck`` command.
        seed: master seed.
    """

    env: dict = field(default_factory=lambda: {"kind": "synthetic"})
    solver: dict = field(default_factory=dict)
    epsilon: float | None = None
    objective: dict = field(default_factory=lambda: {"kind": "default"})
    method: str = "da"
    theta0: list | None = None
    grid: dict = field(default_factory=dict)
    K: int = 20
    n_init: int = 3
    n_iter: int = 12
    n_random: int = 15
    step: dict = field(default_factory=dict)
    warm_start: bool = True
    grad_mode: str = "stationary"
    gradcheck: dict = field(default_factory=dict)
    seed: int = 0

    def to_dict(self):
        return _listify(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_GRID_DEFAULTS = {"n_points": 100, "step": None, "two_stage": False, "coarse_step": 0.05, "fine_step": 0.005}
_STEP_DEFAULTS = {"beta": 1.0, "lipschitz": None, "decay": 0.0, "backtracking": True, "max_halvings": 30, "f_tol": 1e-6}
GRADCHECK_DEFAULTS = {
    "lam": 0.3,
    "theta": None,
    "policy_seed": 7,
    "policy_scale": 0.8,
    "fd_step": 1e-5,
    "value_threshold": 1e-6,
    "dp_threshold": 1e-8,
    "implicit": True,
    "implicit_step": 1e-4,
    "implicit_threshold": 0.05,
    "implicit_tol": 1e-11,
    "max_coords": 16,
    "term_weights": [1.0, 1.0, 1.0, 1.0, 1.0],
}


def resolve_config(raw: dict | None = None, seed: int | None = None) -> ExperimentConfig:
    """Validate ``raw`` and materialize every default."""
    raw = dict(raw or {})
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    _check_keys("config", raw, names)
    raw.pop("schema_version", None)
    cfg = ExperimentConfig(**raw)
    if seed is not None:
        cfg.seed = int(seed)
    cfg.env = _resolve_env(cfg.env)
    cfg.objective = _resolve_objective(cfg.objective)
    if cfg.method not in METHODS:
        raise DomainError(f"method must be one of {METHODS}")
    if cfg.grad_mode not in ("stationary", "dp", "exact", "mc"):
        raise DomainError("grad_mode must be stationary, dp, exact or mc")
    _check_keys("grid", cfg.grid, _GRID_DEFAULTS)
    cfg.grid = {**_GRID_DEFAULTS, **cfg.grid}
    _check_keys("step", cfg.step, _STEP_DEFAULTS)
    cfg.step = {**_STEP_DEFAULTS, **cfg.step}
    _check_keys("gradcheck", cfg.gradcheck, GRADCHECK_DEFAULTS)
    cfg.gradcheck = {**GRADCHECK_DEFAULTS, **cfg.gradcheck}
    solver_names = {f.name for f in dataclasses.fields(SolveConfig)}
    _check_keys("solver", cfg.solver, solver_names)
    solver = dict(cfg.solver)
    if "lam" not in solver:
        if cfg.env["kind"] == "synthetic":
            solver["lam"] = cfg.env["lam"]
        else:
            solver["lam"] = None if cfg.epsilon is not None else SolveConfig.lam
    if "seed" not in solver:
        solver["seed"] = derive_seed(cfg.seed, "solver") % 2**32
    defaults = {f.name: f.default for f in dataclasses.fields(SolveConfig)}
    cfg.solver = {**defaults, **solver}
    if cfg.solver["lam"] is None and cfg.epsilon is None:
        raise DomainError("solver.lam is null but no epsilon was given")
    if cfg.K < 1 or cfg.n_init < 2 or cfg.n_iter < 0 or cfg.n_random < 1:
        raise DomainError("need K >= 1, n_init >= 2, n_iter >= 0 and n_random >= 1")
    return cfg


def load_config(path: str | Path | None, seed: int | None = None) -> ExperimentConfig:
    raw = json.loads(Path(path).read_text()) if path else {}
    return resolve_config(raw, seed)


def solve_config_for(cfg: ExperimentConfig, game) -> SolveConfig:
    solver = dict(cfg.solver)
    if solver["lam"] is None:
        solver["lam"] = lam_for_epsilon(game, cfg.epsilon)
    return SolveConfig(**solver)


def theta0_for(cfg: ExperimentConfig, scheme) -> np.ndarray:
    if cfg.theta0 is None:
        return np.asarray(scheme.theta_bounds, dtype=float)[:, 0].copy()
    return scheme.check_theta(cfg.theta0)
