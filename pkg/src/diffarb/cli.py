"""``diffarb`` command-line front end.

Subcommands::

    diffarb solve      --config c.json --out runs/x   # ne.json + certificate
    diffarb gradcheck  --config c.json --out runs/x   # gradcheck.json, exit 1 on breach
    diffarb arbitrate  --config c.json --out runs/x   # history.csv/json + plotdata/
    diffarb env export --config c.json --out runs/x   # game.json in the interchange format

Every run writes ``config.resolved.json`` first.  JSON outputs are
byte-identical across reruns with the same config and seed; timings go to
the separate ``timing.json``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .arbitration import (
    SCHEMA_VERSION,
    GridSpec,
    StepSchedule,
    UpperEvaluator,
    bayes_opt,
    convergence_report,
    da_run,
    grid_search,
    random_search,
    two_stage_grid_search,
)
from .config import build_env, build_objective, derive_seed, load_config, solve_config_for, theta0_for
from .errors import ConvergenceError
from .game import dump_game, exploitability_from_probs, reward_tensor
from .gradcheck import run_gradcheck
from .mg_solvers import nash_solve

PLOTDATA_COLUMNS = ("solves", "f_star", "best_f_star")


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _prepare(args):
    cfg = load_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "config.resolved.json", cfg.to_json())
    return cfg, out


# ---------------------------------------------------------------------------
# solve


def cmd_solve(args) -> int:
    cfg, out = _prepare(args)
    env = build_env(cfg.env, cfg.seed)
    solve_cfg = solve_config_for(cfg, env.game)
    theta = theta0_for(cfg, env.scheme)
    status = 0
    try:
        res = nash_solve(env.game, env.scheme, theta, solve_cfg)
    except ConvergenceError as err:
        res, status = err.result, 1
    r = reward_tensor(env.game, env.scheme, theta)
    unreg = exploitability_from_probs(env.game, r, res.pi1, res.pi2, 0.0, math.inf)
    doc = res.to_dict()
    doc.update(schema_version=SCHEMA_VERSION, theta=theta.tolist(), lam=solve_cfg.lam, unregularized_exploitability=unreg)
    _write(out / "ne.json", _dump(doc))
    _write(out / "timing.json", _dump({"solve_seconds": res.wall_clock}))
    if not res.certified:
        status = 1
    print(f"lam = {solve_cfg.lam:.6g}")
    print(f"regularized exploitability = {res.exploitability:.3e} (tol {solve_cfg.tol:.1e}, certified={res.certified})")
    print(f"unregularized exploitability = {unreg:.6g}")
    return status


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    cfg, out = _prepare(args)
    env = build_env(cfg.env, cfg.seed)
    objective = None
    if cfg.objective["kind"] != "default" or env.default_objective is not None:
        objective = build_objective(cfg.objective, env, cfg.seed)
    solve_cfg = solve_config_for(cfg, env.game)
    report = run_gradcheck(env.game, env.scheme, cfg.gradcheck, objective, solve_cfg)
    doc = {"schema_version": SCHEMA_VERSION, **report.to_dict()}
    _write(out / "gradcheck.json", _dump(doc))
    for note in report.notes:
        print(f"note: {note}")
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: max rel error {c.max_error:.3e} (threshold {c.threshold:.0e})")
    if report.passed:
        return 0
    for name, err, thr, idx in report.failures():
        print(f"offending {name}: {err:.3e} > {thr:.0e} at entries {idx[:20]}", file=sys.stderr)
    return 1


# ---------------------------------------------------------------------------
# arbitrate


class _PoolEvaluator:
    """Picklable evaluator for parallel grid search (cold solves only)."""

    def __init__(self, env_spec, objective_spec, seed, solve_cfg):
        self.args = (env_spec, objective_spec, seed, solve_cfg)
        self._ev = None

    def __call__(self, theta):
        if self._ev is None:
            env_spec, objective_spec, seed, solve_cfg = self.args
            env = build_env(env_spec, seed)
            obj = build_objective(objective_spec, env, seed)
            self._ev = UpperEvaluator(env.game, env.scheme, obj, solve_cfg)
        return self._ev(theta)

    def __getstate__(self):
        return {"args": self.args, "_ev": None}


def _grid(cfg, evaluator, bounds, threads, pool_eval):
    g = cfg.grid
    if g["two_stage"]:
        return two_stage_grid_search(evaluator, bounds, g["coarse_step"], g["fine_step"])
    spec = GridSpec(tuple(map(tuple, bounds)), n_points=g["n_points"], step=g["step"])
    if threads <= 1:
        return grid_search(evaluator, spec)
    with ProcessPoolExecutor(max_workers=threads) as pool:
        values = list(pool.map(pool_eval, spec.points()))
    lookup = {tuple(p): v for p, v in zip(spec.points().tolist(), values)}
    return grid_search(lambda th: lookup[tuple(np.asarray(th).tolist())], spec)


def _plotdata_csv(curve) -> str:
    lines = [",".join(PLOTDATA_COLUMNS)]
    for solves, f, best in curve:
        lines.append(f"{solves},{float(f)!r},{float(best)!r}")
    return "\n".join(lines) + "\n"


def cmd_arbitrate(args) -> int:
    cfg, out = _prepare(args)
    env = build_env(cfg.env, cfg.seed)
    bounds = np.asarray(env.scheme.theta_bounds, dtype=float)
    if bounds.shape[0] == 0:
        print("no incentive parameters: nothing to arbitrate", file=sys.stderr)
        return 2
    objective = build_objective(cfg.objective, env, cfg.seed)
    solve_cfg = solve_config_for(cfg, env.game)
    methods = ["da", "grid", "bayes"] if cfg.method == "compare" else [cfg.method]
    results, timing, csv_parts, json_doc = {}, {}, [], {"schema_version": SCHEMA_VERSION, "runs": {}}
    for method in methods:
        t0 = time.perf_counter()
        if method == "da":
            res = da_run(
                env.game,
                env.scheme,
                objective,
                theta0_for(cfg, env.scheme),
                solve_cfg,
                StepSchedule(**cfg.step),
                cfg.K,
                warm_start=cfg.warm_start,
                grad_mode=cfg.grad_mode,
            )
            doc = res.to_dict()
            doc["convergence"] = convergence_report(res).to_dict()
        else:
            evaluator = UpperEvaluator(env.game, env.scheme, objective, solve_cfg)
            if method == "grid":
                pool_eval = _PoolEvaluator(cfg.env, cfg.objective, cfg.seed, solve_cfg)
                res = _grid(cfg, evaluator, bounds, args.threads, pool_eval)
            elif method == "bayes":
                res = bayes_opt(evaluator, bounds, cfg.n_init, cfg.n_iter, derive_seed(cfg.seed, "bayes") % 2**32)
            else:
                res = random_search(evaluator, bounds, cfg.n_random, derive_seed(cfg.seed, "random") % 2**32)
            doc = res.to_dict()
        timing[method] = time.perf_counter() - t0
        results[method] = res
        json_doc["runs"][method] = doc
        text = res.to_csv()
        csv_parts.append(text if not csv_parts else text.split("\n", 1)[1])
        _write(out / "plotdata" / f"{method}.csv", _plotdata_csv(res.efficiency_curve()))
    _write(out / "history.csv", "".join(csv_parts))
    _write(out / "history.json", _dump(json_doc))
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "columns": list(PLOTDATA_COLUMNS),
        "files": {m: f"{m}.csv" for m in methods},
        "description": "cumulative equilibrium solves against designer loss f* and its running minimum",
    }
    _write(out / "plotdata" / "manifest.json", _dump(manifest))
    _write(out / "timing.json", _dump({f"{m}_seconds": t for m, t in timing.items()}))
    for method, res in results.items():
        if method == "da":
            print(f"da: f* {res.f_values[0]:.6g} -> {res.f_values[-1]:.6g} at theta {res.thetas[-1].tolist()} ({res.n_solves} solves)")
        else:
            print(f"{method}: best f* {res.best_f:.6g} at theta {res.best_theta.tolist()} ({res.n_solves} solves)")
    return 0


# ---------------------------------------------------------------------------
# env export


def cmd_env_export(args) -> int:
    cfg, out = _prepare(args)
    env = build_env(cfg.env, cfg.seed)
    _write(out / "game.json", json.dumps(dump_game(env.game, env.scheme)) + "\n")
    print(f"{env.game.n_states} states, actions {env.game.n_actions_1}x{env.game.n_actions_2}, {env.scheme.n_params} incentive parameters")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON); defaults apply when omitted")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    common.add_argument("--out", default="runs/latest", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker processes for grid-search evaluations")
    parser = argparse.ArgumentParser(prog="diffarb", description="Differentiable arbitrating on tabular zero-sum Markov games")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve the regularized equilibrium").set_defaults(fn=cmd_solve)
    sub.add_parser("gradcheck", parents=[common], help="finite-difference validation matrix").set_defaults(fn=cmd_gradcheck)
    sub.add_parser("arbitrate", parents=[common], help="run DA or a baseline").set_defaults(fn=cmd_arbitrate)
    env = sub.add_parser("env", help="environment utilities")
    env_sub = env.add_subparsers(dest="env_command", required=True)
    env_sub.add_parser("export", parents=[common], help="write the built game as JSON").set_defaults(fn=cmd_env_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return int(args.fn(args))


if __name__ == "__main__":
    sys.exit(main())
