import csv
import json
from pathlib import Path

import numpy as np
import pytest

from diffarb.cli import PLOTDATA_COLUMNS, main
from diffarb.config import GRADCHECK_DEFAULTS, derive_seed, load_config, resolve_config, solve_config_for
from diffarb.errors import DomainError
from diffarb.game import load_game
from diffarb.gradcheck import NO_PARAMS_NOTE

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write_config(tmp_path, doc, name="c.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def _run(*argv):
    return main([str(a) for a in argv])


# ---------------------------------------------------------------------------
# config


def test_defaults_are_materialized():
    cfg = resolve_config({})
    assert cfg.env["kind"] == "synthetic" and cfg.solver["lam"] == 0.5
    assert cfg.step["beta"] == 1.0 and cfg.grid["n_points"] == 100
    assert cfg.gradcheck == GRADCHECK_DEFAULTS
    again = resolve_config(json.loads(cfg.to_json()))
    assert again.to_json() == cfg.to_json()


@pytest.mark.parametrize(
    "doc",
    [
        {"bogus": 1},
        {"env": {"kind": "nope"}},
        {"env": {"kind": "rws", "side_length": 3}},
        {"method": "newton"},
        {"grad_mode": "magic"},
        {"step": {"eta": 1}},
        {"env": {"kind": "canonical"}, "solver": {"lam": None}},
        {"env": {"kind": "file", "path": "/does/not/exist.json"}},
        {"K": 0},
    ],
)
def test_invalid_configs_are_rejected(doc):
    with pytest.raises(DomainError):
        resolve_config(doc)


def test_seed_override_and_derived_streams():
    cfg = resolve_config({"seed": 3}, seed=11)
    assert cfg.seed == 11 and cfg.solver["seed"] == derive_seed(11, "solver") % 2**32
    assert derive_seed(0, "a") == derive_seed(0, "a") != derive_seed(0, "b")
    assert 0 <= derive_seed(1, "bayes") < 2**64


def test_epsilon_rule_fills_lambda():
    cfg = load_config(CONFIGS / "epsilon.json")
    from diffarb.instances import canonical_game

    game, _ = canonical_game()
    lam = solve_config_for(cfg, game).lam
    expected = (1 - game.gamma) * 0.05 / (2 * (np.log(2) + np.log(2)))
    assert lam == pytest.approx(expected, rel=1e-12)


def test_every_shipped_config_resolves():
    for path in sorted(CONFIGS.glob("*.json")):
        load_config(path)


# ---------------------------------------------------------------------------
# solve


def test_solve_rps_is_uniform_and_reproducible(tmp_path):
    for run in ("a", "b"):
        assert _run("solve", "--config", CONFIGS / "rps.json", "--out", tmp_path / run) == 0
    a, b = ((tmp_path / r / "ne.json").read_bytes() for r in ("a", "b"))
    assert a == b
    doc = json.loads(a)
    assert np.allclose(doc["pi1"], 1 / 3, atol=1e-8) and np.allclose(doc["pi2"], 1 / 3, atol=1e-8)
    assert (tmp_path / "a" / "config.resolved.json").exists() and (tmp_path / "a" / "timing.json").exists()


def test_solve_with_epsilon_rule_meets_the_bound(tmp_path, capsys):
    assert _run("solve", "--config", CONFIGS / "epsilon.json", "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "ne.json").read_text())
    assert doc["unregularized_exploitability"] <= 0.05
    assert "unregularized exploitability" in capsys.readouterr().out


def test_solve_without_convergence_exits_nonzero_but_writes(tmp_path):
    path = _write_config(tmp_path, {"env": {"kind": "canonical"}, "solver": {"lam": 0.3, "tol": 1e-14, "max_iter": 2}})
    assert _run("solve", "--config", path, "--out", tmp_path / "run") == 1
    assert json.loads((tmp_path / "run" / "ne.json").read_text())["certified"] is False


def test_rerun_from_resolved_config_is_byte_identical(tmp_path):
    assert _run("solve", "--config", CONFIGS / "canonical.json", "--seed", 4, "--out", tmp_path / "a") == 0
    resolved = tmp_path / "a" / "config.resolved.json"
    assert _run("solve", "--config", resolved, "--out", tmp_path / "b") == 0
    for name in ("ne.json", "config.resolved.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


# ---------------------------------------------------------------------------
# gradcheck


@pytest.mark.parametrize("name", ["canonical", "synthetic", "rps"])
def test_gradcheck_passes_on_shipped_configs(tmp_path, name):
    assert _run("gradcheck", "--config", CONFIGS / f"{name}.json", "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "gradcheck.json").read_text())
    assert doc["passed"] and all(c["passed"] for c in doc["checks"])
    assert all(c["max_rel_error"] <= c["threshold"] for c in doc["checks"])


def test_gradcheck_catches_a_corrupted_hessian_term(tmp_path, capsys):
    doc = json.loads((CONFIGS / "canonical.json").read_text())
    doc["gradcheck"]["term_weights"] = [1.0, 1.0, 0.0, 1.0, 1.0]
    assert _run("gradcheck", "--config", _write_config(tmp_path, doc), "--out", tmp_path / "run") == 1
    assert "offending" in capsys.readouterr().err
    report = json.loads((tmp_path / "run" / "gradcheck.json").read_text())
    assert not report["passed"]


def test_gradcheck_without_parameters_notes_it(tmp_path):
    assert _run("gradcheck", "--config", CONFIGS / "rps.json", "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "gradcheck.json").read_text())
    assert NO_PARAMS_NOTE in doc["notes"]
    assert not any("theta" in c["name"] for c in doc["checks"])


# ---------------------------------------------------------------------------
# arbitrate


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_grid_arbitration_writes_one_row_per_point(tmp_path):
    path = _write_config(tmp_path, {"method": "grid", "grid": {"n_points": 4}})
    assert _run("arbitrate", "--config", path, "--out", tmp_path / "run") == 0
    rows = _read_csv(tmp_path / "run" / "history.csv")
    assert rows[0] == ["method", "k", "theta_0", "f_star", "grad_norm", "solves_cum"]
    assert len(rows) == 1 + 4 and all(r[0] == "grid" for r in rows[1:])
    plot = _read_csv(tmp_path / "run" / "plotdata" / "grid.csv")
    assert tuple(plot[0]) == PLOTDATA_COLUMNS and len(plot) == 5


def test_parallel_grid_matches_serial(tmp_path):
    path = _write_config(tmp_path, {"method": "grid", "grid": {"n_points": 6}})
    assert _run("arbitrate", "--config", path, "--out", tmp_path / "one") == 0
    assert _run("arbitrate", "--config", path, "--out", tmp_path / "two", "--threads", 2) == 0
    for name in ("history.csv", "history.json"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()


def test_da_arbitration_descends_and_is_reproducible(tmp_path):
    for run in ("a", "b"):
        assert _run("arbitrate", "--config", CONFIGS / "synthetic.json", "--out", tmp_path / run) == 0
    doc = json.loads((tmp_path / "a" / "history.json").read_text())
    f = [r["f_star"] for r in doc["runs"]["da"]["records"]]
    assert f[-1] <= f[0]
    manifest = json.loads((tmp_path / "a" / "plotdata" / "manifest.json").read_text())
    assert manifest["columns"] == list(PLOTDATA_COLUMNS)
    for name in ("history.csv", "history.json", "plotdata/da.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_compare_runs_all_three_methods(tmp_path):
    path = _write_config(tmp_path, {"method": "compare", "K": 3, "grid": {"n_points": 5}, "n_init": 2, "n_iter": 2})
    assert _run("arbitrate", "--config", path, "--out", tmp_path / "run") == 0
    doc = json.loads((tmp_path / "run" / "history.json").read_text())
    assert set(doc["runs"]) == {"da", "grid", "bayes"}
    methods = {r[0] for r in _read_csv(tmp_path / "run" / "history.csv")[1:]}
    assert methods == {"da", "grid", "bayes"}
    timing = json.loads((tmp_path / "run" / "timing.json").read_text())
    assert set(timing) == {"da_seconds", "grid_seconds", "bayes_seconds"}


def test_arbitrate_needs_parameters(tmp_path):
    assert _run("arbitrate", "--config", CONFIGS / "rps.json", "--out", tmp_path) == 2


# ---------------------------------------------------------------------------
# env export


def test_env_export_round_trips(tmp_path):
    path = _write_config(tmp_path, {"env": {"kind": "rws", "preset": "lite"}})
    assert _run("env", "export", "--config", path, "--out", tmp_path / "run") == 0
    game, scheme = load_game(tmp_path / "run" / "game.json")
    assert game.n_states == 307 and scheme.n_params == 1
    assert _run("solve", "--config", _write_config(tmp_path, {"env": {"kind": "file", "path": str(tmp_path / "run" / "game.json")}, "solver": {"lam": 0.1}}, "f.json"), "--out", tmp_path / "s") == 0
