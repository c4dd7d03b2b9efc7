"""Run the DA vs grid vs BayesOpt comparison on the synthetic instance and RWS-lite.

Writes one run directory per instance under ``--out`` (default ``runs/``) and
prints the solve counts each method needs to get within ``--delta`` of the
grid optimum.  The RWS-lite grid takes a few minutes; pass ``--threads`` to
spread it over worker processes.
"""

import argparse
import json
from pathlib import Path

from diffarb.cli import main as cli_main

ROOT = Path(__file__).resolve().parents[1]
RUNS = {
    "synthetic": {"env": {"kind": "synthetic"}, "solver": {"tol": 1e-12}, "method": "compare", "theta0": [0.0], "K": 20, "step": {"beta": 2.0}},
    "rws_lite": json.loads((ROOT / "configs" / "rws_lite.json").read_text()),
}


def solves_to(curve, target, delta):
    return next((int(n) for n, _, best in curve if best <= target + delta), None)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--delta", type=float, default=0.01)
    args = parser.parse_args()
    for name, config in RUNS.items():
        out = Path(args.out) / name
        out.mkdir(parents=True, exist_ok=True)
        path = out / "input.json"
        path.write_text(json.dumps(config, indent=2) + "\n")
        cli_main(["arbitrate", "--config", str(path), "--out", str(out), "--threads", str(args.threads)])
        curves = {}
        for method in ("da", "grid", "bayes"):
            rows = (out / "plotdata" / f"{method}.csv").read_text().splitlines()[1:]
            curves[method] = [tuple(float(v) for v in row.split(",")) for row in rows]
        target = min(best for _, _, best in curves["grid"])
        counts = {m: solves_to(c, target, args.delta) for m, c in curves.items()}
        print(f"{name}: grid best {target:.6g}; solves to within {args.delta}: {counts}")


if __name__ == "__main__":
    main()
