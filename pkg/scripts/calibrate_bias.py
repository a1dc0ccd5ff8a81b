"""Calibrate the discrete-monitoring bias constant C in bias_allowance(dt) = C sqrt(dt).

For every curated instance and acceptance starting point the script runs the
simulator at dt = 1e-3 and at a fine step (default 1e-4), and reports

  C_fine     = |m(dt) - m(fine)| / (sqrt(dt) - sqrt(fine))
  C_analytic = (|m(dt) - v(x0)| - 3 hw) / sqrt(dt)

The first is the calibration the allowance is defined by. The second shows how
much allowance the acceptance check actually consumes.

    python scripts/calibrate_bias.py configs/*.json
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from hybriddiv.model import ModelParams
from hybriddiv.simulate import SimConfig, estimate_value
from hybriddiv.smoothfit import classify_and_solve


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="+", type=Path)
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--fine-dt", type=float, default=1e-4)
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--fine-paths", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=99)
    args = ap.parse_args(argv)
    worst_fine = worst_ana = 0.0
    for path in args.configs:
        doc = json.loads(path.read_text())
        params = ModelParams.from_dict(doc["model"])
        bundle = classify_and_solve(params)
        for i in range(2):
            b, B = bundle.thresholds.lower[i], bundle.thresholds.upper[i]
            for x0 in (b / 2, (b + B) / 2, B + 1):
                coarse = estimate_value(params, bundle.policy, x0, i,
                                        SimConfig(n_paths=args.paths, dt=args.dt, seed=args.seed))
                fine = estimate_value(params, bundle.policy, x0, i,
                                      SimConfig(n_paths=args.fine_paths, dt=args.fine_dt, seed=args.seed + 1))
                v = float(bundle.value.eval(x0, i))
                c_fine = abs(coarse.mean - fine.mean) / (math.sqrt(args.dt) - math.sqrt(args.fine_dt))
                c_ana = (abs(coarse.mean - v) - 3 * coarse.half_width) / math.sqrt(args.dt)
                worst_fine, worst_ana = max(worst_fine, c_fine), max(worst_ana, c_ana)
                print(json.dumps({
                    "instance": path.stem, "regime": i + 1, "x0": x0, "value": v,
                    "mean": coarse.mean, "half_width": coarse.half_width,
                    "fine_mean": fine.mean, "fine_half_width": fine.half_width,
                    "C_fine": c_fine, "C_analytic": c_ana,
                }), flush=True)
    print(json.dumps({"max_C_fine": worst_fine, "max_C_analytic": worst_ana}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
