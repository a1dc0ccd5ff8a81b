"""Random search for parameter sets resolving to each (ordering, case).

For every hit the script also measures the Monte Carlo cost (mean Euler steps
per path over the acceptance starting points), since curated instances must be
cheap enough to simulate. Output: one JSON object per line.

    python scripts/search_instances.py --n 200 --seed 1 > hits.jsonl
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from hybriddiv.errors import HybridDivError
from hybriddiv.model import make_params
from hybriddiv.simulate import SimConfig, simulate_paths
from hybriddiv.smoothfit import classify_and_solve


def sample(rng: np.random.Generator, args) -> dict:
    mu = np.array([rng.uniform(*args.mu), rng.uniform(*(args.mu2 or args.mu))])
    sigma = [rng.uniform(*args.sigma), rng.uniform(*(args.sigma2 or args.sigma))]
    return {
        "mu": mu.tolist(),
        "sigma": sigma,
        "lambda": rng.uniform(*args.lam, 2).tolist(),
        "delta": float(rng.uniform(*args.delta)),
        "rate_cap": float(rng.uniform(*args.cap_frac) * mu.min()),
        "fixed_cost": float(np.exp(rng.uniform(*np.log(args.cost)))),
    }


def mc_cost(params, bundle, n_paths: int) -> float:
    cfg = SimConfig(n_paths=n_paths, seed=7)
    steps = []
    for i in range(2):
        b, B = bundle.thresholds.lower[i], bundle.thresholds.upper[i]
        for x0 in (b / 2, (b + B) / 2, B + 1):
            steps.append(simulate_paths(params, bundle.policy, x0, i, cfg).steps.mean())
    return float(np.mean(steps))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--mu", type=float, nargs=2, default=(0.5, 2.0))
    ap.add_argument("--sigma", type=float, nargs=2, default=(1.0, 3.0))
    ap.add_argument("--mu2", type=float, nargs=2, help="regime-2 drift range (default: --mu)")
    ap.add_argument("--sigma2", type=float, nargs=2, help="regime-2 volatility range (default: --sigma)")
    ap.add_argument("--lam", type=float, nargs=2, default=(0.2, 3.0))
    ap.add_argument("--delta", type=float, nargs=2, default=(0.3, 1.5))
    ap.add_argument("--cap-frac", type=float, nargs=2, default=(0.1, 0.9))
    ap.add_argument("--cost", type=float, nargs=2, default=(0.05, 5.0))
    ap.add_argument("--mc-paths", type=int, default=500, help="0 skips the cost estimate")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    for k in range(args.n):
        doc = sample(rng, args)
        params = make_params(doc["mu"], doc["sigma"], doc["lambda"], doc["delta"],
                             doc["rate_cap"], doc["fixed_cost"])
        t0 = time.perf_counter()
        try:
            bundle = classify_and_solve(params)
        except HybridDivError as exc:
            print(json.dumps({"k": k, "params": doc, "result": type(exc).__name__}), flush=True)
            continue
        out = {
            "k": k,
            "params": doc,
            "result": "ok",
            "ordering": bundle.ordering.value,
            "case": bundle.case.value,
            "i0": bundle.i0,
            "thresholds": bundle.thresholds.to_dict(),
            "solve_seconds": time.perf_counter() - t0,
        }
        if args.mc_paths:
            out["mean_steps"] = mc_cost(params, bundle, args.mc_paths)
        print(json.dumps(out), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
