"""Command-line entry point: solve, verify, simulate, oracle and compare runs.

Every subcommand reads one JSON config (``--config``) holding a ``model`` block
and optional per-command sections, writes its report and tables to ``--out``,
and returns one of the exit codes below.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .errors import HybridDivError, InvalidStart, NotConverged, NoValidCase, ParameterError
from .model import DividendPolicy, ModelParams, validate
from .valuefn import TABLE_COLUMNS, TOL_QVI, ValueFunction, bounds_check, qvi_check, value_table, write_table

EXIT_OK, EXIT_INPUT, EXIT_NO_CASE, EXIT_MISMATCH, EXIT_NOT_CONVERGED = 0, 1, 2, 3, 4

log = logging.getLogger("hybriddiv")

DEFAULTS: dict[str, Any] = {
    "seed": 20240601,
    "solve": {"tol_fit": 1e-8, "gap_min": 1e-6, "table_points": 2001},
    "verify": {"tol_qvi": TOL_QVI, "grid_points": 2001, "bounds_points": 10_000, "bounds_tol": 1e-9},
    "simulate": {
        "n_paths": 100_000,
        "dt": 1e-3,
        "horizon": None,
        "antithetic": True,
        "tail_eps": 1e-5,
        "starts": None,  # list of [x0, regime]; default b/2, (b+B)/2, B+1 per regime
        "policy": None,  # explicit {lower, upper[, rate_low, rate_high]}
        "dump_paths": False,
    },
    "oracle": {"n_cells": 4000, "x_max": None, "tol": 1e-10, "max_iter": 500, "scheme": "hybrid"},
    "compare": {"oracle_rel_tol": 1e-3, "mc_sigmas": 3.0},
}


class InputError(Exception):
    """Bad command-line or config input (exit code 1)."""


# ---------------------------------------------------------------------------
# config handling


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply one ``dotted.key=value`` override; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise InputError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise InputError(f"cannot set {key}: {p} is not a section")
    node[parts[-1]] = _parse_value(raw)


def load_config(args: argparse.Namespace) -> dict:
    if args.config is None:
        raise InputError("--config is required")
    try:
        doc = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        raise InputError(f"config file not found: {args.config}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or "model" not in doc:
        raise InputError("config must be an object with a 'model' block")
    cfg = _merge(DEFAULTS, doc)
    for assignment in args.set or []:
        apply_override(cfg, assignment)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def model_from(cfg: dict) -> ModelParams:
    return validate(ModelParams.from_dict(cfg["model"]), analytic=True)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_report(out: Path, name: str, cfg: dict, body: dict) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"version": __version__, "config": cfg, **body}
    path = out / name
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=False) + "\n")
    return path


# ---------------------------------------------------------------------------
# shared pieces


def policy_summary(policy: DividendPolicy) -> list[str]:
    lines = []
    for i, (b, B) in enumerate(zip(policy.lower, policy.upper), start=1):
        if b == 0.0:
            lines.append(f"regime {i}: rate L everywhere below B={B:.10g}; impulse down to 0 at x >= B")
        else:
            lines.append(
                f"regime {i}: rate 0 on [0, {b:.10g}), rate L on [{b:.10g}, {B:.10g}); "
                f"impulse down to {b:.10g} at x >= {B:.10g}"
            )
    return lines


def _solve(cfg: dict, params: ModelParams):
    from .smoothfit import classify_and_solve

    s = cfg["solve"]
    return classify_and_solve(params, tol_fit=float(s["tol_fit"]), gap_min=float(s["gap_min"]))


def _load_solution(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"solution file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"solution file is not valid JSON: {exc}") from None
    if "value_function" not in doc:
        raise InputError(f"{path} has no value_function block")
    return doc


def _value_and_thresholds(cfg: dict, params: ModelParams, solution: str | None):
    """(ValueFunction, lower, upper, source) from a report or an inline solve."""
    if solution:
        doc = _load_solution(solution)
        v = ValueFunction.from_dict(doc["value_function"])
        th = doc["thresholds"]
        return v, tuple(th["lower"]), tuple(th["upper"]), str(solution)
    bundle = _solve(cfg, params)
    return bundle.value, bundle.thresholds.lower, bundle.thresholds.upper, "inline solve"


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(cfg: dict, args) -> int:
    params = model_from(cfg)
    if args.tol is not None:
        cfg["solve"]["tol_fit"] = args.tol
    bundle = _solve(cfg, params)
    out = Path(args.out)
    body = bundle.to_dict()
    body["policy_summary"] = policy_summary(bundle.policy)
    write_report(out, "solution.json", cfg, body)
    grid = np.linspace(0.0, 1.5 * max(bundle.thresholds.upper), int(cfg["solve"]["table_points"]))
    write_table(out / "value_table.csv", value_table(bundle.value, params, grid))
    print(f"{bundle.ordering.value} / {bundle.case.value}: lower={bundle.thresholds.lower} upper={bundle.thresholds.upper}")
    for line in body["policy_summary"]:
        print(line)
    return EXIT_OK


def cmd_verify(cfg: dict, args) -> int:
    params = model_from(cfg)
    vcfg = cfg["verify"]
    tol = float(args.tol if args.tol is not None else vcfg["tol_qvi"])
    v, lower, upper, source = _value_and_thresholds(cfg, params, args.solution)
    x_max = 1.5 * max(upper)
    qvi = qvi_check(v, params, np.linspace(0.0, x_max, int(vcfg["grid_points"])), tol)
    bnd = bounds_check(v, params, np.linspace(0.0, x_max, int(vcfg["bounds_points"])), float(vcfg["bounds_tol"]))
    passed = qvi.passed and bnd.passed
    write_report(Path(args.out), "verify.json", cfg, {
        "source": source,
        "qvi": qvi.to_dict(),
        "bounds": bnd.to_dict(),
        "passed": passed,
    })
    print(f"QVI check: {'PASS' if qvi.passed else 'FAIL'}; bound lemmas: {'PASS' if bnd.passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_MISMATCH


def _starts(scfg: dict, lower, upper) -> list[tuple[float, int]]:
    if scfg.get("starts"):
        try:
            return [(float(x), int(r) - 1) for x, r in scfg["starts"]]
        except (TypeError, ValueError):
            raise InputError("simulate.starts must be a list of [x0, regime] pairs") from None
    out = []
    for i, (b, B) in enumerate(zip(lower, upper)):
        out += [(b / 2, i), ((b + B) / 2, i), (B + 1.0, i)]
    return out


def cmd_simulate(cfg: dict, args) -> int:
    from .simulate import SimConfig, bias_allowance, estimate_value, simulate_paths, summarize, write_paths

    params = model_from(cfg)
    scfg = cfg["simulate"]
    v = None
    if scfg.get("policy"):
        pd = scfg["policy"]
        try:
            policy = DividendPolicy(
                tuple(pd["lower"]),
                tuple(pd["upper"]),
                tuple(pd.get("rate_low", [0.0] * len(pd["lower"]))),
                tuple(pd.get("rate_high", [params.rate_cap] * len(pd["lower"]))),
            )
        except (KeyError, TypeError) as exc:
            raise InputError(f"simulate.policy is malformed: {exc}") from None
        source = "explicit policy"
        if args.solution:
            v = ValueFunction.from_dict(_load_solution(args.solution)["value_function"])
    else:
        v, lower, upper, source = _value_and_thresholds(cfg, params, args.solution)
        policy = DividendPolicy.threshold(lower, upper, params.rate_cap)
    try:
        sim = SimConfig(
            n_paths=int(scfg["n_paths"]),
            dt=float(scfg["dt"]),
            horizon=None if scfg["horizon"] is None else float(scfg["horizon"]),
            seed=int(cfg["seed"]),
            antithetic=bool(scfg["antithetic"]),
            tail_eps=float(scfg["tail_eps"]),
        )
    except (TypeError, ValueError) as exc:
        raise InputError(f"simulate section: {exc}") from None
    out = Path(args.out)
    results = []
    for k, (x0, i) in enumerate(_starts(scfg, policy.lower, policy.upper)):
        if scfg.get("dump_paths"):
            rec = simulate_paths(params, policy, x0, i, sim)
            est = summarize(rec, sim.antithetic)
            out.mkdir(parents=True, exist_ok=True)
            write_paths(out / f"paths_{k}.csv", rec)
        else:
            est = estimate_value(params, policy, x0, i, sim)
        row = {"x0": x0, "regime": i + 1, **est.to_dict()}
        if v is not None:
            val = float(v.eval(x0, i))
            allowance = 3.0 * est.half_width + bias_allowance(sim.dt)
            row.update({"analytic": val, "abs_diff": abs(est.mean - val), "allowance": allowance,
                        "consistent": abs(est.mean - val) <= allowance})
        results.append(row)
        print(f"x0={x0:.6g} regime {i + 1}: mean={est.mean:.6f} +/- {est.half_width:.6f}"
              + (f" (analytic {row['analytic']:.6f})" if v is not None else ""))
    write_report(out, "simulate.json", cfg, {
        "source": source,
        "policy": policy.to_dict(),
        "sim_config": sim.to_dict(),
        "bias_allowance": bias_allowance(sim.dt),
        "estimates": results,
    })
    return EXIT_OK


def cmd_oracle(cfg: dict, args) -> int:
    from .oracle import default_x_max, extract_boundaries, grid_table, labels_monotone, solve_grid

    params = validate(ModelParams.from_dict(cfg["model"]))
    ocfg = cfg["oracle"]
    x_max = float(ocfg["x_max"]) if ocfg["x_max"] is not None else default_x_max(params)
    tol = float(args.tol if args.tol is not None else ocfg["tol"])
    sol = solve_grid(params, x_max, int(ocfg["n_cells"]), tol, int(ocfg["max_iter"]), str(ocfg["scheme"]))
    bounds = extract_boundaries(sol)
    warnings = []
    for i in range(params.n_regimes):
        v = sol.values[i]
        slope = (v[-2] - v[-3]) / sol.h
        if abs(slope - 1.0) > 1e-2:
            msg = f"regime {i + 1}: slope {slope:.4g} next to x_max deviates from 1; increase x_max"
            warnings.append(msg)
            log.warning(msg)
        elif not np.isfinite(bounds["upper"][i]):
            msg = f"regime {i + 1}: no impulse region inside [0, {x_max:g}]; increase x_max"
            warnings.append(msg)
            log.warning(msg)
    out = Path(args.out)
    write_report(out, "oracle.json", cfg, {
        "grid": sol.to_dict(),
        "boundaries": bounds,
        "labels_monotone": labels_monotone(sol),
        "warnings": warnings,
    })
    write_table(out / "oracle_table.csv", grid_table(sol, params))
    print(f"oracle: {sol.iterations} sweeps, lower={bounds['lower']} upper={bounds['upper']}")
    return EXIT_OK


def read_table(path: str | Path) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per-regime (x, value) columns of a value-table CSV."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise InputError(f"grid file not found: {path}") from None
    if len(rows) < 2 or tuple(rows[0]) != TABLE_COLUMNS:
        raise InputError(f"grid file {path} is empty or lacks the expected header")
    data: dict[int, list[tuple[float, float]]] = {}
    for r in rows[1:]:
        data.setdefault(int(r[1]), []).append((float(r[0]), float(r[2])))
    return {i: (np.array([a for a, _ in d]), np.array([b for _, b in d])) for i, d in data.items()}


def cmd_compare(cfg: dict, args) -> int:
    from .simulate import bias_allowance

    params = model_from(cfg)
    ccfg = cfg["compare"]
    out = Path(args.out)
    solution = args.solution or (out / "solution.json")
    v, lower, upper, source = _value_and_thresholds(cfg, params, solution)
    grid_file = args.grid or (out / "oracle_table.csv")
    table = read_table(grid_file)
    rel = float(args.tol if args.tol is not None else ccfg["oracle_rel_tol"])
    diffs, ok = [], True
    for i, (x, vals) in sorted(table.items()):
        ana = v.eval(x, i - 1)
        err = np.abs(vals - ana)
        sup = float(np.max(np.abs(ana)))
        tol = rel * (1.0 + sup)
        regions = {
            "below_b": x < lower[i - 1],
            "band": (x >= lower[i - 1]) & (x < upper[i - 1]),
            "tail": x >= upper[i - 1],
        }
        per_region = {k: float(np.max(err[m])) if np.any(m) else 0.0 for k, m in regions.items()}
        passed = float(np.max(err)) <= tol
        ok &= passed
        diffs.append({"regime": i, "sup_gap": float(np.max(err)), "tolerance": tol,
                      "per_region": per_region, "passed": passed})
    mc = []
    sim_path = Path(args.simulation) if args.simulation else out / "simulate.json"
    if sim_path.exists():
        doc = json.loads(sim_path.read_text())
        dt = float(doc["sim_config"]["dt"])
        for est in doc["estimates"]:
            val = float(v.eval(float(est["x0"]), int(est["regime"]) - 1))
            allowance = float(ccfg["mc_sigmas"]) * float(est["half_width"]) + bias_allowance(dt)
            passed = abs(float(est["mean"]) - val) <= allowance
            ok &= passed
            mc.append({"x0": est["x0"], "regime": est["regime"], "mean": est["mean"], "analytic": val,
                       "allowance": allowance, "passed": passed})
    write_report(out, "compare.json", cfg, {"source": source, "grid_file": str(grid_file),
                                            "oracle": diffs, "simulation": mc, "passed": ok})
    print(f"compare: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_MISMATCH


COMMANDS = {
    "solve": cmd_solve,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    d = DEFAULTS
    epilog = (
        "defaults: solve.tol_fit={tol_fit}, solve.gap_min={gap_min}, verify.tol_qvi={tq}, "
        "verify.grid_points={gp}, simulate.n_paths={np_}, simulate.dt={dt}, oracle.n_cells={nc}, "
        "oracle.tol={ot}, compare.oracle_rel_tol={crt}. Exit codes: 0 ok, 1 input error, "
        "2 no analytic case (run the oracle), 3 verification mismatch, 4 oracle not converged. "
        "QDL_THREADS caps simulation threads."
    ).format(
        tol_fit=d["solve"]["tol_fit"], gap_min=d["solve"]["gap_min"], tq=d["verify"]["tol_qvi"],
        gp=d["verify"]["grid_points"], np_=d["simulate"]["n_paths"], dt=d["simulate"]["dt"],
        nc=d["oracle"]["n_cells"], ot=d["oracle"]["tol"], crt=d["compare"]["oracle_rel_tol"],
    )
    parser = argparse.ArgumentParser(prog="hybriddiv", description=__doc__.splitlines()[0], epilog=epilog)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, epilog=epilog)
        p.add_argument("--config", help="JSON config with a 'model' block")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--tol", type=float, help="override the command's main tolerance")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override")
        if name in ("verify", "simulate", "compare"):
            p.add_argument("--solution", help="solution report from a prior solve (default: solve inline)")
        if name == "compare":
            p.add_argument("--grid", help="oracle CSV (default: OUT/oracle_table.csv)")
            p.add_argument("--simulation", help="simulation report (default: OUT/simulate.json if present)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    threads = os.environ.get("QDL_THREADS")
    if threads:
        from .simulate import set_threads

        try:
            set_threads(int(threads))
        except ValueError:
            print(f"error: QDL_THREADS must be an integer, got {threads!r}", file=sys.stderr)
            return EXIT_INPUT
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except (InputError, ParameterError, InvalidStart) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NoValidCase as exc:
        print(f"error: {exc}\nhint: run `hybriddiv oracle` for these parameters", file=sys.stderr)
        return EXIT_NO_CASE
    except NotConverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except HybridDivError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MISMATCH


if __name__ == "__main__":
    sys.exit(main())
