"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records one line in ``conftest.ACCEPTANCE_LINES`` (echoed in the
terminal summary) before asserting, so a failing criterion still reports.
"""

import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from hybriddiv.charpoly import RegionKind, quartic_coefficients, quartic_roots
from hybriddiv.model import DividendPolicy, swap_regimes
from hybriddiv.oracle import extract_boundaries, solve_grid
from hybriddiv.simulate import SimConfig, bias_allowance, estimate_value
from hybriddiv.smoothfit import TOL_FIT, Case, Ordering, classify_and_solve, smooth_fit_residuals
from hybriddiv.valuefn import TOL_QVI, bounds_check, default_grid, generator_residual, qvi_check

from conftest import ACCEPTANCE_LINES, CONFIG_DIR, CURATED, random_params, solved

pytestmark = pytest.mark.slow

DT = 1e-3
N_PATHS = 100_000


def record(k: int, ok: bool, detail: str) -> None:
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES[k] = line
    print(line)


def test_criterion_1_root_structure():
    params = random_params(np.random.default_rng(20240601), 1000)
    t0 = time.perf_counter()
    worst, bad = 0.0, 0
    for p in params:
        for kind in RegionKind:
            if not kind.coupled:
                continue
            coeffs = quartic_coefficients(p, kind)
            z = quartic_roots(p, kind).roots
            if not (z.size == 4 and np.all(np.isreal(z)) and z[0] < z[1] < 0.0 < z[2] < z[3]):
                bad += 1
                continue
            res = float(np.max(np.abs(np.polyval(coeffs, z)))) / float(np.max(np.abs(coeffs)))
            worst = max(worst, res)
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and worst <= 1e-10 and elapsed < 5.0
    record(1, ok, f"1000 sets x 4 kinds, pattern violations {bad}, max residual/scale {worst:.2e}, {elapsed:.2f} s")
    assert ok


def test_criterion_2_smooth_fit_exactness():
    kinds = {(solved(n).ordering, solved(n).case) for n in CURATED}
    needed = {
        (Ordering.NESTED, Case.BOTH_SLOPES_ABOVE_1),
        (Ordering.NESTED, Case.ONE_SLOPE_AT_1),
        (Ordering.NESTED, Case.BOTH_SLOPES_AT_1),
        (Ordering.INTERLEAVED, Case.BOTH_SLOPES_ABOVE_1),
        (Ordering.INTERLEAVED, Case.ONE_SLOPE_AT_1),
    }
    sym = solved("symmetric").params
    symmetric = sym.regimes[0] == sym.regimes[1]
    worst_fit, slacks = 0.0, []
    for name in CURATED:
        b = solved(name)
        worst_fit = max(worst_fit, max(smooth_fit_residuals(b.value, b.thresholds, b.params.fixed_cost).values()))
        slack = b.residuals["side_slack"]
        slacks.append(slack if b.case is not Case.BOTH_SLOPES_ABOVE_1 else slack - TOL_FIT)
    ok = needed <= kinds and symmetric and worst_fit <= 1e-8 and min(slacks) >= -TOL_FIT
    record(2, ok, f"{len(CURATED)} instances, all cases covered={needed <= kinds}, "
                  f"max fit residual {worst_fit:.2e}, side slacks {', '.join(f'{s:.3g}' for s in slacks)}")
    assert ok


def test_criterion_3_qvi_verification():
    worst, slowest, failed = 0.0, 0.0, []
    for name in CURATED:
        b = solved(name)
        t0 = time.perf_counter()
        grid = np.linspace(0.0, 1.5 * max(b.thresholds.upper), 2001)
        rep = qvi_check(b.value, b.params, grid)
        slowest = max(slowest, time.perf_counter() - t0)
        stats = (
            max(rep.gen_max),
            max(rep.gen_cont_absmax),
            -min(rep.gap_min),
            max(rep.gap_intervention_absmax),
            max(rep.complementarity_max),
        )
        worst = max(worst, max(stats) / rep.scale)
        if max(stats) > TOL_QVI * rep.scale:
            failed.append(name)
    ok = not failed and slowest < 1.0
    record(3, ok, f"max scaled QVI statistic {worst:.2e} (tol 1e-6), slowest {slowest:.2f} s, failed {failed}")
    assert ok


def test_criterion_4_oracle_equivalence():
    worst_gap, worst_cells, slowest, failed = 0.0, 0.0, 0.0, []
    for name in CURATED:
        b = solved(name)
        p = b.params
        x_max = 1.5 * max(b.thresholds.upper) + 3.0 * (p.mu_max + p.rate_cap) / p.delta
        t0 = time.perf_counter()
        sol = solve_grid(p, x_max, n_cells=4000)
        slowest = max(slowest, time.perf_counter() - t0)
        gap = max(float(np.max(np.abs(sol.values[i] - b.value.eval(sol.grid, i)))) for i in range(2))
        sup = max(float(np.max(np.abs(b.value.eval(sol.grid, i)))) for i in range(2))
        got = extract_boundaries(sol)
        cells = max(
            float(np.max(np.abs(np.array(got[k]) - np.array(ref)))) / sol.h
            for k, ref in (("upper", b.thresholds.upper), ("lower", b.thresholds.lower))
        )
        worst_gap = max(worst_gap, gap / (1.0 + sup))
        worst_cells = max(worst_cells, cells)
        if gap > 1e-3 * (1.0 + sup) or cells > 2.0:
            failed.append(name)
    ok = not failed and slowest < 60.0
    record(4, ok, f"max gap/(1+sup) {worst_gap:.2e} (tol 1e-3), max boundary offset {worst_cells:.2f} cells, "
                  f"slowest {slowest:.1f} s, failed {failed}")
    assert ok


def start_points(b):
    out = []
    for i in range(2):
        lo, hi = b.thresholds.lower[i], b.thresholds.upper[i]
        out += [(x, i) for x in (0.5 * lo, 0.5 * (lo + hi), hi + 1.0)]
    return out


def test_criterion_5_simulation_consistency():
    allow = bias_allowance(DT)
    worst, slowest, failed = 0.0, 0.0, []
    for name in CURATED:
        b = solved(name)
        t0 = time.perf_counter()
        for x0, i in start_points(b):
            est = estimate_value(b.params, b.policy, x0, i, SimConfig(n_paths=N_PATHS, dt=DT))
            err = abs(est.mean - float(b.value.eval(x0, i)))
            worst = max(worst, err / (3.0 * est.half_width + allow))
            if err > 3.0 * est.half_width + allow:
                failed.append((name, round(x0, 4), i + 1))
        slowest = max(slowest, time.perf_counter() - t0)
    ok = not failed and slowest < 120.0
    record(5, ok, f"36 estimates, max |mean - v|/(3 hw + allowance) {worst:.2f}, slowest {slowest:.1f} s, "
                  f"failed {failed}")
    assert ok


def perturbed_policies(b):
    lo, hi, L = np.array(b.thresholds.lower), np.array(b.thresholds.upper), b.params.rate_cap
    w = 0.2 * (hi - lo)
    bands = {
        "b-": (np.maximum(lo - w, 0.0), hi),
        "b+": (lo + w, hi),
        "B-": (lo, hi - w),
        "B+": (lo, hi + w),
    }
    out = {k: DividendPolicy.threshold(tuple(a), tuple(c), L) for k, (a, c) in bands.items()}
    # swapped bands: pay L below b and nothing between b and B
    out["swap"] = DividendPolicy(tuple(lo), tuple(hi), (L, L), (0.0, 0.0))
    return out


@pytest.fixture(scope="module")
def optimality_runs():
    rows = []
    for name in CURATED:
        b = solved(name)
        for label, pol in perturbed_policies(b).items():
            for i in range(2):
                x0 = 0.5 * (b.thresholds.lower[i] + b.thresholds.upper[i])
                est = estimate_value(b.params, pol, x0, i, SimConfig(n_paths=N_PATHS, dt=DT))
                rows.append((name, label, i, est.mean - float(b.value.eval(x0, i)), est.half_width))
    return rows


def test_criterion_6_optimality_spot_check(optimality_runs):
    """Perturbed policies do not beat the value, up to noise and the step-monitoring bias."""
    allow = bias_allowance(DT)
    failed = [r[:3] for r in optimality_runs if r[3] > 3.0 * r[4] + allow]
    literal = sum(r[3] > 3.0 * r[4] for r in optimality_runs)
    worst = max(r[3] for r in optimality_runs)
    ok = not failed
    record(6, ok, f"{len(optimality_runs)} runs (5 policies x 2 starts x 6 instances), max mean - v {worst:+.4f} "
                  f"vs allowance {allow:.4f}; without the allowance {literal} runs exceed 3 hw; failed {failed}")
    assert ok


@pytest.mark.xfail(
    strict=True,
    reason="the O(sqrt(dt)) step-monitoring bias at dt = 1e-3 exceeds 3 half-widths for near-optimal "
    "policies; see the decisions ledger",
)
def test_criterion_6_without_bias_allowance(optimality_runs):
    assert all(r[3] <= 3.0 * r[4] for r in optimality_runs)


def test_criterion_7_bound_lemmas():
    worst_upper, worst_growth, failed = np.inf, np.inf, []
    for name in CURATED:
        b = solved(name)
        rep = bounds_check(b.value, b.params, tol=1e-9)
        worst_upper = min(worst_upper, min(rep.upper_slack_min))
        worst_growth = min(worst_growth, min(rep.growth_slack_min))
        if not rep.passed:
            failed.append(name)
    ok = not failed
    record(7, ok, f"min upper-bound slack {worst_upper:.3g}, min growth slack {worst_growth:.3g}, failed {failed}")
    assert ok


def slope_one_crossings(v, i, B, n=20001):
    x = np.linspace(0.0, B, n)[:-1]
    s = np.sign(v.eval_deriv(x, i) - 1.0)
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def test_criterion_8_structural_theorems():
    problems = []
    for name in CURATED:
        b = solved(name)
        v, p, th = b.value, b.params, b.thresholds
        for i in range(2):
            # a pinned b = 0 has no interior crossing: v' <= 1 on the whole band
            want = 1 if th.lower[i] > 0.0 else 0
            got = slope_one_crossings(v, i, th.upper[i])
            if got != want:
                problems.append(f"{name} regime {i + 1}: {got} crossings")
        if b.ordering is Ordering.INTERLEAVED:
            l1, d = p.lam[0], p.delta
            if v.left_limit(th.upper[0], 1, 1) > (l1 + d) / l1 + 1e-8:
                problems.append(f"{name}: slope bound at B1")
        top = max(th.upper)
        x = np.linspace(top, top + 20.0, 2001)[1:]
        for i in range(2):
            if np.any(generator_residual(v, p, x, i) > p.delta * (top - x) + 1e-6):
                problems.append(f"{name} regime {i + 1}: tail inequality")
    ok = not problems
    record(8, ok, f"single slope-one crossing, interleaved slope bound, tail inequality; problems {problems}")
    assert ok


SIM_SCRIPT = """
import sys
from hybriddiv.cli import main
sys.exit(main(["simulate", "--config", sys.argv[1], "--out", sys.argv[2], "--set", "simulate.n_paths=20000"]))
"""


def test_criterion_9_symmetry_and_reproducibility(tmp_path):
    worst, problems = 0.0, []
    for name in CURATED:
        b = solved(name)
        s = classify_and_solve(swap_regimes(b.params))
        th_gap = max(
            float(np.max(np.abs(np.array(s.thresholds.lower[::-1]) - b.thresholds.lower))),
            float(np.max(np.abs(np.array(s.thresholds.upper[::-1]) - b.thresholds.upper))),
        )
        grid = default_grid(b.value)
        v_gap = max(float(np.max(np.abs(s.value.eval(grid, 1 - i) - b.value.eval(grid, i)))) for i in range(2))
        x0 = 0.5 * (b.thresholds.lower[0] + b.thresholds.upper[0])
        cfg = SimConfig(n_paths=2000, seed=7)
        mc_gap = abs(
            estimate_value(s.params, s.policy, x0, 1, cfg).mean - estimate_value(b.params, b.policy, x0, 0, cfg).mean
        )
        worst = max(worst, th_gap, v_gap, mc_gap)
        if max(th_gap, v_gap, mc_gap) > 1e-8:
            problems.append(name)

    script = tmp_path / "sim.py"
    script.write_text(SIM_SCRIPT)
    cfg_path = str(CONFIG_DIR / "interleaved_case1.json")
    env = dict(os.environ, NUMBA_NUM_THREADS="4")
    reports = []
    for tag, threads in (("a", "1"), ("b", "1"), ("c", "4")):
        out = tmp_path / tag
        res = subprocess.run([sys.executable, str(script), cfg_path, str(out)],
                             env=dict(env, QDL_THREADS=threads), capture_output=True, text=True)
        assert res.returncode == 0, res.stderr
        reports.append((out / "simulate.json").read_text())
    identical = reports[0] == reports[1] == reports[2]
    ok = not problems and identical
    record(9, ok, f"max swap discrepancy {worst:.2e} (tol 1e-8) on {problems or 'no'} failures; "
                  f"reports identical across runs and 1/4 threads: {identical}")
    assert ok
    assert json.loads(reports[0])["estimates"]
