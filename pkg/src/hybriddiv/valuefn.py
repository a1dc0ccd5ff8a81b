"""Piecewise exponential-polynomial value functions and QVI diagnostics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import NegativeSurplus
from .model import DividendPolicy, ModelParams

TOL_QVI = 1e-6
GRID_POINTS = 2001


@dataclass(frozen=True)
class ExpSegment:
    """sum_j c_j exp(alpha_j (x - shift)) + slope * x + intercept on [lo, hi)."""

    lo: float
    hi: float
    shift: float
    coeffs: tuple[float, ...]
    exponents: tuple[float, ...]
    slope: float
    intercept: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        object.__setattr__(self, "exponents", tuple(float(a) for a in self.exponents))
        if not self.lo < self.hi:
            raise ValueError(f"empty segment [{self.lo}, {self.hi})")
        if len(self.coeffs) != len(self.exponents):
            raise ValueError("one coefficient per exponent")
        if len(set(self.exponents)) != len(self.exponents):
            raise ValueError("exponents within a segment must be distinct")

    def deriv(self, x, order: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        if order == 0:
            out = out + self.slope * x + self.intercept
        elif order == 1:
            out = out + self.slope
        for c, a in zip(self.coeffs, self.exponents):
            out = out + c * a**order * np.exp(a * (x - self.shift))
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "lo": self.lo,
            "hi": None if math.isinf(self.hi) else self.hi,
            "shift": self.shift,
            "coeffs": list(self.coeffs),
            "exponents": list(self.exponents),
            "slope": self.slope,
            "intercept": self.intercept,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ExpSegment":
        hi = doc["hi"]
        return cls(
            lo=float(doc["lo"]),
            hi=math.inf if hi is None else float(hi),
            shift=float(doc["shift"]),
            coeffs=tuple(doc["coeffs"]),
            exponents=tuple(doc["exponents"]),
            slope=float(doc["slope"]),
            intercept=float(doc["intercept"]),
        )


@dataclass(frozen=True)
class ValueFunction:
    """Per-regime ordered segments covering [0, inf); the last one is x + const."""

    segments: tuple[tuple[ExpSegment, ...], ...]
    _starts: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        segs = tuple(tuple(s) for s in self.segments)
        object.__setattr__(self, "segments", segs)
        for i, regime in enumerate(segs):
            if regime[0].lo != 0.0 or not math.isinf(regime[-1].hi):
                raise ValueError(f"regime {i + 1}: segments must cover [0, inf)")
            for a, b in zip(regime, regime[1:]):
                if a.hi != b.lo:
                    raise ValueError(f"regime {i + 1}: segments are not contiguous")
            tail = regime[-1]
            if tail.coeffs or tail.slope != 1.0:
                raise ValueError(f"regime {i + 1}: last segment must be x + const")
        object.__setattr__(self, "_starts", tuple(np.array([s.lo for s in r]) for r in segs))

    @property
    def n_regimes(self) -> int:
        return len(self.segments)

    def tail_start(self, i: int) -> float:
        """Start of the linear tail, i.e. the impulse trigger B_i."""
        return self.segments[i][-1].lo

    def breakpoints(self, i: int) -> np.ndarray:
        return self._starts[i][1:]

    def _eval(self, x, i: int, order: int):
        xa = np.asarray(x, dtype=float)
        if np.any(xa < 0.0):
            raise NegativeSurplus(f"surplus must be non-negative, got min {xa.min()}")
        idx = np.searchsorted(self._starts[i], xa, side="right") - 1
        out = np.empty_like(xa)
        for k, seg in enumerate(self.segments[i]):
            mask = idx == k
            if np.any(mask):
                out[mask] = seg.deriv(xa[mask], order)
        return out if out.ndim else float(out)

    def eval(self, x, i: int):
        return self._eval(x, i, 0)

    def eval_deriv(self, x, i: int):
        return self._eval(x, i, 1)

    def eval_deriv2(self, x, i: int):
        return self._eval(x, i, 2)

    def left_limit(self, x: float, i: int, order: int = 0) -> float:
        """Limit from the left at ``x`` (uses the segment ending at ``x``)."""
        k = int(np.searchsorted(self._starts[i], x, side="left")) - 1
        k = max(k, 0)
        return float(self.segments[i][k].deriv(x, order))

    def swapped(self) -> "ValueFunction":
        return ValueFunction(self.segments[::-1])

    def sup_abs(self, x_max: float, n: int = GRID_POINTS) -> float:
        grid = np.linspace(0.0, x_max, n)
        return max(float(np.max(np.abs(self.eval(grid, i)))) for i in range(self.n_regimes))

    def to_dict(self) -> dict[str, Any]:
        return {"segments": [[s.to_dict() for s in regime] for regime in self.segments]}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ValueFunction":
        return cls(tuple(tuple(ExpSegment.from_dict(s) for s in regime) for regime in doc["segments"]))


def eval(v: ValueFunction, x, i: int):  # noqa: A001 - mirrors the operation name
    return v.eval(x, i)


def eval_deriv(v: ValueFunction, x, i: int):
    return v.eval_deriv(x, i)


def eval_deriv2(v: ValueFunction, x, i: int):
    return v.eval_deriv2(x, i)


def slope_one_points(v: ValueFunction, i: int, samples: int = 64) -> np.ndarray:
    """Breakpoints plus every located root of v'(x) = 1 below the tail."""
    pts = [float(p) for p in v.breakpoints(i)]
    for seg in v.segments[i][:-1]:
        xs = np.linspace(seg.lo, seg.hi, samples + 1)
        g = seg.deriv(xs, 1) - 1.0
        for k in np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)[0]:
            pts.append(brentq(lambda y: float(seg.deriv(y, 1)) - 1.0, xs[k], xs[k + 1], xtol=1e-14))
        pts.extend(float(xs[k]) for k in np.nonzero(g == 0.0)[0])
    return np.unique(np.array(pts))


def intervention_value(
    v: ValueFunction, x, i: int, fixed_cost: float, candidates: np.ndarray | None = None
):
    """Best immediate impulse sup_{0<u<=x} v(x-u) + u - K, and its maximiser.

    Returns ``(Mv, u_star, attained)``. The u -> 0+ limit v(x) - K is a candidate
    but is never attained; when it wins, ``u_star`` is reported as 0 and
    ``attained`` is False. Targets are searched over 0, every breakpoint and
    every root of v' = 1, which contains all interior stationary points.
    """
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xa < 0.0):
        raise NegativeSurplus(f"surplus must be non-negative, got min {xa.min()}")
    if candidates is None:
        candidates = slope_one_points(v, i)
    cands = np.concatenate([[0.0], candidates])
    f_c = v.eval(cands, i) - cands  # v(y) - y at each target y
    # best target strictly below x among candidates
    below = cands[None, :] < xa[:, None]
    scores = np.where(below, f_c[None, :], -np.inf)
    k = np.argmax(scores, axis=1)
    best_target_val = scores[np.arange(xa.size), k]
    limit_val = v.eval(xa, i) - xa  # target -> x, i.e. u -> 0+
    use_limit = limit_val > best_target_val
    m_val = np.where(use_limit, limit_val, best_target_val) + xa - fixed_cost
    u_star = np.where(use_limit, 0.0, xa - cands[k])
    if np.ndim(x) == 0:
        return float(m_val[0]), float(u_star[0]), not bool(use_limit[0])
    return m_val, u_star, ~use_limit


def generator_residual(v: ValueFunction, params: ModelParams, x, i: int):
    """max_{u in {0, L}} of L_i(u) v + u, using right limits at breakpoints."""
    r = params.regimes[i]
    q = params.generator()
    val = v.eval(x, i)
    d1 = v.eval_deriv(x, i)
    d2 = v.eval_deriv2(x, i)
    coupling = sum(q[i, j] * v.eval(x, j) for j in range(params.n_regimes) if j != i)
    base = 0.5 * r.sigma**2 * d2 + r.mu * d1 - (params.delta + r.lambda_out) * val + coupling
    pay = params.rate_cap * (1.0 - d1)
    return base + np.maximum(pay, 0.0)


@dataclass(frozen=True)
class QviReport:
    grid: np.ndarray
    tol: float
    scale: float
    gen_max: tuple[float, ...]
    gen_cont_absmax: tuple[float, ...]
    gap_min: tuple[float, ...]
    gap_intervention_absmax: tuple[float, ...]
    complementarity_max: tuple[float, ...]

    @property
    def passed(self) -> bool:
        t = self.tol * self.scale
        return all(
            g <= t and c <= t and m >= -t and a <= t and p <= t
            for g, c, m, a, p in zip(
                self.gen_max,
                self.gen_cont_absmax,
                self.gap_min,
                self.gap_intervention_absmax,
                self.complementarity_max,
            )
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "grid": {"lo": float(self.grid[0]), "hi": float(self.grid[-1]), "n": int(self.grid.size)},
            "tol": self.tol,
            "scale": self.scale,
            "generator_max": list(self.gen_max),
            "generator_continuation_absmax": list(self.gen_cont_absmax),
            "gap_min": list(self.gap_min),
            "gap_intervention_absmax": list(self.gap_intervention_absmax),
            "complementarity_max": list(self.complementarity_max),
            "passed": self.passed,
        }


def default_grid(v: ValueFunction, n: int = GRID_POINTS) -> np.ndarray:
    x_max = 1.5 * max(v.tail_start(i) for i in range(v.n_regimes))
    return np.linspace(0.0, x_max, n)


def _exceptional_mask(v: ValueFunction, grid: np.ndarray, i: int) -> np.ndarray:
    h = grid[1] - grid[0] if grid.size > 1 else 0.0
    keep = np.ones(grid.size, dtype=bool)
    for p in v.breakpoints(i):
        keep &= np.abs(grid - p) > h
    return keep


def qvi_check(
    v: ValueFunction, params: ModelParams, grid: np.ndarray | None = None, tol: float = TOL_QVI
) -> QviReport:
    """Evaluate the three QVI statistics per regime on ``grid``."""
    if grid is None:
        grid = default_grid(v)
    grid = np.asarray(grid, dtype=float)
    scale = max(1.0, max(float(np.max(np.abs(v.eval(grid, i)))) for i in range(v.n_regimes)))
    gen_max, cont_abs, gap_min, int_abs, comp = [], [], [], [], []
    for i in range(v.n_regimes):
        keep = _exceptional_mask(v, grid, i)
        x = grid[keep]
        gen = generator_residual(v, params, x, i)
        m_val, _, _ = intervention_value(v, x, i, params.fixed_cost)
        gap = v.eval(x, i) - m_val
        cont = x < v.tail_start(i)
        gen_max.append(float(np.max(gen)))
        cont_abs.append(float(np.max(np.abs(gen[cont]))) if np.any(cont) else 0.0)
        gap_min.append(float(np.min(gap)))
        int_abs.append(float(np.max(np.abs(gap[~cont]))) if np.any(~cont) else 0.0)
        comp.append(float(np.max(np.abs(gap * gen))))
    return QviReport(
        grid=grid,
        tol=tol,
        scale=scale,
        gen_max=tuple(gen_max),
        gen_cont_absmax=tuple(cont_abs),
        gap_min=tuple(gap_min),
        gap_intervention_absmax=tuple(int_abs),
        complementarity_max=tuple(comp),
    )


@dataclass(frozen=True)
class BoundsReport:
    upper_slack_min: tuple[float, ...]
    growth_slack_min: tuple[float, ...]
    tol: float

    @property
    def passed(self) -> bool:
        return all(s >= -self.tol for s in self.upper_slack_min + self.growth_slack_min)

    def to_dict(self) -> dict[str, Any]:
        return {
            "upper_slack_min": list(self.upper_slack_min),
            "growth_slack_min": list(self.growth_slack_min),
            "tol": self.tol,
            "passed": self.passed,
        }


def growth_slack(values: np.ndarray, grid: np.ndarray, fixed_cost: float) -> float:
    """min over grid pairs x1 < x2 of v(x2) - v(x1) - (x2 - x1 - K)."""
    f = values - grid
    run_max = np.maximum.accumulate(f)
    return float(np.min(f[1:] - run_max[:-1]) + fixed_cost)


def bounds_check(
    v: ValueFunction, params: ModelParams, grid: np.ndarray | None = None, tol: float = 1e-9
) -> BoundsReport:
    """Upper bound v <= x + (mu* + L)/delta and growth v(x2) - v(x1) >= x2 - x1 - K."""
    if grid is None:
        grid = default_grid(v, 10_000)
    grid = np.asarray(grid, dtype=float)
    upper, growth = [], []
    for i in range(v.n_regimes):
        vals = v.eval(grid, i)
        upper.append(float(np.min(params.upper_bound(grid) - vals)))
        growth.append(growth_slack(vals, grid, params.fixed_cost))
    return BoundsReport(tuple(upper), tuple(growth), tol)


def lower_threshold(v: ValueFunction, i: int) -> float:
    """Point below the tail where v' falls through 1 (0 if v'(0) <= 1)."""
    if v.eval_deriv(0.0, i) <= 1.0:
        return 0.0
    B = v.tail_start(i)
    for seg in v.segments[i][:-1]:
        if seg.lo >= B:
            break
        xs = np.linspace(seg.lo, seg.hi, 257)
        g = seg.deriv(xs, 1) - 1.0
        if g[0] <= 0.0:
            return float(seg.lo)
        down = np.nonzero((g[:-1] > 0.0) & (g[1:] <= 0.0))[0]
        if down.size:
            k = down[0]
            if g[k + 1] == 0.0:
                return float(xs[k + 1])
            return float(brentq(lambda y: float(seg.deriv(y, 1)) - 1.0, xs[k], xs[k + 1], xtol=1e-14))
    return 0.0


def synthesize_policy(v: ValueFunction, params: ModelParams) -> DividendPolicy:
    """QVI control: rate 0 where v' > 1, the cap where v' <= 1, impulse to b above B."""
    lower = tuple(lower_threshold(v, i) for i in range(v.n_regimes))
    upper = tuple(v.tail_start(i) for i in range(v.n_regimes))
    return DividendPolicy.threshold(lower, upper, params.rate_cap)


TABLE_COLUMNS = ("x", "regime", "value", "deriv", "generator_residual", "M_value")


def value_table(v: ValueFunction, params: ModelParams, grid: np.ndarray | None = None) -> list[tuple]:
    if grid is None:
        grid = default_grid(v)
    rows = []
    for i in range(v.n_regimes):
        vals = v.eval(grid, i)
        ders = v.eval_deriv(grid, i)
        gen = generator_residual(v, params, grid, i)
        m_val, _, _ = intervention_value(v, grid, i, params.fixed_cost)
        rows.extend(zip(grid, [i + 1] * grid.size, vals, ders, gen, m_val))
    return rows


def write_table(path, rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        for row in rows:
            w.writerow([f"{float(row[0]):.17g}", int(row[1])] + [f"{float(c):.17g}" for c in row[2:]])
