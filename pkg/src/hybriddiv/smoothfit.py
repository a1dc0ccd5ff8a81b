"""Smooth-fit solver for the two-regime hybrid dividend problem.

The free thresholds (b_i, B_i) split [0, inf) into regions on which each regime
either pays nothing (x < b_i), pays the cap L (b_i <= x < B_i), or sits on its
linear tail x + c_i (x >= B_i). On every region the value is a combination of
exponentials plus a particular solution, so at fixed thresholds all pasting
conditions are linear in the coefficients. The thresholds themselves are found
by an outer root search on the unit-slope conditions.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

import numpy as np
from scipy.optimize import least_squares

from .charpoly import RegionKind, RootSet, phi, quartic_roots, single_regime_roots
from .errors import (
    IllConditionedSystem,
    NoRoot,
    NoValidCase,
    SingularParticularSystem,
)
from .model import DividendPolicy, ModelParams, swap_regimes, validate
from .valuefn import (
    ExpSegment,
    QviReport,
    ValueFunction,
    qvi_check,
)

log = logging.getLogger(__name__)

TOL_FIT = 1e-8
GAP_MIN = 1e-6
COND_MAX = 1e12

NOPAY, PAY, TAIL = "nopay", "pay", "tail"


class Ordering(Enum):
    NESTED = "nested"  # b1 <= b2 < B1 <= B2
    INTERLEAVED = "interleaved"  # b1 < B1 < b2 < B2
    NESTED_SWAPPED = "nested_swapped"  # b2 <= b1 < B2 <= B1
    INTERLEAVED_SWAPPED = "interleaved_swapped"  # b2 < B2 < b1 < B1

    @property
    def swapped(self) -> bool:
        return self in (Ordering.NESTED_SWAPPED, Ordering.INTERLEAVED_SWAPPED)

    @property
    def base(self) -> "Ordering":
        return {
            Ordering.NESTED_SWAPPED: Ordering.NESTED,
            Ordering.INTERLEAVED_SWAPPED: Ordering.INTERLEAVED,
        }.get(self, self)

    def holds(self, th: "Thresholds", gap: float = 0.0, tol: float = 0.0) -> bool:
        (b1, b2), (B1, B2) = th.lower, th.upper
        if self.swapped:
            b1, b2, B1, B2 = b2, b1, B2, B1
        if b1 < -tol:
            return False
        if self.base is Ordering.NESTED:
            return b1 <= b2 + tol and b2 + gap <= B1 + tol and B1 <= B2 + tol
        return b1 + gap <= B1 + tol and B1 + gap <= b2 + tol and b2 + gap <= B2 + tol


class Case(Enum):
    BOTH_SLOPES_ABOVE_1 = "both_slopes_above_1"
    ONE_SLOPE_AT_1 = "one_slope_at_1"
    BOTH_SLOPES_AT_1 = "both_slopes_at_1"


@dataclass(frozen=True)
class Thresholds:
    lower: tuple[float, float]
    upper: tuple[float, float]

    def swapped(self) -> "Thresholds":
        return Thresholds(self.lower[::-1], self.upper[::-1])

    def to_dict(self) -> dict[str, list[float]]:
        return {"lower": list(self.lower), "upper": list(self.upper)}


# ---------------------------------------------------------------------------
# assembly


@dataclass
class Region:
    lo: float
    hi: float
    status: tuple[str, str]
    kind: RegionKind | None = None
    active: int | None = None  # regime carrying the ODE on a single-regime region
    roots: np.ndarray = field(default_factory=lambda: np.empty(0))
    link: np.ndarray | None = None
    anchors: np.ndarray = field(default_factory=lambda: np.empty(0))
    offset: int = 0
    particular: tuple = ()

    @property
    def n_coef(self) -> int:
        return self.roots.size


@dataclass
class Layout:
    params: ModelParams
    thresholds: Thresholds
    regions: list[Region]
    breakpoints: list[float]
    n_unknowns: int

    def region_at(self, x: float) -> Region:
        """Region containing ``x`` (right-continuous convention)."""
        for reg in self.regions:
            if reg.lo <= x < reg.hi:
                return reg
        return self.regions[-1]


@functools.lru_cache(maxsize=256)
def _coupled_roots(params: ModelParams, kind: RegionKind) -> RootSet:
    return quartic_roots(params, kind)


@functools.lru_cache(maxsize=256)
def _single_roots(params: ModelParams, regime: int, pay: bool) -> RootSet:
    return single_regime_roots(params, regime, pay)


def particular_solution(params: ModelParams, region: Region) -> tuple:
    """Particular term of a region's inhomogeneous system, derived by ansatz.

    Coupled regions: constants (F_1, F_2) solving
        -(lambda_i + delta) F_i + lambda_i F_j + u_i = 0.
    Single-regime regions (other regime on x + c): a x + q0 + kappa c with
        -(lambda + delta) a + lambda = 0,  mubar a - (lambda + delta) q + lambda c + u = 0.
    Returned as ``("const", F)`` or ``("affine", a, q0, kappa)``.
    """
    d, L = params.delta, params.rate_cap
    if region.active is None:
        (l1, l2) = (r.lambda_out for r in params.regimes)
        u = np.array([L if s == PAY else 0.0 for s in region.status])
        mat = np.array([[l1 + d, -l1], [-l2, l2 + d]])
        if abs(np.linalg.det(mat)) < 1e-300:
            raise SingularParticularSystem("constant ansatz system is singular")
        return ("const", np.linalg.solve(mat, u))
    r = params.regimes[region.active]
    pay = region.status[region.active] == PAY
    u = L if pay else 0.0
    mbar = r.mu - u
    c = r.lambda_out + d
    if c == 0.0:
        raise SingularParticularSystem("affine ansatz system is singular")
    a = r.lambda_out / c
    return ("affine", a, (mbar * a + u) / c, r.lambda_out / c)


def _status(x: float, b: float, B: float) -> str:
    if x >= B:
        return TAIL
    return PAY if x >= b else NOPAY


def assemble_segments(params: ModelParams, thresholds: Thresholds) -> Layout:
    """Regions between consecutive breakpoints with roots, particular terms and unknown slots."""
    (b1, b2), (B1, B2) = thresholds.lower, thresholds.upper
    for b, B in zip(thresholds.lower, thresholds.upper):
        if not (0.0 <= b < B):
            raise ValueError(f"thresholds need 0 <= b < B, got b={b}, B={B}")
    cuts = sorted({p for p in (b1, b2, B1, B2) if p > 0.0})
    edges = [0.0] + cuts
    regions: list[Region] = []
    offset = 0
    for lo, hi in zip(edges, edges[1:] + [math.inf]):
        st = (_status(lo, b1, B1), _status(lo, b2, B2))
        reg = Region(lo=lo, hi=hi, status=st)
        if TAIL not in st:
            reg.kind = RegionKind.from_flags(st[0] == PAY, st[1] == PAY)
            rs = _coupled_roots(params, reg.kind)
            reg.roots, reg.link = rs.roots, rs.link_ratios
        elif st != (TAIL, TAIL):
            reg.active = 0 if st[1] == TAIL else 1
            pay = st[reg.active] == PAY
            reg.kind = RegionKind.SINGLE_PAY if pay else RegionKind.SINGLE_NO_PAY
            reg.roots = _single_roots(params, reg.active, pay).roots
        if reg.n_coef:
            # anchor growing modes at the right end and decaying ones at the left
            reg.anchors = np.where(reg.roots > 0.0, hi, lo)
            reg.offset = offset
            offset += reg.n_coef
            reg.particular = particular_solution(params, reg)
        regions.append(reg)
    return Layout(params, thresholds, regions, cuts, offset)


class _Lin:
    """Affine functional row . theta + const of the unknown coefficients."""

    __slots__ = ("row", "const")

    def __init__(self, n: int):
        self.row = np.zeros(n)
        self.const = 0.0

    def __sub__(self, other: "_Lin") -> "_Lin":
        out = _Lin(self.row.size)
        out.row = self.row - other.row
        out.const = self.const - other.const
        return out

    def value(self, theta: np.ndarray) -> float:
        return float(self.row @ theta + self.const)


class _System:
    def __init__(self, layout: Layout):
        self.layout = layout
        self.n = layout.n_unknowns
        self._tail: dict[int, _Lin] = {}

    def tail_const(self, i: int) -> _Lin:
        """c_i = v(b_i, i) - b_i - K for the tail v(x, i) = x + c_i."""
        if i not in self._tail:
            b = self.layout.thresholds.lower[i]
            lin = self.at(self.layout.region_at(b), i, b, 0)
            lin.const -= b + self.layout.params.fixed_cost
            self._tail[i] = lin
        return self._tail[i]

    def at(self, reg: Region, i: int, x: float, order: int) -> _Lin:
        out = _Lin(self.n)
        if reg.status[i] == TAIL:
            if order == 0:
                c = self.tail_const(i)
                out.row += c.row
                out.const = x + c.const
            elif order == 1:
                out.const = 1.0
            return out
        basis = reg.roots**order * np.exp(reg.roots * (x - reg.anchors))
        sl = slice(reg.offset, reg.offset + reg.n_coef)
        if reg.active is None:
            w = reg.link if i == 1 else 1.0
            out.row[sl] = w * basis
            if order == 0:
                out.const = float(reg.particular[1][i])
            return out
        out.row[sl] = basis
        _, a, q0, kappa = reg.particular
        if order == 0:
            c = self.tail_const(1 - i)
            out.row += kappa * c.row
            out.const = a * x + q0 + kappa * c.const
        elif order == 1:
            out.const = a
        return out

    def equations(self) -> tuple[list[_Lin], list[str]]:
        lay = self.layout
        eqs, names = [], []
        first = lay.regions[0]
        for i in range(2):
            eqs.append(self.at(first, i, 0.0, 0))
            names.append(f"v(0,{i + 1})=0")
        for left, right in zip(lay.regions, lay.regions[1:]):
            p = right.lo
            for i in range(2):
                if left.status[i] == TAIL:
                    continue
                eqs.append(self.at(left, i, p, 0) - self.at(right, i, p, 0))
                names.append(f"v({p:.6g}-,{i + 1})=v({p:.6g}+,{i + 1})")
                if right.status[i] != TAIL:
                    eqs.append(self.at(left, i, p, 1) - self.at(right, i, p, 1))
                    names.append(f"v'({p:.6g}-,{i + 1})=v'({p:.6g}+,{i + 1})")
        return eqs, names

    def slope_conditions(self, pinned: Sequence[bool]) -> tuple[list[_Lin], list[str]]:
        """v'(b_i, i) = 1 for every lower threshold not pinned at 0, and v'(B_i-, i) = 1."""
        lay = self.layout
        out, names = [], []
        for i in range(2):
            b = lay.thresholds.lower[i]
            if not pinned[i]:
                lin = self.at(lay.region_at(b), i, b, 1)
                lin.const -= 1.0
                out.append(lin)
                names.append(f"v'(b{i + 1},{i + 1})=1")
        for i in range(2):
            B = lay.thresholds.upper[i]
            left = [r for r in lay.regions if r.hi == B][0]
            lin = self.at(left, i, B, 1)
            lin.const -= 1.0
            out.append(lin)
            names.append(f"v'(B{i + 1}-,{i + 1})=1")
        return out, names


@dataclass
class InnerSolution:
    layout: Layout
    theta: np.ndarray
    residual_vector: np.ndarray
    equation_residual: float
    condition: float
    system: _System = field(repr=False)


def inner_linear_solve(
    params: ModelParams,
    thresholds: Thresholds,
    pinned: Sequence[bool] | None = None,
    cond_max: float = COND_MAX,
) -> InnerSolution:
    """Solve the pasting equations at fixed thresholds; return the slope residuals.

    ``pinned[i]`` marks a lower threshold fixed at 0 by the case, which drops
    its slope condition. By default every b_i = 0 is treated as pinned.
    """
    if pinned is None:
        pinned = tuple(b == 0.0 for b in thresholds.lower)
    layout = assemble_segments(params, thresholds)
    sysm = _System(layout)
    eqs, _ = sysm.equations()
    if len(eqs) != layout.n_unknowns:
        raise AssertionError(f"{len(eqs)} equations for {layout.n_unknowns} unknowns")
    A = np.array([e.row for e in eqs])
    rhs = -np.array([e.const for e in eqs])
    col = np.max(np.abs(A), axis=0)
    col[col == 0.0] = 1.0
    As = A / col
    row = np.max(np.abs(As), axis=1)
    row[row == 0.0] = 1.0
    As = As / row[:, None]
    cond = float(np.linalg.cond(As))
    if not np.isfinite(cond) or cond > cond_max:
        raise IllConditionedSystem(f"pasting system condition number {cond:.3g} exceeds {cond_max:.3g}")
    theta = np.linalg.solve(As, rhs / row) / col
    eq_res = float(np.max(np.abs(A @ theta - rhs))) if eqs else 0.0
    slopes, _ = sysm.slope_conditions(pinned)
    resid = np.array([s.value(theta) for s in slopes])
    return InnerSolution(layout, theta, resid, eq_res, cond, sysm)


def build_value_function(inner: InnerSolution) -> ValueFunction:
    lay, theta, sysm = inner.layout, inner.theta, inner.system
    per_regime: list[list[ExpSegment]] = [[], []]
    for i in range(2):
        for reg in lay.regions:
            if reg.status[i] == TAIL:
                c = sysm.tail_const(i).value(theta)
                per_regime[i].append(ExpSegment(reg.lo, math.inf, reg.lo, (), (), 1.0, c))
                break
            coef = theta[reg.offset : reg.offset + reg.n_coef] * np.exp(reg.roots * (reg.lo - reg.anchors))
            if reg.active is None:
                if i == 1:
                    coef = coef * reg.link
                slope, intercept = 0.0, float(reg.particular[1][i])
            else:
                _, a, q0, kappa = reg.particular
                slope = a
                intercept = q0 + kappa * sysm.tail_const(1 - i).value(theta)
            per_regime[i].append(
                ExpSegment(reg.lo, reg.hi, reg.lo, tuple(coef), tuple(reg.roots), slope, intercept)
            )
    return ValueFunction(tuple(tuple(s) for s in per_regime))


# ---------------------------------------------------------------------------
# outer threshold search


def _slots(ordering: Ordering) -> tuple[str, ...]:
    if ordering.base is Ordering.NESTED:
        return ("b1", "b2", "B1", "B2")
    return ("b1", "B1", "b2", "B2")


def _gap_bounds(ordering: Ordering, gap_min: float) -> np.ndarray:
    if ordering.base is Ordering.NESTED:
        return np.array([0.0, 0.0, gap_min, 0.0])
    return np.array([0.0, gap_min, gap_min, gap_min])


def _fixed_gaps(ordering: Ordering, case: Case, i0: int | None) -> dict[int, float] | None:
    """Gaps pinned to zero by the case; None if the case cannot occur in this ordering."""
    if case is Case.BOTH_SLOPES_ABOVE_1:
        return {}
    if case is Case.BOTH_SLOPES_AT_1:
        return {0: 0.0, 1: 0.0} if ordering.base is Ordering.NESTED else None
    return {0: 0.0} if i0 == 1 else None


def _thresholds_from_gaps(ordering: Ordering, gaps: np.ndarray) -> Thresholds:
    vals = dict(zip(_slots(ordering), np.cumsum(gaps)))
    return Thresholds((float(vals["b1"]), float(vals["b2"])), (float(vals["B1"]), float(vals["B2"])))


def _gaps_from_thresholds(ordering: Ordering, th: Thresholds) -> np.ndarray:
    vals = {"b1": th.lower[0], "b2": th.lower[1], "B1": th.upper[0], "B2": th.upper[1]}
    seq = np.array([vals[s] for s in _slots(ordering)])
    return np.diff(np.concatenate([[0.0], seq]))


def single_regime_solution(
    mu: float, sigma: float, discount: float, rate_cap: float, fixed_cost: float
) -> tuple[float, float]:
    """(b, B) of the one-regime problem, used as a continuation anchor."""
    a = 0.5 * sigma * sigma

    def roots(mbar):
        sq = math.sqrt(mbar * mbar + 4 * a * discount)
        return np.array([(-mbar - sq) / (2 * a), (-mbar + sq) / (2 * a)])

    z0, zL = roots(mu), roots(mu - rate_cap)
    F = rate_cap / discount

    def solve(b, B):
        # unknowns: 2 coefs on [0,b) (if b>0), 2 on [b,B); tail x + c, c = v(b) - b - K
        if b > 0:
            e = lambda z, x, s: np.exp(z * (x - s))  # noqa: E731
            s0 = np.where(z0 > 0, b, 0.0)
            s1 = np.where(zL > 0, B, b)
            A = np.zeros((4, 4))
            rhs = np.zeros(4)
            A[0, :2] = e(z0, 0.0, s0)
            A[1, :2] = e(z0, b, s0)
            A[1, 2:] = -e(zL, b, s1)
            rhs[1] = F
            A[2, :2] = z0 * e(z0, b, s0)
            A[2, 2:] = -zL * e(zL, b, s1)
            # v(B-) = B + v(b) - b - K
            A[3, 2:] = e(zL, B, s1) - e(zL, b, s1)
            rhs[3] = B - b - fixed_cost
            th = np.linalg.solve(A, rhs)
            r1 = float(z0 @ (th[:2] * e(z0, b, s0))) - 1.0
            r2 = float(zL @ (th[2:] * e(zL, B, s1))) - 1.0
            return np.array([r1, r2])
        s1 = np.where(zL > 0, B, 0.0)
        e = np.exp(zL * (0.0 - s1))
        eB = np.exp(zL * (B - s1))
        A = np.array([e, eB])
        th = np.linalg.solve(A, np.array([-F, B - fixed_cost - F]))
        return np.array([float(zL @ (th * eB)) - 1.0])

    scale = (mu + rate_cap) / discount
    best = None
    for B in np.geomspace(1e-2, 3.0, 25) * max(scale, fixed_cost):
        for frac in np.linspace(0.05, 0.9, 12):
            try:
                r = solve(frac * B, B)
            except np.linalg.LinAlgError:
                continue
            n = float(np.max(np.abs(r)))
            if np.isfinite(n) and (best is None or n < best[0]):
                best = (n, frac * B, B)
    if best is not None:
        sol = least_squares(
            lambda g: solve(g[0], g[0] + g[1]),
            [best[1], best[2] - best[1]],
            bounds=([0.0, 1e-9], [np.inf, np.inf]),
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
        )
        if np.max(np.abs(sol.fun)) < 1e-9 and sol.x[0] > 1e-9:
            return float(sol.x[0]), float(sol.x[0] + sol.x[1])
    sol = least_squares(
        lambda g: solve(0.0, g[0]), [max(scale, fixed_cost)], bounds=([1e-9], [np.inf]), xtol=1e-15
    )
    return 0.0, float(sol.x[0])


def _initial_guesses(params: ModelParams) -> list[Thresholds]:
    d, L, K = params.delta, params.rate_cap, params.fixed_cost
    rs = params.regimes
    anchors = []
    for extra in (0.0, 1.0):
        pair = [
            single_regime_solution(r.mu, r.sigma, d + extra * r.lambda_out, L, K) for r in rs
        ]
        anchors.append(Thresholds((pair[0][0], pair[1][0]), (pair[0][1], pair[1][1])))
    w = params.lam[::-1] / params.lam.sum()  # stationary weights
    avg = single_regime_solution(
        float(w @ params.mu), float(math.sqrt(w @ params.sigma**2)), d, L, K
    )
    anchors.append(Thresholds((avg[0], avg[0]), (avg[1], avg[1])))
    return anchors


def _project(ordering: Ordering, guess: Thresholds, lb: np.ndarray, fixed: dict[int, float]) -> np.ndarray:
    vals = {"b1": guess.lower[0], "b2": guess.lower[1], "B1": guess.upper[0], "B2": guess.upper[1]}
    seq = np.array([vals[s] for s in _slots(ordering)])
    seq = np.maximum.accumulate(seq)
    gaps = np.diff(np.concatenate([[0.0], seq]))
    for k, v in fixed.items():
        gaps[k] = v
    gaps = np.maximum(gaps, lb + np.where(lb > 0, 0.05 * max(seq[-1], 1.0), 0.0))
    return gaps


def outer_threshold_solve(
    params: ModelParams,
    ordering: Ordering,
    case: Case,
    i0: int | None = None,
    tol_fit: float = TOL_FIT,
    gap_min: float = GAP_MIN,
    guesses: Sequence[Thresholds] | None = None,
) -> Thresholds:
    """Thresholds zeroing the slope residuals within the ordering's box constraints.

    ``ordering`` must be an unswapped ordering; mirror orderings are handled by
    relabeling in :func:`solve_candidate`.
    """
    if ordering.swapped:
        raise ValueError("solve mirror orderings on swapped parameters")
    fixed = _fixed_gaps(ordering, case, i0)
    if fixed is None:
        raise NoRoot(f"{case.name} with i0={i0} cannot occur in {ordering.name}")
    lb_full = _gap_bounds(ordering, gap_min)
    free = [k for k in range(4) if k not in fixed]
    pinned = (0 in fixed, ordering.base is Ordering.NESTED and 1 in fixed)

    def expand(g):
        full = np.zeros(4)
        for k, v in fixed.items():
            full[k] = v
        full[free] = g
        return full

    def residual(g):
        try:
            th = _thresholds_from_gaps(ordering, expand(g))
            return inner_linear_solve(params, th, pinned).residual_vector
        except (IllConditionedSystem, np.linalg.LinAlgError, ValueError):
            return np.full(len(free), 1e3)

    if guesses is None:
        guesses = _initial_guesses(params)
    starts = []
    for gs in guesses:
        base = _project(ordering, gs, lb_full, fixed)[free]
        starts.append(base)
        for scale in (0.6, 1.5):
            starts.append(np.maximum(base * scale, lb_full[free]))
    best = None
    for x0 in starts:
        sol = least_squares(
            residual,
            x0,
            bounds=(lb_full[free], np.full(len(free), np.inf)),
            method="trf",
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
            max_nfev=400,
        )
        err = float(np.max(np.abs(sol.fun)))
        if best is None or err < best[0]:
            best = (err, sol.x)
        if err <= tol_fit:
            break
    if best is None or best[0] > tol_fit:
        raise NoRoot(
            f"{ordering.name}/{case.name}: best slope residual {best[0] if best else float('nan'):.3g}"
        )
    return _thresholds_from_gaps(ordering, expand(best[1]))


# ---------------------------------------------------------------------------
# verification and case selection


def smooth_fit_residuals(v: ValueFunction, thresholds: Thresholds, fixed_cost: float) -> dict[str, float]:
    """Pasting residuals measured directly on the assembled value function.

    Value residuals are scaled by max(1, |v|); slope residuals are absolute.
    """
    out: dict[str, float] = {}
    for i in range(v.n_regimes):
        out[f"v(0,{i + 1})"] = abs(float(v.eval(0.0, i)))
        for p in v.breakpoints(i):
            left, right = v.left_limit(p, i, 0), float(v.eval(p, i))
            out[f"value jump at {p:.6g}, regime {i + 1}"] = abs(right - left) / max(1.0, abs(right))
            d_l, d_r = v.left_limit(p, i, 1), float(v.eval_deriv(p, i))
            if p != v.tail_start(i):
                out[f"slope jump at {p:.6g}, regime {i + 1}"] = abs(d_r - d_l)
        b, B = thresholds.lower[i], thresholds.upper[i]
        if b > 0.0:
            out[f"v'(b{i + 1}-,{i + 1})-1"] = abs(v.left_limit(b, i, 1) - 1.0)
            out[f"v'(b{i + 1}+,{i + 1})-1"] = abs(float(v.eval_deriv(b, i)) - 1.0)
        out[f"v'(B{i + 1}-,{i + 1})-1"] = abs(v.left_limit(B, i, 1) - 1.0)
        target = float(v.eval(b, i)) + B - b - fixed_cost
        out[f"v(B{i + 1})-Mv(B{i + 1})"] = abs(float(v.eval(B, i)) - target) / max(1.0, abs(target))
    return out


def side_conditions(
    params: ModelParams, v: ValueFunction, thresholds: Thresholds, case: Case, i0: int | None
) -> dict[str, float]:
    """Slack of the case conditions at x = 0 (non-negative means satisfied).

    The coefficient form of the regime-2 condition is evaluated as printed,
    sum_j c_j phi_1(z_j) z_j - lambda_1 over the regime-1 coefficients of the
    first region. It equals lambda_1 (v'(0,2) - 1) and is reported alongside.
    """
    s1, s2 = (float(v.eval_deriv(0.0, i)) for i in range(2))
    seg = v.segments[0][0]
    r1 = params.regimes[0]
    mbar1 = r1.mu - (params.rate_cap if thresholds.lower[0] == 0.0 else 0.0)
    z, c = np.array(seg.exponents), np.array(seg.coeffs)
    printed = float(np.sum(c * phi(r1, mbar1, params.delta, z) * z)) - r1.lambda_out
    out = {"v'(0,1)": s1, "v'(0,2)": s2, "coefficient_form_regime2": printed}
    if case is Case.BOTH_SLOPES_ABOVE_1:
        out["slack"] = min(s1 - 1.0, s2 - 1.0)
    elif case is Case.ONE_SLOPE_AT_1:
        at, above = (s1, s2) if i0 == 1 else (s2, s1)
        out["slack"] = min(1.0 - at, above - 1.0)
    else:
        out["slack"] = min(1.0 - s1, 1.0 - s2)
    return out


_FLIP = {
    Ordering.NESTED: Ordering.NESTED_SWAPPED,
    Ordering.NESTED_SWAPPED: Ordering.NESTED,
    Ordering.INTERLEAVED: Ordering.INTERLEAVED_SWAPPED,
    Ordering.INTERLEAVED_SWAPPED: Ordering.INTERLEAVED,
}


@dataclass
class SolutionBundle:
    params: ModelParams
    ordering: Ordering
    case: Case
    i0: int | None
    thresholds: Thresholds
    value: ValueFunction
    policy: DividendPolicy
    residuals: dict[str, Any] = field(default_factory=dict)
    qvi: QviReport | None = None
    accepted: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "ordering": self.ordering.value,
            "case": self.case.value,
            "i0": self.i0,
            "thresholds": self.thresholds.to_dict(),
            "value_function": self.value.to_dict(),
            "policy": self.policy.to_dict(),
            "residuals": self.residuals,
        }


def candidates() -> list[tuple[Ordering, Case, int | None]]:
    """(ordering, case, i0) in the fixed enumeration order."""
    out = []
    for ordering in (
        Ordering.NESTED,
        Ordering.INTERLEAVED,
        Ordering.NESTED_SWAPPED,
        Ordering.INTERLEAVED_SWAPPED,
    ):
        out.append((ordering, Case.BOTH_SLOPES_ABOVE_1, None))
        out += [(ordering, Case.ONE_SLOPE_AT_1, k) for k in (1, 2)]
        if ordering.base is Ordering.NESTED:
            out.append((ordering, Case.BOTH_SLOPES_AT_1, None))
    return out


def solve_candidate(
    params: ModelParams,
    ordering: Ordering,
    case: Case,
    i0: int | None = None,
    tol_fit: float = TOL_FIT,
    gap_min: float = GAP_MIN,
    qvi_grid: np.ndarray | None = None,
) -> SolutionBundle:
    """Solve one (ordering, case) candidate and attach every acceptance diagnostic."""
    validate(params, analytic=True)
    work = swap_regimes(params) if ordering.swapped else params
    i0_work = None if i0 is None else (3 - i0 if ordering.swapped else i0)
    th = outer_threshold_solve(work, ordering.base, case, i0_work, tol_fit, gap_min)
    pinned = (th.lower[0] == 0.0 and case is not Case.BOTH_SLOPES_ABOVE_1, case is Case.BOTH_SLOPES_AT_1)
    inner = inner_linear_solve(work, th, pinned)
    v = build_value_function(inner)
    if ordering.swapped:
        th, v = th.swapped(), v.swapped()
    policy = DividendPolicy.threshold(th.lower, th.upper, params.rate_cap)
    fit = smooth_fit_residuals(v, th, params.fixed_cost)
    side = side_conditions(params, v, th, case, i0)
    report = qvi_check(v, params, qvi_grid)
    fit_max = max(fit.values())
    side_ok = side["slack"] > tol_fit if case is Case.BOTH_SLOPES_ABOVE_1 else side["slack"] >= -tol_fit
    order_ok = ordering.holds(th, gap=0.5 * gap_min)
    residuals = {
        "smooth_fit_max": fit_max,
        "inner_equation_residual": inner.equation_residual,
        "condition_number": inner.condition,
        "side_conditions": side,
        "side_slack": side["slack"],
        "qvi": report.to_dict() | {"grid": None},
        "qvi_max": max(
            max(report.gen_max),
            max(report.gen_cont_absmax),
            -min(report.gap_min),
            max(report.gap_intervention_absmax),
            max(report.complementarity_max),
        ),
        "checks": {
            "smooth_fit": fit_max <= tol_fit,
            "side_conditions": side_ok,
            "ordering": order_ok,
            "qvi": report.passed,
        },
    }
    ok = all(residuals["checks"].values())
    return SolutionBundle(params, ordering, case, i0, th, v, policy, residuals, report, ok)


def classify_and_solve(
    params: ModelParams,
    tol_fit: float = TOL_FIT,
    gap_min: float = GAP_MIN,
    exhaustive: bool = False,
) -> SolutionBundle:
    """First candidate passing every check, in the fixed enumeration order.

    With ``exhaustive=True`` every candidate is solved and all passers are
    logged; the returned bundle is still the first passer.
    """
    validate(params, analytic=True)
    passers: list[SolutionBundle] = []
    failures: list[str] = []
    for ordering, case, i0 in candidates():
        if _fixed_gaps(ordering.base, case, None if i0 is None else (3 - i0 if ordering.swapped else i0)) is None:
            continue
        try:
            bundle = solve_candidate(params, ordering, case, i0, tol_fit, gap_min)
        except (NoRoot, IllConditionedSystem) as exc:
            failures.append(f"{ordering.value}/{case.value}/i0={i0}: {exc}")
            continue
        if bundle.accepted:
            passers.append(bundle)
            if not exhaustive:
                break
        else:
            failed = [k for k, ok in bundle.residuals["checks"].items() if not ok]
            failures.append(f"{ordering.value}/{case.value}/i0={i0}: failed {failed}")
    for f in failures:
        log.debug("candidate rejected: %s", f)
    if not passers:
        raise NoValidCase(
            "no (ordering, case) candidate passed; use the grid oracle. Details: " + "; ".join(failures)
        )
    if len(passers) > 1:
        log.info(
            "several candidates pass: %s",
            ", ".join(f"{b.ordering.value}/{b.case.value}/i0={b.i0}" for b in passers),
        )
    return passers[0]
