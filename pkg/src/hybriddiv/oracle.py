"""Finite-difference policy-iteration solver of the coupled QVI on a truncated grid.

The grid is x_k = k h on [0, x_max] for every regime. At each interior node the
controller picks one of three actions: pay rate 0, pay rate L, or jump to the
best lower node. For a fixed choice the discrete equations are linear with an
M-matrix, so Howard's policy iteration converges in finitely many sweeps.
Drift is differenced centrally where that keeps the stencil monotone and
upwinded forward elsewhere; pure upwinding is available as ``scheme="upwind"``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import NotConverged
from .model import ModelParams, validate

RATE_ZERO, RATE_CAP, IMPULSE = 0, 1, 2
ACTION_NAMES = {RATE_ZERO: "rate0", RATE_CAP: "rateL", IMPULSE: "impulse"}


@dataclass(frozen=True)
class GridSolution:
    x_max: float
    n_cells: int
    values: np.ndarray  # (n_regimes, n_cells + 1)
    actions: np.ndarray  # same shape, RATE_ZERO / RATE_CAP / IMPULSE
    targets: np.ndarray  # impulse target node, -1 elsewhere
    iterations: int
    residual: float
    scheme: str = "hybrid"

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.x_max, self.n_cells + 1)

    @property
    def h(self) -> float:
        return self.x_max / self.n_cells

    def interp(self, x, i: int):
        return np.interp(x, self.grid, self.values[i])

    def to_dict(self) -> dict[str, Any]:
        return {
            "x_max": self.x_max,
            "n_cells": self.n_cells,
            "iterations": self.iterations,
            "residual": self.residual,
        }


def default_x_max(params: ModelParams) -> float:
    """Suggested truncation; the fixed-cost term keeps large-K upper thresholds inside."""
    return 3.0 * (params.mu_max + params.rate_cap) / params.delta + 2.0 * params.fixed_cost


def _generator_parts(params: ModelParams, h: float, scheme: str = "hybrid"):
    """Per regime and rate: (lower, diag, upper, u) stencil of L_i(u) v + u.

    ``upwind`` uses forward differences for the drift. ``hybrid`` uses central
    differences wherever they keep the stencil monotone (h <= sigma^2 / drift)
    and falls back to upwind elsewhere.
    """
    if scheme not in ("upwind", "hybrid"):
        raise ValueError(f"unknown scheme {scheme!r}")
    parts = {}
    for i, r in enumerate(params.regimes):
        a = 0.5 * r.sigma**2 / h**2
        for act, u in ((RATE_ZERO, 0.0), (RATE_CAP, params.rate_cap)):
            drift = r.mu - u
            kill = params.delta + r.lambda_out
            if scheme == "hybrid" and h * drift <= r.sigma**2:
                c = 0.5 * drift / h
                parts[i, act] = (a - c, -2.0 * a - kill, a + c, u)
            else:
                b = drift / h
                parts[i, act] = (a, -2.0 * a - b - kill, a + b, u)
    return parts


def _best_targets(v: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Running argmax of v_m - m h over m < k, for each k (k = 0 gets -1)."""
    n1 = v.size
    score = v - h * np.arange(n1)
    best = np.full(n1, -np.inf)
    arg = np.full(n1, -1)
    cur, cur_arg = -np.inf, -1
    for k in range(n1):
        best[k], arg[k] = cur, cur_arg
        if score[k] > cur:
            cur, cur_arg = score[k], k
    return best, arg


def _residuals(params, v, h, parts, q):
    """Discrete F for each action at interior nodes: shape (3, n_reg, n-1), plus targets."""
    n_reg, n1 = v.shape
    F = np.zeros((3, n_reg, n1))
    targets = np.full((n_reg, n1), -1)
    for i in range(n_reg):
        coupling = sum(q[i, j] * v[j, 1:-1] for j in range(n_reg) if j != i)
        for act in (RATE_ZERO, RATE_CAP):
            lo, dg, up, u = parts[i, act]
            F[act, i, 1:-1] = lo * v[i, :-2] + dg * v[i, 1:-1] + up * v[i, 2:] + coupling + u
        best, arg = _best_targets(v[i], h)
        k = np.arange(n1)
        F[IMPULSE, i, 1:-1] = (best + k * h - params.fixed_cost - v[i])[1:-1]
        targets[i] = arg
    return F, targets


def _assemble(params, actions, targets, h, parts, q, n):
    n_reg = params.n_regimes
    n1 = n + 1
    rows, cols, vals = [], [], []
    rhs = np.zeros(n_reg * n1)
    for i in range(n_reg):
        base = i * n1
        rows.append([base])
        cols.append([base])
        vals.append([1.0])
        # Neumann slope 1 at x_max
        rows.append([base + n, base + n])
        cols.append([base + n, base + n - 1])
        vals.append([1.0, -1.0])
        rhs[base + n] = h
        k = np.arange(1, n)
        act = actions[i, 1:-1]
        for a in (RATE_ZERO, RATE_CAP):
            kk = k[act == a]
            if kk.size == 0:
                continue
            lo, dg, up, u = parts[i, a]
            # rows store -(L v + u) = 0 so the matrix is an M-matrix
            rows += [base + kk] * 3
            cols += [base + kk - 1, base + kk, base + kk + 1]
            vals += [np.full(kk.size, -lo), np.full(kk.size, -dg), np.full(kk.size, -up)]
            for j in range(n_reg):
                if j != i:
                    rows.append(base + kk)
                    cols.append(j * n1 + kk)
                    vals.append(np.full(kk.size, -q[i, j]))
            rhs[base + kk] = u
        kk = k[act == IMPULSE]
        if kk.size:
            m = targets[i, kk]
            rows += [base + kk, base + kk]
            cols += [base + kk, base + m]
            vals += [np.ones(kk.size), -np.ones(kk.size)]
            rhs[base + kk] = (kk - m) * h - params.fixed_cost
    mat = sp.csr_matrix(
        (np.concatenate([np.ravel(x) for x in vals]),
         (np.concatenate([np.ravel(x) for x in rows]), np.concatenate([np.ravel(x) for x in cols]))),
        shape=(n_reg * n1, n_reg * n1),
    )
    return mat, rhs


def _howard(params, x_max, n, actions, targets, tol, max_iter, scheme):
    h = x_max / n
    n_reg = params.n_regimes
    parts = _generator_parts(params, h, scheme)
    q = params.generator()
    v = np.zeros((n_reg, n + 1))
    for it in range(1, max_iter + 1):
        mat, rhs = _assemble(params, actions, targets, h, parts, q, n)
        v_new = spsolve(mat.tocsc(), rhs).reshape(n_reg, n + 1)
        v_new[:, 0] = 0.0  # the Dirichlet row is exact; drop solver round-off
        F, best_t = _residuals(params, v_new, h, parts, q)
        current = np.take_along_axis(F, actions[None], axis=0)[0]
        gain = np.max(F, axis=0) - current
        scale = max(1.0, float(np.max(np.abs(v_new))))
        switch = gain > 1e-13 * scale * max(1.0, 1.0 / h**2)
        switch[:, [0, n]] = False
        new_actions = np.where(switch, np.argmax(F, axis=0), actions)
        new_targets = np.where(new_actions == IMPULSE, best_t, -1)
        change = float(np.max(np.abs(v_new - v)))
        v = v_new
        settled = np.array_equal(new_actions, actions) and np.array_equal(new_targets, targets)
        if settled or (change <= tol * scale and it > 1):
            res = float(np.max(np.abs(np.max(F[:, :, 1:-1], axis=0))))
            return v, actions, targets, it, res
        actions, targets = new_actions, new_targets
    raise NotConverged(f"policy iteration did not settle within {max_iter} sweeps at n_cells={n}")


def _refine_policy(actions, targets, n_coarse, n_fine):
    """Nearest-node transfer of a coarse policy to a finer grid."""
    ratio = n_coarse / n_fine
    idx = np.rint(np.arange(n_fine + 1) * ratio).astype(int)
    act = actions[:, idx]
    tgt = np.where(act == IMPULSE, np.rint(targets[:, idx] / ratio).astype(int), -1)
    k = np.arange(n_fine + 1)
    bad = (act == IMPULSE) & ((tgt < 0) | (tgt >= k))
    act = np.where(bad, RATE_CAP, act)
    tgt = np.where(bad, -1, tgt)
    return act, tgt


def solve_grid(
    params: ModelParams,
    x_max: float | None = None,
    n_cells: int = 4000,
    tol: float = 1e-10,
    max_iter: int = 500,
    scheme: str = "hybrid",
    coarse_cells: int = 250,
) -> GridSolution:
    """Howard iteration to the fixed point of the discrete QVI.

    Policy iteration on impulse problems can move a free boundary by only one
    cell per sweep, so the policy is first solved on a cascade of coarser grids
    (halving down to ``coarse_cells``) and transferred up as the starting guess.
    """
    validate(params)
    if x_max is None:
        x_max = default_x_max(params)
    if n_cells < 2:
        raise ValueError("n_cells must be at least 2")
    n = int(n_cells)
    levels = [n]
    while levels[-1] // 2 >= coarse_cells:
        levels.append(levels[-1] // 2)
    levels.reverse()
    n_reg = params.n_regimes
    actions = np.full((n_reg, levels[0] + 1), RATE_ZERO)
    targets = np.full((n_reg, levels[0] + 1), -1)
    total = 0
    prev = levels[0]
    for m in levels:
        if m != prev:
            actions, targets = _refine_policy(actions, targets, prev, m)
        v, actions, targets, it, res = _howard(
            params, float(x_max), m, actions, targets, tol, max_iter, scheme
        )
        total += it
        prev = m
    return GridSolution(float(x_max), n, v, actions, targets, total, res, scheme)


def extract_boundaries(sol: GridSolution) -> dict[str, list[float]]:
    """Free boundaries per regime read off the action labels.

    ``upper``: first impulse node. ``lower``: its impulse target.
    ``rate_switch``: first node paying the cap (0 if it pays from the start).
    """
    x = sol.grid
    lower, upper, switch = [], [], []
    for i in range(sol.values.shape[0]):
        imp = np.nonzero(sol.actions[i] == IMPULSE)[0]
        if imp.size:
            k = int(imp[0])
            upper.append(float(x[k]))
            lower.append(float(x[sol.targets[i, k]]))
        else:
            upper.append(float("nan"))
            lower.append(float("nan"))
        pay = np.nonzero(sol.actions[i, 1:] == RATE_CAP)[0]
        switch.append(float(x[pay[0] + 1]) if pay.size else float("nan"))
        # a regime paying from the first interior node pays from 0
        if pay.size and pay[0] == 0:
            switch[-1] = 0.0
    return {"lower": lower, "upper": upper, "rate_switch": switch}


def labels_monotone(sol: GridSolution) -> bool:
    """Rate-0 nodes precede rate-L nodes precede impulse nodes in every regime."""
    for i in range(sol.actions.shape[0]):
        a = sol.actions[i, 1:-1]
        if np.any(np.diff(a) < 0):
            return False
    return True


def grid_table(sol: GridSolution, params: ModelParams) -> list[tuple]:
    """Rows in the value-table CSV schema.

    ``deriv`` is the forward difference, ``generator_residual`` the discrete
    max over rates and ``M_value`` the discrete intervention value.
    """
    x, h = sol.grid, sol.h
    parts = _generator_parts(params, h, sol.scheme)
    F, _ = _residuals(params, sol.values, h, parts, params.generator())
    gen = np.max(F[:2], axis=0)
    gen[:, [0, -1]] = np.nan
    out = []
    for i in range(sol.values.shape[0]):
        v = sol.values[i]
        d = np.append(np.diff(v) / h, 1.0)
        m_val = F[IMPULSE, i] + v
        m_val[0] = np.nan
        m_val[-1] = _best_targets(v, h)[0][-1] + x[-1] - params.fixed_cost
        for k in range(v.size):
            out.append((x[k], i + 1, v[k], d[k], gen[i, k], m_val[k]))
    return out
