"""Characteristic equations of the regime-coupled ODE systems.

On a region where regime ``i`` pays the rate ``u_i`` the homogeneous part of the
coupled system has exponential solutions ``exp(z x)`` with ``z`` a root of

    phi_1(z) phi_2(z) = lambda_1 lambda_2,
    phi_i(z) = -sigma_i^2 z^2 / 2 - mubar_i z + (lambda_i + delta),

where ``mubar_i = mu_i - u_i``. Regime-2 coefficients are tied to regime-1
coefficients through ``phi_1(z) / lambda_1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import RootStructureViolated
from .model import ModelParams, RegimeParams

TOL_ROOT = 1e-10
_DISTINCT = 1e-8


class RegionKind(Enum):
    """Which regimes pay the rate cap on a region.

    Coupled kinds carry one flag per regime; single kinds describe a region where
    the other regime sits on its linear tail.
    """

    NO_PAY_NO_PAY = (False, False)
    PAY_NO_PAY = (True, False)
    NO_PAY_PAY = (False, True)
    PAY_PAY = (True, True)
    SINGLE_NO_PAY = (False,)
    SINGLE_PAY = (True,)

    @property
    def coupled(self) -> bool:
        return len(self.value) == 2

    @property
    def pays(self) -> tuple[bool, ...]:
        return self.value

    @classmethod
    def from_flags(cls, *pays: bool) -> "RegionKind":
        return cls(tuple(bool(p) for p in pays))

    def effective_drifts(self, params: ModelParams) -> tuple[float, ...]:
        if not self.coupled:
            raise ValueError("single-regime kinds need a regime index; use effective_drift()")
        return tuple(r.mu - (params.rate_cap if p else 0.0) for r, p in zip(params.regimes, self.pays))


@dataclass(frozen=True)
class RootSet:
    roots: np.ndarray
    link_ratios: np.ndarray | None = None


def phi(regime: RegimeParams, effective_drift: float, delta: float, z):
    """-sigma^2 z^2 / 2 - mubar z + (lambda + delta)."""
    z = np.asarray(z, dtype=float)
    return -0.5 * regime.sigma**2 * z * z - effective_drift * z + (regime.lambda_out + delta)


def quartic_coefficients(params: ModelParams, kind: RegionKind) -> np.ndarray:
    """Monomial coefficients (highest degree first) of phi_1 phi_2 - lambda_1 lambda_2."""
    r1, r2 = params.regimes
    m1, m2 = kind.effective_drifts(params)
    a1, a2 = 0.5 * r1.sigma**2, 0.5 * r2.sigma**2
    c1, c2 = r1.lambda_out + params.delta, r2.lambda_out + params.delta
    # phi_1 phi_2 = (a1 z^2 + m1 z - c1)(a2 z^2 + m2 z - c2)
    return np.array(
        [
            a1 * a2,
            a1 * m2 + a2 * m1,
            m1 * m2 - a1 * c2 - a2 * c1,
            -(m1 * c2 + m2 * c1),
            c1 * c2 - r1.lambda_out * r2.lambda_out,
        ]
    )


def residual_scale(coeffs: np.ndarray, z) -> np.ndarray:
    """sum_k |c_k| |z|^k, the rounding scale of a polynomial evaluated at z."""
    return np.polyval(np.abs(coeffs), np.abs(np.asarray(z, dtype=float)))


def _polish(coeffs: np.ndarray, z: float, steps: int = 8) -> float:
    dcoeffs = np.polyder(coeffs)
    best, best_res = z, abs(np.polyval(coeffs, z))
    for _ in range(steps):
        d = np.polyval(dcoeffs, best)
        if d == 0.0:
            break
        step = np.polyval(coeffs, best) / d
        damp = 1.0
        while damp > 1e-4:
            cand = best - damp * step
            res = abs(np.polyval(coeffs, cand))
            if res < best_res:
                best, best_res = cand, res
                break
            damp *= 0.5
        else:
            break
        if best_res == 0.0:
            break
    return float(best)


def _check_distinct(roots: np.ndarray) -> None:
    scale = max(1.0, float(np.max(np.abs(roots))))
    gaps = np.diff(roots)
    if np.any(gaps < _DISTINCT * scale):
        raise RootStructureViolated(
            f"near-coincident characteristic roots {roots.tolist()}; perturb the parameters "
            "(repeated-root solution forms are not supported)"
        )


def quartic_roots(params: ModelParams, kind: RegionKind, tol_root: float = TOL_ROOT) -> RootSet:
    """Four sorted real roots z1 < z2 < 0 < z3 < z4 and their regime-2 link ratios."""
    if not kind.coupled:
        raise ValueError(f"{kind} is not a coupled region kind")
    coeffs = quartic_coefficients(params, kind)
    raw = np.roots(coeffs)
    mag = max(1.0, float(np.max(np.abs(raw))))
    if np.any(np.abs(raw.imag) > 1e-6 * mag):
        raise RootStructureViolated(f"complex characteristic roots {raw.tolist()} for {kind.name}")
    roots = np.sort(np.array([_polish(coeffs, float(z)) for z in raw.real]))
    if roots.size != 4 or not (roots[1] < 0.0 < roots[2]):
        raise RootStructureViolated(f"sign pattern z1<z2<0<z3<z4 fails: {roots.tolist()}")
    _check_distinct(roots)

    r1, r2 = params.regimes
    m1, m2 = kind.effective_drifts(params)
    phi1 = phi(r1, m1, params.delta, roots)
    phi2 = phi(r2, m2, params.delta, roots)
    lam1, lam2 = r1.lambda_out, r2.lambda_out
    prod_res = np.abs(phi1 * phi2 - lam1 * lam2)
    # one ulp of a large root already moves the quartic by ~eps * sum |c_k| |z|^k,
    # so the residual is measured against that backward-error scale
    if np.any(prod_res > tol_root * np.maximum(residual_scale(coeffs, roots), 1.0)):
        raise RootStructureViolated(f"root residuals {prod_res.tolist()} exceed tolerance")
    ratios = phi1 / lam1
    return RootSet(roots=roots, link_ratios=ratios)


def single_regime_roots(params: ModelParams, regime: int, pay: bool) -> RootSet:
    """Roots of sigma^2 z^2 / 2 + mubar z - (lambda + delta) = 0 for regime index ``regime``."""
    r = params.regimes[regime]
    mbar = r.mu - (params.rate_cap if pay else 0.0)
    a = 0.5 * r.sigma**2
    c = r.lambda_out + params.delta
    disc = mbar * mbar + 4.0 * a * c
    sq = np.sqrt(disc)
    # cancellation-free pair: q = -(mbar + sign(mbar) sq)/2, roots q/a and -c/q
    q = -0.5 * (mbar + np.copysign(sq, mbar))
    roots = np.sort(np.array([q / a, -c / q]))
    if not (roots[0] < 0.0 < roots[1]):
        raise RootStructureViolated(f"single-regime roots {roots.tolist()} lack opposite signs")
    _check_distinct(roots)
    return RootSet(roots=roots, link_ratios=None)
