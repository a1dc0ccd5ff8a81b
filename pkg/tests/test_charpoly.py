import math

import numpy as np
import pytest
from hypothesis import given

from hybriddiv.charpoly import (
    TOL_ROOT,
    RegionKind,
    phi,
    quartic_coefficients,
    quartic_roots,
    residual_scale,
    single_regime_roots,
)
from hybriddiv.model import RegimeParams, make_params, swap_regimes

from conftest import random_params, reference_params, valid_params

COUPLED = (RegionKind.NO_PAY_NO_PAY, RegionKind.PAY_NO_PAY, RegionKind.NO_PAY_PAY, RegionKind.PAY_PAY)


def bisection_roots(params, kind, n_grid=4001):
    """Independent oracle: sign changes of phi_1 phi_2 - lambda_1 lambda_2 refined by bisection."""
    r1, r2 = params.regimes
    m1, m2 = kind.effective_drifts(params)
    f = lambda z: phi(r1, m1, params.delta, z) * phi(r2, m2, params.delta, z) - r1.lambda_out * r2.lambda_out  # noqa: E731
    # Cauchy bound on the root moduli of the monic quartic
    c = quartic_coefficients(params, kind)
    bound = 1.0 + float(np.max(np.abs(c[1:] / c[0])))
    # a geometric grid resolves both tiny and large roots
    pos = np.geomspace(1e-9, bound, n_grid)
    grid = np.concatenate([-pos[::-1], pos])
    vals = f(grid)
    roots = []
    for k in np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]:
        lo, hi = grid[k], grid[k + 1]
        flo = f(lo)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            fm = f(mid)
            if np.sign(fm) == np.sign(flo):
                lo, flo = mid, fm
            else:
                hi = mid
            if hi - lo <= 4e-16 * max(1.0, abs(mid)):
                break
        roots.append(0.5 * (lo + hi))
    return np.array(roots)


def test_phi_at_zero_is_lambda_plus_delta():
    r = RegimeParams(mu=1.0, sigma=2.0, lambda_out=0.7)
    assert phi(r, 1.0, 0.3, 0.0) == pytest.approx(1.0)


def test_phi_direct_substitution():
    r = RegimeParams(mu=1.0, sigma=math.sqrt(2.0), lambda_out=0.5)
    assert phi(r, 1.0, 0.1, 1.0) == pytest.approx(-1.4, abs=1e-14)


def test_symmetric_quartic_factors():
    # mubar = 1, sigma^2/2 = 1: phi = +-lambda gives z^2 + z - 0.1 = 0 and z^2 + z - 1.1 = 0
    p = make_params((1.0, 1.0), (math.sqrt(2.0), math.sqrt(2.0)), (0.5, 0.5), 0.1, 0.3, 1.0)
    rs = quartic_roots(p, RegionKind.NO_PAY_NO_PAY)
    expected = np.sort([(-1 + s * math.sqrt(1 + 4 * c)) / 2 for s in (-1, 1) for c in (0.1, 1.1)])
    np.testing.assert_allclose(rs.roots, expected, rtol=0, atol=1e-12)
    np.testing.assert_allclose(rs.roots, [-1.6619, -1.0916, 0.0916, 0.6619], atol=5e-5)


def test_single_regime_example():
    p = make_params((2.0, 1.5), (1.0, math.sqrt(2.0)), (0.5, 0.5), 0.1, 0.5, 1.0)
    rs = single_regime_roots(p, 1, pay=True)
    expected = [-(1 + math.sqrt(3.4)) / 2, (-1 + math.sqrt(3.4)) / 2]
    np.testing.assert_allclose(rs.roots, expected, rtol=1e-14)
    np.testing.assert_allclose(rs.roots, [-1.4219544457292887, 0.4219544457292887], rtol=1e-14)


@given(valid_params(sigma_min=0.05))
def test_single_regime_vieta(p):
    for i in range(2):
        for pay in (False, True):
            z = single_regime_roots(p, i, pay).roots
            r = p.regimes[i]
            a = 0.5 * r.sigma**2
            mbar = r.mu - (p.rate_cap if pay else 0.0)
            assert z[0] < 0.0 < z[1]
            assert z[0] * z[1] == pytest.approx(-(r.lambda_out + p.delta) / a, rel=1e-12)
            assert z[0] + z[1] == pytest.approx(-mbar / a, rel=1e-12, abs=1e-12)


@given(valid_params(sigma_min=0.05))
def test_sign_pattern_and_backward_residual(p):
    """Holds on a wide box, including roots of magnitude 1e2 and beyond."""
    for kind in COUPLED:
        rs = quartic_roots(p, kind)
        z = rs.roots
        assert z[0] < z[1] < 0.0 < z[2] < z[3]
        r1, r2 = p.regimes
        m1, m2 = kind.effective_drifts(p)
        res = np.abs(phi(r1, m1, p.delta, z) * phi(r2, m2, p.delta, z) - r1.lambda_out * r2.lambda_out)
        scale = np.maximum(residual_scale(quartic_coefficients(p, kind), z), 1.0)
        assert np.all(res <= TOL_ROOT * scale)


@given(valid_params())
def test_roots_match_bisection_oracle(p):
    for kind in COUPLED:
        oracle = bisection_roots(p, kind)
        assert oracle.size == 4
        np.testing.assert_allclose(quartic_roots(p, kind).roots, oracle, rtol=1e-9, atol=1e-12)


@given(valid_params())
def test_link_ratio_is_the_root_equation_restated(p):
    for kind in COUPLED:
        rs = quartic_roots(p, kind)
        r1, r2 = p.regimes
        _, m2 = kind.effective_drifts(p)
        phi2 = phi(r2, m2, p.delta, rs.roots)
        # lambda_1 phi_2 (phi_1/lambda_1 - lambda_2/phi_2) = phi_1 phi_2 - lambda_1 lambda_2
        gap = r1.lambda_out * phi2 * (rs.link_ratios - r2.lambda_out / phi2)
        scale = np.max(np.abs(quartic_coefficients(p, kind)))
        assert np.all(np.abs(gap) <= TOL_ROOT * scale)


@given(valid_params())
def test_swap_keeps_roots_and_inverts_link(p):
    q = swap_regimes(p)
    for kind in COUPLED:
        flipped = RegionKind.from_flags(*kind.pays[::-1])
        a, b = quartic_roots(p, kind), quartic_roots(q, flipped)
        np.testing.assert_allclose(a.roots, b.roots, rtol=1e-10, atol=1e-13)
        m1, _ = kind.effective_drifts(p)
        expected = p.regimes[0].lambda_out / phi(p.regimes[0], m1, p.delta, a.roots)
        np.testing.assert_allclose(b.link_ratios, expected, rtol=1e-7)


@given(valid_params())
def test_roots_vary_continuously(p):
    q = make_params(
        p.mu * (1 + 1e-8), p.sigma, p.lam * (1 - 1e-8), p.delta * (1 + 1e-8), p.rate_cap, p.fixed_cost
    )
    for kind in COUPLED:
        assert np.max(np.abs(quartic_roots(p, kind).roots - quartic_roots(q, kind).roots)) <= 1e-5


def test_thousand_random_sets_have_four_real_roots():
    for p in random_params(np.random.default_rng(7), 1000):
        z = quartic_roots(p, RegionKind.NO_PAY_NO_PAY).roots
        assert z[0] < z[1] < 0.0 < z[2] < z[3]


REFERENCE_ROOTS = {
    # frozen from the bisection oracle above
    RegionKind.NO_PAY_NO_PAY: [-4.291619026934291, -1.3660319733027693, 0.05989019259934031, 0.708871918748831],
    RegionKind.PAY_NO_PAY: [-3.3823270496148017, -1.333114361522302, 0.07327718074322134, 0.7532753415049934],
    RegionKind.NO_PAY_PAY: [-4.290260898332373, -1.0491753385514981, 0.06676092071430138, 0.828230871725125],
    RegionKind.PAY_PAY: [-3.3783091944405776, -1.0147927117725581, 0.08395832139844663, 0.8646991403702445],
}


@pytest.mark.parametrize("kind", COUPLED, ids=lambda k: k.name)
def test_reference_roots_frozen(kind):
    np.testing.assert_allclose(quartic_roots(reference_params(), kind).roots, REFERENCE_ROOTS[kind], rtol=1e-12)
    np.testing.assert_allclose(bisection_roots(reference_params(), kind), REFERENCE_ROOTS[kind], rtol=1e-12)


def test_single_kind_rejected_by_quartic():
    with pytest.raises(ValueError):
        quartic_roots(reference_params(), RegionKind.SINGLE_PAY)
