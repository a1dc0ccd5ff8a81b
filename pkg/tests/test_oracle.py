import numpy as np
import pytest

from hybriddiv.errors import NotConverged
from hybriddiv.model import make_params
from hybriddiv.oracle import (
    IMPULSE,
    RATE_CAP,
    RATE_ZERO,
    default_x_max,
    extract_boundaries,
    grid_table,
    labels_monotone,
    solve_grid,
)
from hybriddiv.smoothfit import classify_and_solve
from hybriddiv.valuefn import TABLE_COLUMNS

from conftest import reference_params, solved


@pytest.fixture(scope="module")
def ref_grid():
    return solve_grid(reference_params(), n_cells=2000)


def test_boundary_value_and_shape(ref_grid):
    v = ref_grid.values
    assert np.all(v[:, 0] == 0.0)
    assert np.all(v >= 0.0)
    assert np.all(np.diff(v, axis=1) >= -1e-12)
    assert ref_grid.n_cells == 2000 and v.shape == (2, 2001)


def test_neumann_slope_at_truncation(ref_grid):
    v, h = ref_grid.values, ref_grid.h
    np.testing.assert_allclose(v[:, -1] - v[:, -2], h, rtol=1e-12)


def test_discrete_residual_and_upper_bound(ref_grid):
    p = reference_params()
    assert ref_grid.residual <= 1e-8
    bound = p.upper_bound(ref_grid.grid)
    assert np.all(ref_grid.values <= bound[None, :] + 1e-12)


def test_labels_are_monotone(ref_grid):
    assert labels_monotone(ref_grid)
    a = ref_grid.actions[:, 1:-1]
    assert set(np.unique(a)) <= {RATE_ZERO, RATE_CAP, IMPULSE}


def test_boundaries_match_analytic_within_two_cells(ref_grid):
    b = classify_and_solve(reference_params())
    got = extract_boundaries(ref_grid)
    h = ref_grid.h
    np.testing.assert_allclose(got["upper"], b.thresholds.upper, atol=2 * h)
    np.testing.assert_allclose(got["lower"], b.thresholds.lower, atol=2 * h)
    np.testing.assert_allclose(got["rate_switch"], b.thresholds.lower, atol=2 * h)


def test_impulse_target_has_grid_slope_near_one(ref_grid):
    for i in range(2):
        k = int(np.nonzero(ref_grid.actions[i] == IMPULSE)[0][0])
        m = ref_grid.targets[i, k]
        d = np.diff(ref_grid.values[i]) / ref_grid.h
        # argmax of v_m - m h: the grid slope crosses 1 between cells m - 1 and m
        assert d[m - 1] >= 1.0 - 1e-9 and d[m] <= 1.0 + 1e-9
        near = np.arange(max(m - 50, 0), m + 51)
        assert near[np.argmin(np.abs(d[near] - 1.0))] in (m - 1, m)


def test_upwind_refinement_pattern():
    """Sup-norm change 1000 -> 2000 is below four times the 2000 -> 4000 change."""
    p = reference_params()
    sols = {n: solve_grid(p, n_cells=n, scheme="upwind") for n in (1000, 2000, 4000)}
    x = sols[1000].grid
    d1 = max(np.max(np.abs(sols[2000].interp(x, i) - sols[1000].values[i])) for i in range(2))
    d2 = max(np.max(np.abs(sols[4000].interp(x, i) - sols[2000].interp(x, i))) for i in range(2))
    assert d2 > 0.0
    assert d1 < 4.0 * d2
    # first-order behaviour: the ratio sits near 2
    assert 1.5 < d1 / d2 < 2.5


def test_upwind_boundaries_within_two_cells():
    b = solved("nested_case1")
    sol = solve_grid(b.params, n_cells=4000, scheme="upwind")
    got = extract_boundaries(sol)
    np.testing.assert_allclose(got["upper"], b.thresholds.upper, atol=2 * sol.h)
    np.testing.assert_allclose(got["lower"], b.thresholds.lower, atol=2 * sol.h)


def test_symmetric_instance_collapses():
    b = solved("symmetric")
    sol = solve_grid(b.params, n_cells=2000)
    np.testing.assert_allclose(sol.values[0], sol.values[1], atol=1e-10)
    got = extract_boundaries(sol)
    np.testing.assert_allclose(got["upper"], b.thresholds.upper, atol=2 * sol.h)


def test_not_converged_raised():
    with pytest.raises(NotConverged):
        solve_grid(reference_params(), n_cells=500, max_iter=1, coarse_cells=500)


def test_three_regimes_supported():
    p = make_params((2.0, 1.0, 1.5), (1.0, 1.5, 1.2), (0.5, 0.8, 0.3), 0.2, 0.5, 1.0)
    sol = solve_grid(p, n_cells=1000)
    assert sol.values.shape == (3, 1001)
    assert labels_monotone(sol)


def test_unknown_scheme_rejected():
    with pytest.raises(ValueError):
        solve_grid(reference_params(), n_cells=500, scheme="central")


def test_default_truncation():
    p = reference_params()
    assert default_x_max(p) == pytest.approx(3 * (2.0 + 0.5) / 0.1 + 2.0)


def test_grid_table_schema(ref_grid):
    rows = grid_table(ref_grid, reference_params())
    assert len(rows) == 2 * 2001
    assert len(rows[0]) == len(TABLE_COLUMNS)
    x, reg, val, der, gen, m_val = rows[500]
    assert reg == 1 and val == ref_grid.values[0, 500]
    # the discrete QVI holds node by node: the max of generator and M - v is ~0
    assert max(gen, m_val - val) == pytest.approx(0.0, abs=1e-8)
