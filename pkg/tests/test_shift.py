import numpy as np
import pytest

from nnspod.fom import AdvectionField, translated_gaussians
from nnspod.grid import StructuredGrid
from nnspod.pod import modes_for_threshold, pod
from nnspod.shift import ShiftSpec, integrate_characteristic, padded_bounds, shift_all, shift_snapshot
from nnspod.snapshots import SnapshotMatrix


def test_zero_shift_is_exact_copy(unit50, rng):
    u = rng.standard_normal(unit50.n_cells)
    out = shift_snapshot(unit50, u, (0.0, 0.0), 0.7)
    assert out.tobytes() == u.tobytes()
    out = shift_snapshot(unit50, u, (1.0, -1.0), 0.0)
    assert out.tobytes() == u.tobytes()


def test_query_point_arithmetic():
    g = StructuredGrid(50, 50)
    # a linear field samples exactly, so the value pins down the query point
    x, y = g.centroids.T
    f = 3.0 * x + 7.0 * y
    k = g.linear_index(24, 24)  # centroid (0.49, 0.49)
    out = shift_snapshot(g, f, (1.0, -1.0), 0.2)
    assert out[k] == pytest.approx(3.0 * 0.69 + 7.0 * 0.29, abs=1e-12)


def test_shift_of_zero_and_linearity(unit50, rng):
    spec = ShiftSpec(AdvectionField.analytic("shear"), t_ref=0.2)
    params = np.array([0.0, 0.2, 0.5, 1.0])
    zero = SnapshotMatrix(np.zeros((unit50.n_cells, 4)), params, unit50)
    assert not np.any(shift_all(zero, spec).data)
    U, V = rng.standard_normal((2, unit50.n_cells, 4))
    a, b = 0.3, -2.0
    lhs = shift_all(SnapshotMatrix(a * U + b * V, params, unit50), spec).data
    rhs = a * shift_all(SnapshotMatrix(U, params, unit50), spec).data \
        + b * shift_all(SnapshotMatrix(V, params, unit50), spec).data
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_reference_column_unchanged(unit50, rng):
    params = np.linspace(0, 1, 5)
    m = SnapshotMatrix(rng.standard_normal((unit50.n_cells, 5)), params, unit50)
    out = shift_all(m, ShiftSpec(AdvectionField.analytic("shear"), t_ref=0.5))
    assert np.array_equal(out.data[:, 2], m.data[:, 2])
    assert np.array_equal(out.params, m.params)


def test_t_ref_must_lie_in_range(unit50):
    m = SnapshotMatrix(np.ones((unit50.n_cells, 2)), [0.0, 1.0], unit50)
    with pytest.raises(ValueError):
        shift_all(m, ShiftSpec(AdvectionField.constant(1, 0), t_ref=2.0))


def test_constant_field_matches_direct_shift(unit50, rng):
    params = np.array([0.0, 0.1, 0.3])
    m = SnapshotMatrix(rng.standard_normal((unit50.n_cells, 3)), params, unit50)
    out = shift_all(m, ShiftSpec(AdvectionField.constant(1.0, -1.0), t_ref=0.1))
    for k, t in enumerate(params):
        assert np.array_equal(out.data[:, k], shift_snapshot(unit50, m.data[:, k], (1.0, -1.0), t - 0.1))


def test_rk4_exact_for_constant_field():
    p, out = integrate_characteristic((0.3, 0.4), 0.25, 0.75, AdvectionField.constant(1.0, -2.0), 7)
    assert np.allclose(p, (0.8, -0.6), atol=1e-15)
    assert not out


def _fine_reference(p, t0, t1, n=1_000_000):
    # independent explicit-midpoint integration with a tiny step
    x, y = p
    h = (t1 - t0) / n
    t = t0
    for _ in range(n):
        xm = x + 0.5 * h * 0.5 * y**2 * t
        ym = y + 0.5 * h * (-2.0 * x * t**2)
        tm = t + 0.5 * h
        x, y = x + h * 0.5 * ym**2 * tm, y + h * (-2.0 * xm * tm**2)
        t += h
    return np.array([x, y])


def test_rk4_against_fine_step_reference():
    fld = AdvectionField.analytic("shear")
    p0 = (0.6, 0.0)
    got, _ = integrate_characteristic(p0, 0.0, 1.0, fld, 64)
    ref = _fine_reference(p0, 0.0, 1.0)
    assert np.max(np.abs(got - ref)) < 1e-8
    assert got[1] < 0  # -2 x t^2 pulls the point below the x-axis


def test_rk4_forward_backward():
    fld = AdvectionField.analytic("shear")
    pts = np.array([[0.2, 0.3], [0.7, 0.9], [0.5, 0.5]])
    fwd, _ = integrate_characteristic(pts, 0.1, 0.9, fld, 64)
    back, _ = integrate_characteristic(fwd, 0.9, 0.1, fld, 64)
    assert np.max(np.abs(back - pts)) < 1e-8


def test_out_of_domain_flag(unit50):
    bounds = padded_bounds(unit50)
    assert bounds == (-0.5, 1.5, -0.5, 1.5)
    pts, out = integrate_characteristic(np.array([[0.5, 0.5], [1.4, 0.5]]), 0.0, 1.0,
                                        AdvectionField.constant(0.5, 0.0), 8, bounds)
    assert out.tolist() == [False, True]


def test_translated_gaussians_collapse_to_rank_one():
    # bilinear resampling leaves a residual of roughly 2e-5 / sigma^2 in sigma_2/sigma_1 on this
    # grid, so the pulse must be wide; it stays well inside the square over the short window
    g = StructuredGrid(50, 50)
    times = np.linspace(0.0, 0.1, 50)
    m = translated_gaussians(g, (1.0, -1.0), times, center=(0.45, 0.55), sigma=0.14)
    s = pod(shift_all(m, ShiftSpec(AdvectionField.constant(1.0, -1.0), t_ref=0.0))).singular_values
    assert s[1] / s[0] < 1e-3
    assert pod(m).singular_values[1] / pod(m).singular_values[0] > 0.1


def test_shear_benchmark_shift_reduces_modes():
    from nnspod.fom import FomConfig, GaussianIC, simulate_advection
    fld = AdvectionField.analytic("shear")
    m = simulate_advection(FomConfig(StructuredGrid(50, 50), fld, 1.0, 100, GaussianIC((0.4, 0.7), 0.1)))
    shifted = pod(shift_all(m, ShiftSpec(fld, t_ref=float(m.params[80]))))
    before = pod(m)
    assert shifted.energy[0] > before.energy[0]
    assert modes_for_threshold(shifted, 1e-3) < modes_for_threshold(before, 1e-3)
