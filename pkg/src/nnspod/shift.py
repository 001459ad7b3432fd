"""Shift-based pre-processing with a known transport field."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fom import AdvectionField
from .grid import StructuredGrid
from .snapshots import SnapshotMatrix


@dataclass(frozen=True)
class ShiftSpec:
    field: AdvectionField
    t_ref: float = 0.0
    ode_steps: int = 32

    def __post_init__(self):
        if int(self.ode_steps) != self.ode_steps or self.ode_steps < 1:
            raise ValueError(f"ode_steps must be an integer >= 1, got {self.ode_steps}")


def shift_snapshot(grid: StructuredGrid, snapshot, b, dt_shift: float) -> np.ndarray:
    """Sample ``snapshot`` at ``x_j + b * dt_shift`` for every centroid.

    With ``dt_shift = t_k - t_ref`` a pulse carried forward by ``b`` lands
    back on its ``t_ref`` position.  ``b = 0`` returns an exact copy.
    """
    snapshot = np.asarray(snapshot, dtype=float)
    offset = np.asarray(b, dtype=float) * dt_shift
    if not np.all(np.isfinite(offset)):
        raise ValueError("non-finite shift")
    if not np.any(offset):
        return snapshot.copy()
    return grid.bilinear_sample(snapshot, grid.centroids + offset)


def integrate_characteristic(p, t_from: float, t_to: float, field: AdvectionField,
                             ode_steps: int = 32, bounds=None):
    """RK4 integration of ``dx/dt = b(x, t)`` from ``t_from`` to ``t_to``.

    ``p`` may be one point or an ``(n, 2)`` array.  Returns ``(points,
    outside)`` where ``outside`` flags trajectories that left ``bounds``
    (``(x_min, x_max, y_min, y_max)``, typically the domain padded by its own
    size on each side); their end points are still returned.
    """
    if not (np.isfinite(t_from) and np.isfinite(t_to)):
        raise ValueError("integration times must be finite")
    pts = np.array(p, dtype=float)
    single = pts.ndim == 1
    x = np.atleast_2d(pts).copy()
    outside = np.zeros(len(x), dtype=bool)
    if t_to == t_from:
        return (x[0], bool(outside[0])) if single else (x, outside)

    def rhs(x, t):
        bx, by = field(x[:, 0], x[:, 1], t)
        return np.column_stack([bx, by])

    h = (t_to - t_from) / ode_steps
    t = t_from
    for _ in range(ode_steps):
        k1 = rhs(x, t)
        k2 = rhs(x + 0.5 * h * k1, t + 0.5 * h)
        k3 = rhs(x + 0.5 * h * k2, t + 0.5 * h)
        k4 = rhs(x + h * k3, t + h)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
        if bounds is not None:
            x0, x1, y0, y1 = bounds
            outside |= (x[:, 0] < x0) | (x[:, 0] > x1) | (x[:, 1] < y0) | (x[:, 1] > y1)
    return (x[0], bool(outside[0])) if single else (x, outside)


def padded_bounds(grid: StructuredGrid):
    """Domain box padded to twice its size about its centre."""
    wx = grid.x_max - grid.x_min
    wy = grid.y_max - grid.y_min
    return (grid.x_min - 0.5 * wx, grid.x_max + 0.5 * wx, grid.y_min - 0.5 * wy, grid.y_max + 0.5 * wy)


def shift_all(m: SnapshotMatrix, spec: ShiftSpec) -> SnapshotMatrix:
    """Map every snapshot onto the ``t_ref`` frame along the characteristics."""
    lo, hi = m.params[0], m.params[-1]
    if not lo - 1e-12 <= spec.t_ref <= hi + 1e-12:
        raise ValueError(f"t_ref={spec.t_ref} outside snapshot time range [{lo}, {hi}]")
    grid = m.grid
    out = np.empty_like(m.data)
    bounds = padded_bounds(grid)
    for k, t in enumerate(m.params):
        col = m.data[:, k]
        if t == spec.t_ref:
            out[:, k] = col
            continue
        if spec.field.is_constant:
            out[:, k] = shift_snapshot(grid, col, spec.field.velocity, t - spec.t_ref)
            continue
        pts, outside = integrate_characteristic(
            grid.centroids, spec.t_ref, t, spec.field, spec.ode_steps, bounds
        )
        vals = grid.bilinear_sample(col, pts)
        vals[outside] = 0.0
        out[:, k] = vals
    return m.with_data(out)
