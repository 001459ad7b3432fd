"""Uniform cell-centred 2-D grid."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class StructuredGrid:
    """Uniform ``nx`` by ``ny`` cell-centred mesh over a rectangle.

    Cells are linearised x-fastest: ``k = j * nx + i``.
    """

    nx: int
    ny: int
    x_min: float = 0.0
    x_max: float = 1.0
    y_min: float = 0.0
    y_max: float = 1.0
    _centroids: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("nx and ny must be integers")
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid needs at least one cell per direction, got {self.nx}x{self.ny}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("domain bounds must satisfy x_min < x_max and y_min < y_max")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        xc = self.x_min + (np.arange(self.nx) + 0.5) * self.dx
        yc = self.y_min + (np.arange(self.ny) + 0.5) * self.dy
        X, Y = np.meshgrid(xc, yc)  # shape (ny, nx): row-major flatten is x-fastest
        pts = np.column_stack([X.ravel(), Y.ravel()])
        pts.setflags(write=False)
        object.__setattr__(self, "_centroids", pts)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / self.ny

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_diagonal(self) -> float:
        return float(np.hypot(self.dx, self.dy))

    @property
    def centroids(self) -> np.ndarray:
        """Read-only ``(N_h, 2)`` array of centroid coordinates."""
        return self._centroids

    def linear_index(self, i: int, j: int) -> int:
        self._check(i, j)
        return j * self.nx + i

    def delinearize(self, k: int) -> tuple[int, int]:
        if not 0 <= k < self.n_cells:
            raise IndexError(f"linear index {k} out of range [0, {self.n_cells})")
        return k % self.nx, k // self.nx

    def centroid(self, i: int, j: int) -> tuple[float, float]:
        self._check(i, j)
        return (self.x_min + (i + 0.5) * self.dx, self.y_min + (j + 0.5) * self.dy)

    def _check(self, i, j):
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise IndexError(f"cell ({i}, {j}) outside {self.nx}x{self.ny} grid")

    def as_field(self, values) -> np.ndarray:
        """Reshape an N_h vector to ``(ny, nx)`` without copying."""
        values = np.asarray(values)
        if values.shape[0] != self.n_cells:
            raise ValueError(f"field has length {values.shape[0]}, grid has {self.n_cells} cells")
        return values.reshape(self.ny, self.nx, *values.shape[1:])

    def bilinear_sample(self, values, points) -> np.ndarray | float:
        """Bilinear interpolation of a cell-centred field at arbitrary points.

        Points outside the hull of the centroids get 0, consistent with the
        homogeneous Dirichlet data every in-scope field carries.  ``values``
        may be ``(N_h,)`` or ``(N_h, m)``; ``points`` may be a single point or
        an ``(n, 2)`` array.
        """
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.n_cells:
            raise ValueError(f"field has length {values.shape[0]}, grid has {self.n_cells} cells")
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if not np.all(np.isfinite(pts)):
            raise ValueError("non-finite query coordinates")
        W = self.bilinear_weights(pts)
        out = W @ values
        return out[0] if single else out

    def bilinear_weights(self, points) -> "scipy.sparse.csr_matrix":
        """Sparse ``(n, N_h)`` matrix mapping cell values to bilinear samples."""
        from scipy import sparse

        if self.nx < 2 or self.ny < 2:
            raise ValueError("bilinear sampling needs at least 2 cells per direction")
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        # fractional index in centroid coordinates
        fx = (pts[:, 0] - self.x_min) / self.dx - 0.5
        fy = (pts[:, 1] - self.y_min) / self.dy - 0.5
        tol = 1e-12
        inside = (fx >= -tol) & (fx <= self.nx - 1 + tol) & (fy >= -tol) & (fy <= self.ny - 1 + tol)
        fx = np.clip(fx, 0.0, self.nx - 1)
        fy = np.clip(fy, 0.0, self.ny - 1)
        i0 = np.minimum(np.floor(fx).astype(np.int64), self.nx - 2)
        j0 = np.minimum(np.floor(fy).astype(np.int64), self.ny - 2)
        tx = fx - i0
        ty = fy - j0
        rows = np.repeat(np.arange(len(pts)), 4)
        cols = np.column_stack([
            j0 * self.nx + i0,
            j0 * self.nx + i0 + 1,
            (j0 + 1) * self.nx + i0,
            (j0 + 1) * self.nx + i0 + 1,
        ]).ravel()
        w = np.column_stack([
            (1 - tx) * (1 - ty),
            tx * (1 - ty),
            (1 - tx) * ty,
            tx * ty,
        ])
        w[~inside] = 0.0
        return sparse.csr_matrix((w.ravel(), (rows, cols)), shape=(len(pts), self.n_cells))

    def scale_points(self, points) -> np.ndarray:
        """Affine map of physical coordinates onto the unit square."""
        pts = np.asarray(points, dtype=float)
        lo = np.array([self.x_min, self.y_min])
        span = np.array([self.x_max - self.x_min, self.y_max - self.y_min])
        return (pts - lo) / span

    def unscale_points(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        lo = np.array([self.x_min, self.y_min])
        span = np.array([self.x_max - self.x_min, self.y_max - self.y_min])
        return pts * span + lo

    def to_dict(self) -> dict:
        return {
            "nx": self.nx, "ny": self.ny,
            "x_min": self.x_min, "x_max": self.x_max,
            "y_min": self.y_min, "y_max": self.y_max,
        }
