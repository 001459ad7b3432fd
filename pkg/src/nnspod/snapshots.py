"""Snapshot matrix container, ``.snap`` persistence and CSV ingestion."""
from __future__ import annotations

import csv
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import StructuredGrid

MAGIC = b"SNAP1"
_HEADER = struct.Struct("<5sQQQdddd")


class SnapshotFormatError(ValueError):
    """Malformed or inconsistent ``.snap`` file."""


class IngestionError(ValueError):
    """CSV snapshots that cannot be matched to the target grid."""


@dataclass(frozen=True)
class SnapshotMatrix:
    """``N_h x N_s`` snapshot matrix; column ``k`` is the field at ``params[k]``."""

    data: np.ndarray
    params: np.ndarray
    grid: StructuredGrid

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, order="F")
        params = np.array(self.params, dtype=np.float64).ravel()
        if data.ndim != 2:
            raise ValueError("snapshot data must be 2-D")
        if data.shape[0] != self.grid.n_cells:
            raise ValueError(
                f"snapshot length {data.shape[0]} does not match grid cells {self.grid.n_cells}"
            )
        if data.shape[1] != params.size:
            raise ValueError(f"{data.shape[1]} snapshots but {params.size} parameter values")
        if not np.all(np.isfinite(data)):
            raise ValueError("snapshot data contains non-finite values")
        if params.size > 1 and not np.all(np.diff(params) > 0):
            raise ValueError("parameter values must be strictly increasing")
        data.setflags(write=False)
        params.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "params", params)

    @property
    def n_cells(self) -> int:
        return self.data.shape[0]

    @property
    def n_snapshots(self) -> int:
        return self.data.shape[1]

    def column(self, k: int) -> np.ndarray:
        return self.data[:, k]

    def with_data(self, data) -> "SnapshotMatrix":
        return SnapshotMatrix(data, self.params, self.grid)

    def replace_column(self, k: int, values) -> "SnapshotMatrix":
        data = np.array(self.data, order="F")
        data[:, k] = values
        return self.with_data(data)


def to_features(m: SnapshotMatrix) -> np.ndarray:
    """Feature matrix ``X`` (``N_s x N_h``): one sample per row, read-only view."""
    return m.data.T


def from_features(X, params, grid: StructuredGrid) -> SnapshotMatrix:
    return SnapshotMatrix(np.asarray(X).T, params, grid)


def save(m: SnapshotMatrix, path) -> None:
    g = m.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, g.nx, g.ny, m.n_snapshots, g.x_min, g.x_max, g.y_min, g.y_max))
        fh.write(m.params.astype("<f8").tobytes())
        fh.write(m.data.astype("<f8").tobytes(order="F"))


def load(path) -> SnapshotMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise SnapshotFormatError(
            f"truncated header: expected at least {_HEADER.size} bytes, got {len(raw)}"
        )
    magic, nx, ny, ns, x0, x1, y0, y1 = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    try:
        grid = StructuredGrid(nx, ny, x0, x1, y0, y1)
    except ValueError as exc:
        raise SnapshotFormatError(f"inconsistent grid metadata: {exc}") from exc
    expected = _HEADER.size + 8 * ns + 8 * nx * ny * ns
    if len(raw) != expected:
        payload = len(raw) - _HEADER.size - 8 * ns
        if ns and payload > 0 and payload % (8 * ns) == 0:
            raise SnapshotFormatError(
                f"metadata inconsistency: payload holds N_h={payload // (8 * ns)} values per "
                f"snapshot but header gives nx*ny={nx * ny} (expected {expected} bytes, got {len(raw)})"
            )
        raise SnapshotFormatError(f"expected {expected} bytes for {nx}x{ny}x{ns}, got {len(raw)}")
    off = _HEADER.size
    params = np.frombuffer(raw, "<f8", ns, off)
    data = np.frombuffer(raw, "<f8", nx * ny * ns, off + 8 * ns).reshape((nx * ny, ns), order="F")
    return SnapshotMatrix(data, params, grid)


def _fmt(x: float) -> str:
    return repr(float(x))


def export_csv(m: SnapshotMatrix, directory) -> list[Path]:
    """Write one ``snapshot_<index>_<time>.csv`` per column (header ``x,y,value``)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pts = m.grid.centroids
    paths = []
    for k in range(m.n_snapshots):
        p = directory / f"snapshot_{k:04d}_{_fmt(m.params[k])}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "value"])
            for (x, y), v in zip(pts, m.data[:, k]):
                w.writerow([_fmt(x), _fmt(y), _fmt(v)])
        paths.append(p)
    return paths


_NAME = re.compile(r"snapshot_(\d+)_(.+)\.csv$")


def _match_cells(grid: StructuredGrid, xs, ys, source: str) -> np.ndarray:
    tol = 0.25 * min(grid.dx, grid.dy)
    fi = (xs - grid.x_min) / grid.dx - 0.5
    fj = (ys - grid.y_min) / grid.dy - 0.5
    i = np.rint(fi).astype(np.int64)
    j = np.rint(fj).astype(np.int64)
    ok = (i >= 0) & (i < grid.nx) & (j >= 0) & (j < grid.ny)
    ok &= np.abs((fi - i) * grid.dx) <= tol
    ok &= np.abs((fj - j) * grid.dy) <= tol
    if not np.all(ok):
        bad = int(np.flatnonzero(~ok)[0])
        raise IngestionError(
            f"{source}: row {bad + 1} at ({xs[bad]!r}, {ys[bad]!r}) matches no centroid "
            f"within {tol:g}"
        )
    k = j * grid.nx + i
    uniq, counts = np.unique(k, return_counts=True)
    if np.any(counts > 1):
        cell = int(uniq[counts > 1][0])
        raise IngestionError(f"{source}: duplicate rows for cell {grid.delinearize(cell)}")
    if uniq.size != grid.n_cells:
        raise IngestionError(f"{source}: {grid.n_cells - uniq.size} cells missing")
    return k


def _read_xyv(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0][:3]] != ["x", "y", "value"]:
        raise IngestionError(f"{path}: expected header 'x,y,value'")
    try:
        return np.array([[float(c) for c in r[:3]] for r in rows[1:] if r], dtype=float).reshape(-1, 3)
    except ValueError as exc:
        raise IngestionError(f"{path}: {exc}") from exc


def ingest_csv(source, grid: StructuredGrid) -> SnapshotMatrix:
    """Read externally computed snapshots onto ``grid``.

    ``source`` is either a directory of ``snapshot_<index>_<time>.csv`` files
    (header ``x,y,value``) or a single wide CSV with header
    ``x,y,<t_0>,<t_1>,...``.  Rows may come in any order.
    """
    source = Path(source)
    columns: list[tuple[float, np.ndarray]] = []
    if source.is_dir():
        files = sorted(p for p in source.iterdir() if _NAME.search(p.name))
        if not files:
            raise IngestionError(f"{source}: no snapshot_<index>_<time>.csv files")
        for p in files:
            t = float(_NAME.search(p.name).group(2))
            arr = _read_xyv(p)
            k = _match_cells(grid, arr[:, 0], arr[:, 1], str(p))
            col = np.empty(grid.n_cells)
            col[k] = arr[:, 2]
            columns.append((t, col))
    else:
        with open(source, newline="") as fh:
            rows = list(csv.reader(fh))
        head = [c.strip() for c in rows[0]]
        if head[:2] != ["x", "y"] or len(head) < 3:
            raise IngestionError(f"{source}: expected header 'x,y,<t_0>,...'")
        times = [float(c) for c in head[2:]]
        arr = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
        k = _match_cells(grid, arr[:, 0], arr[:, 1], str(source))
        for c, t in enumerate(times):
            col = np.empty(grid.n_cells)
            col[k] = arr[:, 2 + c]
            columns.append((t, col))
    columns.sort(key=lambda tc: tc[0])
    params = np.array([t for t, _ in columns])
    if params.size > 1 and not np.all(np.diff(params) > 0):
        dup = params[1:][np.diff(params) <= 0][0]
        raise IngestionError(f"snapshot times must be strictly increasing; {dup!r} repeats")
    return SnapshotMatrix(np.column_stack([c for _, c in columns]), params, grid)


def write_series_csv(path, values, header=("index", "value")) -> None:
    """Two-column ``index,value`` export, 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, v in enumerate(values, start=1):
            w.writerow([i, f"{float(v):.17g}"])


def read_series_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([float(r[1]) for r in rows[1:] if r])
