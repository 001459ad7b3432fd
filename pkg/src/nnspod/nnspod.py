"""Automatic shift detection: InterpNet + ShiftNet training and re-gridding.

The pipeline learns the reference snapshot as a continuous field
(InterpNet), then learns a map ``(x, t) -> x~`` (ShiftNet) such that the
frozen InterpNet evaluated at ``x~`` reproduces every other snapshot.  The
snapshots are finally pushed through that map, re-gridded onto the
centroids and decomposed again.

All network inputs live in the unit square (coordinates) and unit interval
(time); ShiftNet outputs are in the same scaled frame.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .grid import StructuredGrid
from .neural import Adam, Mlp, TrainingError, derive_seed, init_mlp
from .pod import PodResult, pod, projection_error
from .snapshots import SnapshotMatrix

log = logging.getLogger(__name__)


class DegenerateTransformationWarning(UserWarning):
    pass


@dataclass
class NetSpec:
    hidden: list[int]
    activation: str
    lr: float
    eps: float
    max_epochs: int
    output_activation: str = "linear"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"accuracy threshold must be positive, got {self.eps}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")


@dataclass
class RegridSpec:
    k: int = 4
    power: float = 2.0
    cutoff: float = 2.0  # in cell diagonals


@dataclass
class NNsPodConfig:
    reference_candidates: list[int]
    interp: NetSpec = field(default_factory=lambda: NetSpec([40, 40], "sigmoid", 1e-2, 1e-5, 40_000))
    shift: NetSpec = field(default_factory=lambda: NetSpec([20, 20, 20], "prelu", 1e-4, 1e-3, 10_000))
    eps_svd: float = 1e-2
    r_target: int = 1
    seed: int = 0
    regrid: RegridSpec = field(default_factory=RegridSpec)
    identity_epochs: int = 3_000
    identity_lr: float = 1e-3
    shift_stride: int = 1  # ShiftNet trains on every n-th non-reference snapshot

    def __post_init__(self):
        if isinstance(self.interp, dict):
            self.interp = NetSpec(**self.interp)
        if isinstance(self.shift, dict):
            self.shift = NetSpec(**self.shift)
        if isinstance(self.regrid, dict):
            self.regrid = RegridSpec(**self.regrid)
        if not self.reference_candidates:
            raise ValueError("reference_candidates is empty")
        if not self.eps_svd > 0:
            raise ValueError("eps_svd must be positive")
        if self.r_target < 1:
            raise ValueError("r_target must be >= 1")
        if int(self.shift_stride) != self.shift_stride or self.shift_stride < 1:
            raise ValueError("shift_stride must be an integer >= 1")

    def validate(self, m: SnapshotMatrix):
        if not self.reference_candidates:
            raise ValueError("reference_candidates is empty")
        for c in self.reference_candidates:
            if not 0 <= c < m.n_snapshots:
                raise ValueError(f"reference index {c} outside [0, {m.n_snapshots})")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class NNsPodResult:
    interp_net: Mlp
    shift_net: Mlp
    shifted_matrix: SnapshotMatrix
    pod_before: PodResult
    pod_after: PodResult
    chosen_reference: int
    interp_curve: np.ndarray
    shift_curve: np.ndarray
    epsilon: float
    converged: bool
    candidate_errors: dict[int, float]
    warnings: list[str] = field(default_factory=list)


# -- scaling -------------------------------------------------------------


def _time_scale(params: np.ndarray):
    lo, hi = float(params[0]), float(params[-1])
    span = hi - lo if hi > lo else 1.0
    return lo, span


def interp_inputs(grid: StructuredGrid) -> np.ndarray:
    return grid.scale_points(grid.centroids)


def shift_inputs(m: SnapshotMatrix, columns) -> np.ndarray:
    """Rows ``(x_s, y_s, t_s)`` for every centroid of every listed column."""
    xs = interp_inputs(m.grid)
    lo, span = _time_scale(m.params)
    blocks = []
    for k in columns:
        ts = np.full((len(xs), 1), (m.params[k] - lo) / span)
        blocks.append(np.hstack([xs, ts]))
    return np.vstack(blocks) if blocks else np.empty((0, 3))


# -- training ------------------------------------------------------------


def fit(net: Mlp, loss_and_grads: Callable, lr: float, eps: float, max_epochs: int,
        label: str = "net"):
    """Full-batch Adam until ``loss <= eps`` or ``max_epochs``.

    Returns the network with the lowest observed loss and the per-epoch
    loss curve.  ``loss_and_grads(net)`` must return ``(loss, grads)``.
    """
    opt = Adam(net.parameters(), lr=lr)
    best = np.inf
    best_params = None
    curve = []
    for epoch in range(max(max_epochs, 1)):
        loss, grads = loss_and_grads(net)
        if not np.isfinite(loss):
            raise TrainingError(
                f"{label}: loss became non-finite at epoch {epoch}; try a smaller learning rate",
                epoch=epoch,
            )
        curve.append(loss)
        if loss < best:
            best = loss
            best_params = [p.copy() for p in net.parameters()]
        if loss <= eps or epoch + 1 >= max_epochs:
            break
        try:
            opt.step(grads, epoch=epoch)
        except TrainingError as exc:
            raise TrainingError(f"{label}: {exc}; try a smaller learning rate", exc.epoch, exc.layer)
        if epoch % 1000 == 0:
            log.debug("%s epoch %d loss %.3e", label, epoch, loss)
    for p, b in zip(net.parameters(), best_params):
        p[...] = b
    return net, np.array(curve)


def train_interpnet(grid: StructuredGrid, u_ref, spec: NetSpec, seed: int = 0):
    """Fit ``(x, y) -> u_ref`` on the centroids; MSE loss."""
    u_ref = np.asarray(u_ref, dtype=float).reshape(-1, 1)
    if u_ref.shape[0] != grid.n_cells:
        raise ValueError("reference field length does not match the grid")
    X = interp_inputs(grid)
    n = len(X)
    net = init_mlp(seed, [2, *spec.hidden, 1], spec.activation, spec.output_activation)

    def loss_and_grads(net):
        pred, cache = net.forward(X)
        r = pred - u_ref
        grads, _ = net.backward(cache, (2.0 / n) * r)
        return float(np.mean(r**2)), grads

    return fit(net, loss_and_grads, spec.lr, spec.eps, spec.max_epochs, "InterpNet")


def _identity_warmstart(net: Mlp, inputs: np.ndarray, epochs: int, lr: float):
    target = inputs[:, :2]
    n = target.size

    def loss_and_grads(net):
        pred, cache = net.forward(inputs)
        r = pred - target
        grads, _ = net.backward(cache, (2.0 / n) * r)
        return float(np.mean(r**2)), grads

    if epochs > 0:
        fit(net, loss_and_grads, lr, 1e-9, epochs, "ShiftNet identity")
    return net


def training_columns(m: SnapshotMatrix, reference_index: int, stride: int = 1) -> list[int]:
    """Non-reference snapshot indices, thinned to every ``stride``-th one."""
    return [k for k in range(m.n_snapshots) if k != reference_index][::stride]


def shift_loss(m: SnapshotMatrix, interp: Mlp, shift_net: Mlp, reference_index: int,
               inputs=None, targets=None, with_grads: bool = True, cols=None):
    """Mean over non-reference snapshots of the per-cell MSE of ``interp(shift(x, t))``."""
    if cols is None:
        cols = training_columns(m, reference_index)
    if inputs is None:
        inputs = shift_inputs(m, cols)
    if targets is None:
        targets = m.data[:, cols].T.reshape(-1, 1)
    xt, c_shift = shift_net.forward(inputs, keep_cache=with_grads)
    pred, c_interp = interp.forward(xt, keep_cache=with_grads)
    r = pred - targets
    loss = float(np.mean(r**2))
    if not with_grads:
        return loss, None
    _, d_xt = interp.backward(c_interp, (2.0 / len(r)) * r, param_grads=False)
    grads, _ = shift_net.backward(c_shift, d_xt)
    return loss, grads


def train_shiftnet(m: SnapshotMatrix, interp: Mlp, reference_index: int, spec: NetSpec,
                   seed: int = 0, identity_epochs: int = 3_000, identity_lr: float = 1e-3,
                   stride: int = 1):
    """Train ShiftNet through the frozen InterpNet.

    ShiftNet starts from a fit of the identity map so the first recorded
    loss is that of the unshifted data.  ``stride > 1`` trains on a thinned
    set of snapshots; the map is still applied to all of them.
    """
    if m.n_snapshots < 2:
        raise ValueError("need at least two snapshots")
    cols = training_columns(m, reference_index, stride)
    inputs = shift_inputs(m, cols)
    targets = m.data[:, cols].T.reshape(-1, 1)
    net = init_mlp(seed, [3, *spec.hidden, 2], spec.activation, spec.output_activation)
    # the identity fit only needs a coarse sample of times
    n_h = m.n_cells
    pick = np.unique(np.linspace(0, len(cols) - 1, min(len(cols), 11)).round().astype(int))
    warm = np.vstack([inputs[i * n_h:(i + 1) * n_h] for i in pick])
    _identity_warmstart(net, warm, identity_epochs, identity_lr)

    def loss_and_grads(net):
        return shift_loss(m, interp, net, reference_index, inputs, targets, cols=cols)

    return fit(net, loss_and_grads, spec.lr, spec.eps, spec.max_epochs, "ShiftNet")


# -- re-gridding ---------------------------------------------------------


def idw_regrid(points, values, targets, k: int = 4, power: float = 2.0, cutoff: float = np.inf,
               exact: float = 1e-12):
    """Inverse-distance weighting of scattered ``(points, values)`` onto ``targets``.

    Targets whose nearest point is beyond ``cutoff`` get 0.  Returns
    ``(field, n_far)``.
    """
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float)
    targets = np.asarray(targets, dtype=float)
    k = min(k, len(points))
    tree = cKDTree(points)
    d, idx = tree.query(targets, k=k)
    d = d.reshape(len(targets), k)
    idx = idx.reshape(len(targets), k)
    with np.errstate(divide="ignore"):
        w = 1.0 / d**power
    hit = d[:, 0] < exact
    w[hit] = 0.0
    w[hit, 0] = 1.0
    out = np.sum(w * values[idx], axis=1) / np.sum(w, axis=1)
    far = d[:, 0] > cutoff
    out[far] = 0.0
    return out, int(far.sum())


def apply_transformation(m: SnapshotMatrix, shift_net: Mlp, reference_index: int,
                         regrid: RegridSpec | None = None):
    """Push every snapshot through ShiftNet and re-grid onto the centroids.

    Returns ``(shifted_matrix, warnings)``.
    """
    regrid = regrid or RegridSpec()
    grid = m.grid
    centroids = grid.centroids
    cutoff = regrid.cutoff * grid.cell_diagonal
    out = np.array(m.data, order="F")
    notes = []
    for k in range(m.n_snapshots):
        if k == reference_index:
            continue
        xt = grid.unscale_points(shift_net(shift_inputs(m, [k])))
        out[:, k], n_far = idw_regrid(xt, m.data[:, k], centroids, regrid.k, regrid.power, cutoff)
        if n_far > 0.5 * grid.n_cells:
            msg = (f"degenerate transformation: snapshot {k} leaves {n_far} of {grid.n_cells} "
                   f"centroids beyond the cutoff")
            warnings.warn(msg, DegenerateTransformationWarning, stacklevel=2)
            notes.append(msg)
    return m.with_data(out), notes


# -- driver --------------------------------------------------------------


def run_algorithm1(m: SnapshotMatrix, cfg: NNsPodConfig, progress: Callable | None = None) -> NNsPodResult:
    """Try each reference candidate in order until the shifted POD meets ``eps_svd``."""
    cfg.validate(m)
    pod_before = pod(m)
    r_target = min(cfg.r_target, pod_before.n_modes)
    best: NNsPodResult | None = None
    errors: dict[int, float] = {}
    for n, ref in enumerate(cfg.reference_candidates):
        s_interp = derive_seed(cfg.seed, 2 * n + 1)
        s_shift = derive_seed(cfg.seed, 2 * n + 2)
        interp, c_interp = train_interpnet(m.grid, m.data[:, ref], cfg.interp, s_interp)
        if progress:
            progress("interp", ref, c_interp)
        shift_net, c_shift = train_shiftnet(
            m, interp, ref, cfg.shift, s_shift, cfg.identity_epochs, cfg.identity_lr, cfg.shift_stride
        )
        if progress:
            progress("shift", ref, c_shift)
        shifted, notes = apply_transformation(m, shift_net, ref, cfg.regrid)
        pod_after = pod(shifted)
        eps = projection_error(shifted, pod_after, min(r_target, pod_after.n_modes))
        errors[ref] = eps
        log.info("reference %d: eps_svd residual %.3e", ref, eps)
        result = NNsPodResult(
            interp, shift_net, shifted, pod_before, pod_after, ref, c_interp, c_shift,
            eps, eps <= cfg.eps_svd, errors, notes,
        )
        if best is None or eps < best.epsilon:
            best = result
        if result.converged:
            best = result
            break
    best.candidate_errors = dict(errors)
    return best
