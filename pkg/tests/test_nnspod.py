import warnings

import numpy as np
import pytest

from nnspod.fom import translated_gaussians
from nnspod.grid import StructuredGrid
from nnspod.neural import Layer, Mlp, init_mlp
from nnspod.nnspod import (
    DegenerateTransformationWarning, NetSpec, NNsPodConfig, RegridSpec, apply_transformation,
    idw_regrid, run_algorithm1, shift_inputs, shift_loss, train_interpnet, train_shiftnet,
    training_columns,
)
from nnspod.pod import pod
from nnspod.snapshots import SnapshotMatrix


def _identity_shiftnet():
    W = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    return Mlp([Layer(W, np.zeros(2), "linear")])


def _small_transport(nx=16, ns=8):
    g = StructuredGrid(nx, nx)
    return translated_gaussians(g, (1.0, -1.0), np.linspace(0.0, 0.2, ns), center=(0.4, 0.6), sigma=0.12)


def test_idw_arithmetic():
    pts = np.array([[1.0, 0.0], [-2.0, 0.0]])
    out, n_far = idw_regrid(pts, np.array([3.0, 7.0]), np.array([[0.0, 0.0]]), k=2, power=2.0)
    assert out[0] == pytest.approx((4 * 3.0 + 7.0) / 5)
    assert n_far == 0


def test_idw_exact_hit_and_cutoff():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    vals = np.array([2.0, 5.0, 9.0])
    out, n_far = idw_regrid(pts, vals, np.array([[0.0, 0.0], [10.0, 10.0]]), k=3, cutoff=1.5)
    assert out.tolist() == [2.0, 0.0]
    assert n_far == 1


def test_identity_transformation_is_exact():
    m = _small_transport()
    out, notes = apply_transformation(m, _identity_shiftnet(), 3)
    assert np.max(np.abs(out.data - m.data)) <= 1e-10
    assert notes == []


def test_reference_column_passes_through():
    m = _small_transport()
    net = init_mlp(3, [3, 5, 2], "prelu")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateTransformationWarning)
        out, _ = apply_transformation(m, net, 2)
    assert np.array_equal(out.data[:, 2], m.data[:, 2])


def test_degenerate_transformation_warns():
    m = _small_transport()
    net = _identity_shiftnet()
    net.layers[0].b[:] = 5.0  # everything lands far outside the domain
    with pytest.warns(DegenerateTransformationWarning):
        out, notes = apply_transformation(m, net, 0)
    assert len(notes) == m.n_snapshots - 1
    assert not np.any(out.data[:, 1:])


def test_shift_inputs_layout():
    m = _small_transport()
    X = shift_inputs(m, [0, 7])
    assert X.shape == (2 * m.n_cells, 3)
    assert X[0, 2] == 0.0 and X[-1, 2] == 1.0
    assert np.allclose(X[: m.n_cells, :2], m.grid.scale_points(m.grid.centroids))
    assert training_columns(m, 3) == [0, 1, 2, 4, 5, 6, 7]
    assert training_columns(m, 3, 3) == [0, 4, 7]


def test_config_validation():
    with pytest.raises(ValueError):
        NetSpec([4], "sigmoid", lr=0.0, eps=1e-3, max_epochs=10)
    with pytest.raises(ValueError):
        NNsPodConfig([0], eps_svd=0.0)
    with pytest.raises(ValueError, match="empty"):
        NNsPodConfig([])
    cfg = NNsPodConfig([2], interp={"hidden": [4], "activation": "sigmoid", "lr": 1e-2, "eps": 1e-5,
                                    "max_epochs": 5})
    assert isinstance(cfg.interp, NetSpec)
    with pytest.raises(ValueError):
        NNsPodConfig([99]).validate(_small_transport())


def test_interpnet_fits_constant_field():
    g = StructuredGrid(10, 10)
    # no hidden layer: the output bias alone can carry the constant
    net, curve = train_interpnet(g, np.full(g.n_cells, 0.7), NetSpec([], "sigmoid", 1e-2, 1e-10, 2000))
    assert curve.min() < 1e-10
    assert len(curve) < 2000
    _, deep = train_interpnet(g, np.full(g.n_cells, 0.7), NetSpec([40, 40], "sigmoid", 1e-2, 1e-10, 2000))
    assert deep.min() < 1e-8


def test_interpnet_best_so_far_and_divergence():
    from nnspod.neural import TrainingError
    g = StructuredGrid(8, 8)
    u = np.sin(np.pi * g.centroids[:, 0])
    net, curve = train_interpnet(g, u, NetSpec([10], "sigmoid", 1e-2, 1e-12, 300))
    X = g.scale_points(g.centroids)
    assert np.mean((net(X)[:, 0] - u) ** 2) == pytest.approx(curve.min(), rel=1e-12)
    with pytest.raises(TrainingError, match="smaller learning rate"):
        train_interpnet(g, u * 1e200, NetSpec([10], "linear", 1.0, 1e-12, 50))


def test_hardsigmoid_interpnet_output_is_clamped():
    g = StructuredGrid(8, 8)
    u = (g.centroids[:, 0] > 0.5).astype(float)
    net, _ = train_interpnet(g, u, NetSpec([10], "sigmoid", 1e-2, 1e-9, 200, "hardsigmoid"))
    out = net(np.random.default_rng(0).uniform(-3, 3, (1000, 2)))
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_shiftnet_on_static_data_never_worsens():
    g = StructuredGrid(12, 12)
    u = np.exp(-((g.centroids - 0.5) ** 2).sum(axis=1) / 0.02)
    m = SnapshotMatrix(np.column_stack([u] * 5), np.linspace(0, 1, 5), g)
    interp, _ = train_interpnet(g, u, NetSpec([20, 20], "sigmoid", 1e-2, 1e-9, 300))
    before = interp.dumps()
    net, curve = train_shiftnet(m, interp, 2, NetSpec([8, 8], "prelu", 1e-3, 1e-12, 100), identity_epochs=200)
    assert interp.dumps() == before  # frozen
    assert curve.min() <= curve[0]
    loss, _ = shift_loss(m, interp, net, 2, with_grads=False)
    assert loss == pytest.approx(curve.min(), rel=1e-12)
    assert loss >= 0.0


def test_shift_loss_gradient_matches_finite_differences():
    m = _small_transport(10, 4)
    interp = init_mlp(1, [2, 6, 1], "sigmoid")
    net = init_mlp(2, [3, 5, 2], "sigmoid")
    _, grads = shift_loss(m, interp, net, 1)
    p = net.parameters()[0]
    h = 1e-6
    for idx in [(0, 0), (2, 1), (1, 2)]:
        old = p[idx]
        p[idx] = old + h
        lp, _ = shift_loss(m, interp, net, 1, with_grads=False)
        p[idx] = old - h
        lm, _ = shift_loss(m, interp, net, 1, with_grads=False)
        p[idx] = old
        fd = (lp - lm) / (2 * h)
        assert abs(fd - grads[0][idx]) <= 1e-6 * max(abs(fd), 1e-6)


def test_rank_one_data_meets_svd_target():
    g = StructuredGrid(12, 12)
    u = np.exp(-((g.centroids - 0.5) ** 2).sum(axis=1) / 0.05)
    m = SnapshotMatrix(np.column_stack([u] * 4), np.arange(4.0), g)
    cfg = NNsPodConfig([1], interp=NetSpec([20, 20], "sigmoid", 1e-2, 1e-6, 1500),
                       shift=NetSpec([6], "prelu", 1e-3, 1e-9, 200), identity_epochs=3000)
    res = run_algorithm1(m, cfg)
    assert res.converged and res.epsilon <= 1e-2
    assert res.chosen_reference == 1


def test_candidate_iteration_reports_best_unconverged():
    m = _small_transport(12, 6)
    tiny = dict(interp=NetSpec([4], "sigmoid", 1e-2, 1e-9, 3), shift=NetSpec([4], "prelu", 1e-3, 1e-9, 2),
                identity_epochs=2, eps_svd=1e-12)
    res = run_algorithm1(m, NNsPodConfig([0, 5], **tiny))
    assert not res.converged
    assert set(res.candidate_errors) == {0, 5}
    assert res.epsilon == min(res.candidate_errors.values())
    assert res.chosen_reference in (0, 5)


@pytest.fixture(scope="module")
def small_run():
    m = _small_transport(20, 10)
    cfg = NNsPodConfig([5], interp=NetSpec([40, 40], "sigmoid", 1e-2, 1e-6, 3000),
                       shift=NetSpec([10, 10], "prelu", 1e-4, 1e-7, 300), identity_epochs=3000, seed=3)
    return m, cfg, run_algorithm1(m, cfg)


def test_result_invariants(small_run):
    m, cfg, res = small_run
    assert res.warnings == []
    assert res.shift_curve.min() < 0.5 * res.shift_curve[0]
    assert np.array_equal(res.shifted_matrix.data[:, 5], m.data[:, 5])
    s_after = np.sum(res.pod_after.singular_values**2)
    s_before = np.sum(res.pod_before.singular_values**2)
    assert s_after <= 1.2 * s_before
    for curve in (res.interp_curve, res.shift_curve):
        assert np.all(np.diff(np.minimum.accumulate(curve)) <= 0)
        assert np.all(np.isfinite(curve))


def test_run_is_deterministic(small_run):
    m, cfg, res = small_run
    again = run_algorithm1(m, cfg)
    assert again.interp_net.dumps() == res.interp_net.dumps()
    assert again.shift_net.dumps() == res.shift_net.dumps()
    assert again.shifted_matrix.data.tobytes() == res.shifted_matrix.data.tobytes()
    assert np.array_equal(again.shift_curve, res.shift_curve)


# -- benchmark-scale examples (minutes each) ------------------------------


def test_interpnet_fits_shear_reference_snapshot():
    from nnspod.fom import AdvectionField, FomConfig, GaussianIC, simulate_advection
    g = StructuredGrid(50, 50)
    m = simulate_advection(FomConfig(g, AdvectionField.analytic("shear"), 1.0, 100, GaussianIC((0.4, 0.7), 0.1)))
    _, curve = train_interpnet(g, m.data[:, 80], NNsPodConfig([80]).interp)
    assert curve.min() <= 1e-5


@pytest.fixture(scope="module")
def constant_run():
    from nnspod.fom import AdvectionField, FomConfig, GaussianIC, simulate_advection
    g = StructuredGrid(50, 50)
    m = simulate_advection(FomConfig(g, AdvectionField.constant(1.0, -1.0), 0.4, 100, GaussianIC((0.1, 0.9), 0.1)))
    cfg = NNsPodConfig([50], shift=NetSpec([20, 20, 20], "prelu", 1e-4, 1e-3, 3_000), shift_stride=4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateTransformationWarning)
        return m, run_algorithm1(m, cfg)


def test_constant_advection_map_follows_characteristics(constant_run):
    m, res = constant_run
    g = m.grid
    k = 75
    xt = g.unscale_points(res.shift_net(shift_inputs(m, [k])))
    exact = g.centroids - np.array([1.0, -1.0]) * (m.params[k] - m.params[50])
    support = np.abs(m.data[:, k]) > 0.1 * np.max(np.abs(m.data[:, k]))
    err = np.linalg.norm(xt - exact, axis=1)[support] / g.cell_diagonal
    assert err.max() <= 2.0


def test_constant_advection_shifted_modes(constant_run):
    from nnspod.pod import modes_for_threshold
    m, res = constant_run
    assert abs(modes_for_threshold(res.pod_before, 1e-3) - 14) <= 3
    assert modes_for_threshold(res.pod_after, 1e-3) <= 6
