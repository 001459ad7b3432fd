"""Central-difference gradient probes shared by the unit and acceptance suites."""
import numpy as np

from nnspod.neural import Mlp

KINK = 1e-4


def _near_kink_rows(net: Mlp, x):
    _, cache = net.forward(x)
    near = np.zeros(len(x), dtype=bool)
    for layer, z in zip(net.layers, cache.pre):
        if layer.activation == "prelu":
            near |= np.any(np.abs(z) < KINK, axis=1)
        elif layer.activation == "hardsigmoid":
            near |= np.any(np.abs(np.abs(z) - 3.0) < KINK, axis=1)
    return near


def _kink_state(net: Mlp, x):
    """Which side of every kink each pre-activation lies on, plus a proximity flag."""
    _, cache = net.forward(x)
    sides, near = [], False
    for layer, z in zip(net.layers, cache.pre):
        if layer.activation == "prelu":
            sides.append(z >= 0)
            near |= bool(np.any(np.abs(z) < KINK))
        elif layer.activation == "hardsigmoid":
            sides.append(np.sign(np.abs(z) - 3.0))
            near |= bool(np.any(np.abs(np.abs(z) - 3.0) < KINK))
    return sides, near


def _smooth_between(net, x, p, idx, old, offsets):
    base, near = _kink_state(net, x)
    if near:
        return False
    for off in offsets:
        p[idx] = old + off
        sides, near = _kink_state(net, x)
        if near or any(not np.array_equal(a, b) for a, b in zip(sides, base)):
            p[idx] = old
            return False
    p[idx] = old
    return True


def probe_relative_errors(net: Mlp, x, n_probes=100, h=1e-4, order=4, seed=0):
    """Relative error of backward() against central differences at random parameters.

    The loss is ``sum(c * net(x))`` with fixed random weights ``c``.
    ``order=4`` uses the five-point stencil, ``order=2`` the plain
    two-point one.  Input rows sitting in a PReLU/HardSigmoid kink
    neighbourhood are dropped; probes whose stencil reaches or crosses a
    kink are skipped and redrawn.
    """
    rng = np.random.default_rng(seed)
    x = np.atleast_2d(x)
    x = x[~_near_kink_rows(net, x)]
    y, cache = net.forward(x)
    c = rng.standard_normal(y.shape)
    grads, _ = net.backward(cache, c)
    params = net.parameters()
    sizes = np.array([p.size for p in params])
    offsets = (h, -h, 2 * h, -2 * h) if order == 4 else (h, -h)
    errors = []
    attempts = 0
    while len(errors) < n_probes and attempts < 50 * n_probes:
        attempts += 1
        which = rng.choice(len(params), p=sizes / sizes.sum())
        idx = np.unravel_index(rng.integers(params[which].size), params[which].shape)
        p = params[which]
        old = p[idx]
        if not _smooth_between(net, x, p, idx, old, offsets):
            continue
        f = {}
        for off in offsets:
            p[idx] = old + off
            f[off] = float(np.sum(c * net(x)))
        p[idx] = old
        if order == 4:
            fd = (8 * (f[h] - f[-h]) - (f[2 * h] - f[-2 * h])) / (12 * h)
        else:
            fd = (f[h] - f[-h]) / (2 * h)
        an = grads[which][idx]
        errors.append(abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return np.array(errors)


def input_gradient_errors(net: Mlp, x, h=1e-6, seed=0):
    rng = np.random.default_rng(seed)
    y, cache = net.forward(x)
    c = rng.standard_normal(y.shape)
    _, gx = net.backward(cache, c, param_grads=False)
    errs = []
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            xp, xm = x.copy(), x.copy()
            xp[i, j] += h
            xm[i, j] -= h
            fd = (np.sum(c * net(xp)) - np.sum(c * net(xm))) / (2 * h)
            errs.append(abs(fd - gx[i, j]) / max(abs(fd), abs(gx[i, j]), 1e-8))
    return np.array(errs)
