"""Dense multilayer perceptron with hand-written reverse mode and Adam.

Inputs are batched as ``(n, d_in)`` rows.  ``backward`` returns the
gradient with respect to the input as well as the parameters, which is what
lets a frozen network sit downstream of a trainable one.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("sigmoid", "hardsigmoid", "prelu", "linear")
PRELU_INIT = 0.25

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


class TrainingError(ArithmeticError):
    """Non-finite loss or gradient during training."""

    def __init__(self, message: str, epoch: int | None = None, layer: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.layer = layer


class SplitMix64:
    """Counter-based SplitMix64 stream; output ``i`` depends only on (seed, i)."""

    def __init__(self, seed: int):
        self.seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            i = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
            z = self.seed + i * _GOLDEN
            z = (z ^ (z >> np.uint64(30))) * _M1
            z = (z ^ (z >> np.uint64(27))) * _M2
            z = z ^ (z >> np.uint64(31))
        self.counter += n
        return z

    def uniform(self, n: int) -> np.ndarray:
        """Doubles in [0, 1) with 53 random bits."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def derive_seed(seed: int, stream: int) -> int:
    """Independent sub-seed for a named stream."""
    return int(SplitMix64(seed ^ (stream * 0xD1B54A32D192ED03 & 0xFFFFFFFFFFFFFFFF)).next_u64(1)[0])


def _activate(kind, z, slope):
    """Activation applied in place to the freshly computed pre-activation copy."""
    if kind == "sigmoid":
        a = np.negative(z)
        with np.errstate(over="ignore"):
            np.exp(a, out=a)
        a += 1.0
        return np.reciprocal(a, out=a)
    if kind == "hardsigmoid":
        return np.clip(z / 6.0 + 0.5, 0.0, 1.0)
    if kind == "prelu":
        a = np.minimum(z, 0.0)
        a *= slope - 1.0
        a += z
        return a
    return z


def _activation_backward(kind, z, a, slope, g):
    """``g * act'(z)``; breakpoints take the interior branch."""
    if kind == "sigmoid":
        d = np.subtract(1.0, a)
        d *= a
        d *= g
        return d
    if kind == "hardsigmoid":
        return np.where((z >= -3.0) & (z <= 3.0), g / 6.0, 0.0)
    if kind == "prelu":
        d = g.copy()
        np.multiply(d, slope, out=d, where=z < 0)
        return d
    return g


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "linear"
    slope: np.ndarray = field(default_factory=lambda: np.array([PRELU_INIT]))

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.slope = np.asarray(self.slope, dtype=float).reshape(1)
        if self.W.ndim != 2 or self.W.shape[0] != self.b.size:
            raise ValueError(f"weight {self.W.shape} and bias {self.b.shape} do not chain")

    def parameters(self) -> list[np.ndarray]:
        ps = [self.W, self.b]
        if self.activation == "prelu":
            ps.append(self.slope)
        return ps


@dataclass
class Cache:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    post: list[np.ndarray]
    single: bool


class Mlp:
    """Stack of affine layers, each followed by its activation."""

    def __init__(self, layers: list[Layer]):
        if not layers:
            raise ValueError("an MLP needs at least one layer")
        for k in range(1, len(layers)):
            if layers[k].W.shape[1] != layers[k - 1].W.shape[0]:
                raise ValueError(
                    f"layer {k} expects {layers[k].W.shape[1]} inputs, "
                    f"layer {k - 1} gives {layers[k - 1].W.shape[0]}"
                )
        self.layers = layers

    @property
    def d_in(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def d_out(self) -> int:
        return self.layers[-1].W.shape[0]

    @property
    def sizes(self) -> list[int]:
        return [self.d_in] + [l.W.shape[0] for l in self.layers]

    def parameters(self) -> list[np.ndarray]:
        return [p for l in self.layers for p in l.parameters()]

    def forward(self, x, keep_cache: bool = True):
        """Evaluate the network; returns ``(output, cache)``."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        a = np.atleast_2d(x)
        if a.shape[1] != self.d_in:
            raise ValueError(f"input has {a.shape[1]} features, network expects {self.d_in}")
        inputs, pres, posts = [], [], []
        for layer in self.layers:
            z = a @ layer.W.T
            z += layer.b
            out = _activate(layer.activation, z, layer.slope[0])
            if keep_cache:
                inputs.append(a)
                pres.append(z)
                posts.append(out)
            a = out
        cache = Cache(inputs, pres, posts, single) if keep_cache else None
        return (a[0] if single else a), cache

    def __call__(self, x):
        return self.forward(x, keep_cache=False)[0]

    def backward(self, cache: Cache, output_grad, param_grads: bool = True):
        """Reverse sweep for the scalar loss whose output gradient is given.

        Returns ``(grads, input_grad)``; ``grads`` lines up with
        :meth:`parameters` (empty when ``param_grads`` is false).
        """
        if cache is None or len(cache.pre) != len(self.layers):
            raise RuntimeError("stale or missing forward cache")
        g = np.atleast_2d(np.asarray(output_grad, dtype=float))
        if g.shape != cache.post[-1].shape:
            raise RuntimeError(
                f"output gradient shape {g.shape} does not match cached output {cache.post[-1].shape}"
            )
        grads: list[list[np.ndarray]] = []
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            z, a_out, a_in = cache.pre[k], cache.post[k], cache.inputs[k]
            if layer.W.shape != (z.shape[1], a_in.shape[1]):
                raise RuntimeError("stale forward cache: layer shapes changed")
            lg = []
            if param_grads and layer.activation == "prelu":
                lg_slope = np.array([np.vdot(g, np.minimum(z, 0.0))])
            dz = _activation_backward(layer.activation, z, a_out, layer.slope[0], g)
            if param_grads:
                lg = [dz.T @ a_in, dz.sum(axis=0)]
                if layer.activation == "prelu":
                    lg.append(lg_slope)
            grads.append(lg)
            g = dz @ layer.W
        flat = [p for lg in reversed(grads) for p in lg]
        return flat, (g[0] if cache.single else g)

    def copy(self) -> "Mlp":
        return Mlp([
            Layer(l.W.copy(), l.b.copy(), l.activation, l.slope.copy()) for l in self.layers
        ])

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def to_dict(self) -> dict:
        return {
            "sizes": self.sizes,
            "layers": [
                {
                    "activation": l.activation,
                    "shape": list(l.W.shape),
                    "weights": [float(v) for v in l.W.ravel()],
                    "bias": [float(v) for v in l.b],
                    **({"slope": float(l.slope[0])} if l.activation == "prelu" else {}),
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        layers = []
        for ld in d["layers"]:
            W = np.array(ld["weights"], dtype=float).reshape(ld["shape"])
            layers.append(Layer(W, np.array(ld["bias"]), ld["activation"], [ld.get("slope", PRELU_INIT)]))
        return cls(layers)

    def dumps(self) -> str:
        return dumps_checkpoint(self.to_dict())

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def dumps_checkpoint(obj) -> str:
    """Compact JSON; floats use the shortest repr that round-trips exactly."""
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def init_mlp(seed: int, sizes, hidden_activation: str = "sigmoid",
             output_activation: str = "linear") -> Mlp:
    """Glorot-uniform weights, zero biases, PReLU slopes at 0.25."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"invalid layer sizes {sizes}")
    for act in (hidden_activation, output_activation):
        if act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {act!r}; choose from {ACTIVATIONS}")
    rng = SplitMix64(seed)
    layers = []
    for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = np.sqrt(6.0 / (n_in + n_out))
        W = (2.0 * rng.uniform(n_out * n_in) - 1.0).reshape(n_out, n_in) * bound
        act = output_activation if k == len(sizes) - 2 else hidden_activation
        layers.append(Layer(W, np.zeros(n_out), act, [PRELU_INIT]))
    return Mlp(layers)


class Adam:
    """Bias-corrected adaptive-moment optimiser over a fixed parameter list."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray], epoch: int | None = None) -> None:
        if len(grads) != len(self.params):
            raise ValueError(f"{len(grads)} gradients for {len(self.params)} parameters")
        for i, g in enumerate(grads):
            if g.shape != self.params[i].shape:
                raise ValueError(f"gradient {i} has shape {g.shape}, parameter {self.params[i].shape}")
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in parameter {i}", epoch=epoch, layer=i)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
