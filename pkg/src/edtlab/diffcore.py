"""Minimal reverse-mode dense network stack with Adam.

Dense layers over numpy arrays with exact hand-written backward passes;
enough to train the image augmenters and the factor predictor without an
ML framework. Parameters default to float32 while loss reductions always
accumulate in float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

CHECKPOINT_MAGIC = b"EDTW"

ACTIVATIONS = ("identity", "relu", "sigmoid", "tanh")
_ACT_TAGS = {name: i for i, name in enumerate(ACTIVATIONS)}

BCE_EPS = 1e-7


class NumericsError(FloatingPointError):
    """A NaN or Inf escaped an operation."""


def _check_finite(arr: np.ndarray, where: str):
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values in {where}")


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0)
    if name == "sigmoid":
        # Split by sign to stay stable for large |z|.
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if name == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {name!r}")


def _activate_grad(name: str, out: np.ndarray, gout: np.ndarray) -> np.ndarray:
    if name == "identity":
        return gout
    if name == "relu":
        return gout * (out > 0)
    if name == "sigmoid":
        return gout * out * (1.0 - out)
    if name == "tanh":
        return gout * (1.0 - out * out)
    raise ValueError(f"unknown activation {name!r}")


class DenseLayer:
    """One affine map plus activation; weights are (in_dim, out_dim)."""

    def __init__(self, weights: np.ndarray, biases: np.ndarray, activation: str):
        if activation not in _ACT_TAGS:
            raise ValueError(f"unknown activation {activation!r}")
        if weights.ndim != 2 or biases.shape != (weights.shape[1],):
            raise ValueError(f"inconsistent layer shapes {weights.shape} / {biases.shape}")
        self.weights = weights
        self.biases = biases
        self.activation = activation

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]


class Network:
    """A chain of dense layers with explicit forward caches."""

    def __init__(self, layers: list[DenseLayer]):
        if not layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )
        self.layers = layers

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dtype(self):
        return self.layers[0].weights.dtype

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.biases)
        return out

    def zero_grads(self) -> list[np.ndarray]:
        return [np.zeros_like(p) for p in self.params()]

    def forward(self, batch: np.ndarray) -> tuple[np.ndarray, list]:
        """Run the network; the cache holds per-layer (input, output)."""
        if batch.ndim != 2 or batch.shape[1] != self.in_dim:
            raise ValueError(f"batch shape {batch.shape} != (*, {self.in_dim})")
        x = batch.astype(self.dtype, copy=False)
        cache = []
        for layer in self.layers:
            z = x @ layer.weights + layer.biases
            out = _activate(layer.activation, z)
            cache.append((x, out))
            x = out
        _check_finite(x, "network output")
        return x, cache

    def backward(self, cache: list, gout: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Exact reverse pass; returns (grad wrt input, grads aligned with params())."""
        if len(cache) != len(self.layers):
            raise ValueError("cache does not match network depth")
        grads: list[np.ndarray] = [None] * (2 * len(self.layers))
        g = gout
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            x, out = cache[idx]
            gz = _activate_grad(layer.activation, out, g)
            grads[2 * idx] = (x.T @ gz).astype(layer.weights.dtype, copy=False)
            grads[2 * idx + 1] = gz.sum(axis=0, dtype=np.float64).astype(
                layer.biases.dtype, copy=False
            )
            g = gz @ layer.weights.T
        _check_finite(g, "input gradient")
        return g, grads


def glorot_network(
    dims: list[int],
    activations: list[str],
    rng: np.random.Generator,
    dtype=np.float32,
) -> Network:
    """Uniform +/- sqrt(6/(fan_in+fan_out)) init over the given layer dims."""
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(dims, dims[1:], activations):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
        b = np.zeros(fan_out, dtype=dtype)
        layers.append(DenseLayer(w, b, act))
    return Network(layers)


# --- losses -------------------------------------------------------------------


def loss_mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements, with grad wrt pred."""
    loss, gpred, _ = distance_mse(pred, target)
    return loss, gpred


def loss_bce(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Pixel-wise binary cross-entropy; pred is clamped to [eps, 1-eps]."""
    loss, gpred, _ = distance_bce(pred, target)
    return loss, gpred


def distance_mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """MSE with gradients wrt both arguments (targets may be model outputs)."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    loss = float(np.mean(diff * diff))
    gpred = (2.0 / diff.size) * diff
    return (
        loss,
        gpred.astype(pred.dtype, copy=False),
        (-gpred).astype(target.dtype, copy=False),
    )


def distance_bce(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """BCE with gradients wrt both arguments; pred clamps to [eps, 1-eps]."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    p = np.clip(pred.astype(np.float64), BCE_EPS, 1.0 - BCE_EPS)
    t = target.astype(np.float64)
    loss = float(np.mean(-t * np.log(p) - (1.0 - t) * np.log1p(-p)))
    inside = (pred > BCE_EPS) & (pred < 1.0 - BCE_EPS)
    gpred = (p - t) / (p * (1.0 - p) * p.size) * inside
    gtarget = (np.log1p(-p) - np.log(p)) / p.size
    return (
        loss,
        gpred.astype(pred.dtype, copy=False),
        gtarget.astype(target.dtype, copy=False),
    )


def loss_softmax_ce(logits: np.ndarray, classes: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(logits) against integer class ids."""
    if logits.ndim != 2 or classes.shape != (logits.shape[0],):
        raise ValueError(f"bad shapes {logits.shape} / {classes.shape}")
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    expz = np.exp(z)
    probs = expz / expz.sum(axis=1, keepdims=True)
    n = len(classes)
    picked = probs[np.arange(n), classes]
    loss = float(np.mean(-np.log(np.maximum(picked, 1e-300))))
    grad = probs
    grad[np.arange(n), classes] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype, copy=False)


# --- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter moment accumulators for one parameter list."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None

    def initialize(self, params: list[np.ndarray]):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]):
        """Bias-corrected Adam update, in place."""
        if self.m is None:
            self.initialize(params)
        if len(params) != len(self.m) or len(grads) != len(params):
            raise ValueError("parameter/gradient structure mismatch")
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            _check_finite(g, "adam gradient")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            _check_finite(p, "adam parameters")


# --- checkpoint file (binary, little-endian) -----------------------------------
#
# magic "EDTW"; u32 version; u32 network count; per network: u32 name length,
# name bytes, u32 layer count, per layer (u32 in, u32 out, u8 activation tag),
# then per layer float32 weight and bias blobs; u8 adam flag and, when set,
# u64 step count, f64 lr/beta1/beta2/eps and float32 moment blobs.


def write_checkpoint(path, networks: dict[str, Network], adam: dict[str, AdamState] | None = None):
    adam = adam or {}
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", 1, len(networks)))
        for name, net in networks.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", len(net.layers)))
            for layer in net.layers:
                fh.write(struct.pack("<IIB", layer.in_dim, layer.out_dim,
                                     _ACT_TAGS[layer.activation]))
            for layer in net.layers:
                fh.write(layer.weights.astype("<f4").tobytes())
                fh.write(layer.biases.astype("<f4").tobytes())
            state = adam.get(name)
            if state is None or state.m is None:
                fh.write(struct.pack("<B", 0))
            else:
                fh.write(struct.pack("<B", 1))
                fh.write(struct.pack("<Qdddd", state.step_count, state.lr,
                                     state.beta1, state.beta2, state.eps))
                for m, v in zip(state.m, state.v):
                    fh.write(m.astype("<f4").tobytes())
                    fh.write(v.astype("<f4").tobytes())


def read_checkpoint(path) -> tuple[dict[str, Network], dict[str, AdamState]]:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic in {path}")
        version, count = struct.unpack("<II", fh.read(8))
        if version != 1:
            raise ValueError(f"unsupported checkpoint version {version}")
        networks: dict[str, Network] = {}
        adam: dict[str, AdamState] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (n_layers,) = struct.unpack("<I", fh.read(4))
            shapes = []
            for _ in range(n_layers):
                i, o, tag = struct.unpack("<IIB", fh.read(9))
                shapes.append((i, o, ACTIVATIONS[tag]))
            layers = []
            for i, o, act in shapes:
                w = np.frombuffer(fh.read(4 * i * o), dtype="<f4").reshape(i, o).copy()
                b = np.frombuffer(fh.read(4 * o), dtype="<f4").copy()
                layers.append(DenseLayer(w, b, act))
            net = Network(layers)
            networks[name] = net
            (has_adam,) = struct.unpack("<B", fh.read(1))
            if has_adam:
                step_count, lr, b1, b2, eps = struct.unpack("<Qdddd", fh.read(40))
                state = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, step_count=step_count)
                state.m, state.v = [], []
                for p in net.params():
                    state.m.append(
                        np.frombuffer(fh.read(4 * p.size), dtype="<f4").reshape(p.shape).copy()
                    )
                    state.v.append(
                        np.frombuffer(fh.read(4 * p.size), dtype="<f4").reshape(p.shape).copy()
                    )
                adam[name] = state
        return networks, adam
