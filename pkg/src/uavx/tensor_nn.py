"""Minimal dense neural-network engine on 64-bit numpy arrays.

Networks are stacks of affine layers with relu or identity activations.
Gradients are exact reverse-mode, the optimizer is SGD or Adam, and all
initialization is seeded. Parameters can be checkpointed to a flat binary
format (see save_network).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

ACTIVATIONS = ("relu", "identity")

_MAGIC = b"UXNN0001"
_ACT_CODE = {"relu": 0, "identity": 1}
_ACT_NAME = {v: k for k, v in _ACT_CODE.items()}


@dataclass
class Layer:
    weights: np.ndarray  # (in_dim, out_dim)
    biases: np.ndarray   # (out_dim,)
    activation: str


@dataclass
class Network:
    layers: list[Layer]

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[1]

    def parameter_arrays(self):
        """All parameter arrays in a fixed order (w0, b0, w1, b1, ...)."""
        out = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.biases)
        return out


def init_network(layer_dims, activations=None, seed: int = 0) -> Network:
    """Build a network with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights.

    layer_dims is the chain of dimensions, e.g. [4, 3] for one affine layer
    mapping 4 inputs to 3 outputs. Biases start at zero. By default hidden
    layers use relu and the final layer is identity.
    """
    dims = list(layer_dims)
    if len(dims) < 2:
        raise ConfigError(f"need at least one layer (got dims {dims})")
    if any(int(d) <= 0 for d in dims):
        raise ConfigError(f"layer dimensions must be positive (got {dims})")
    n_layers = len(dims) - 1
    if activations is None:
        activations = ["relu"] * (n_layers - 1) + ["identity"]
    activations = list(activations)
    if len(activations) != n_layers:
        raise ConfigError(
            f"{n_layers} layers need {n_layers} activations, got {len(activations)}"
        )
    for act in activations:
        if act not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {act!r}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
        scale = 1.0 / np.sqrt(fan_in)
        weights = rng.uniform(-scale, scale, size=(fan_in, fan_out))
        biases = np.zeros(fan_out)
        layers.append(Layer(weights, biases, act))
    return Network(layers)


def _as_batch(x: np.ndarray, dim: int, what: str):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"{what} must have {dim} features, got shape {x.shape}")
    return x, squeeze


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return z


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Pure forward pass. Accepts a single vector or a (batch, dim) array."""
    a, squeeze = _as_batch(x, net.input_dim, "input")
    for layer in net.layers:
        a = _activate(a @ layer.weights + layer.biases, layer.activation)
    return a[0] if squeeze else a


def forward_trace(net: Network, x: np.ndarray):
    """Forward pass keeping per-layer inputs and pre-activations for backward.

    Returns (output, trace); the output is always 2-D here.
    """
    a, _ = _as_batch(x, net.input_dim, "input")
    inputs = []
    preacts = []
    for layer in net.layers:
        inputs.append(a)
        z = a @ layer.weights + layer.biases
        preacts.append(z)
        a = _activate(z, layer.activation)
    return a, (inputs, preacts)


def backward_from_trace(net: Network, trace, loss_grad: np.ndarray):
    """Reverse-mode pass from d(loss)/d(output). Returns (grads, input_grad).

    grads is a list of (dW, db) matching net.layers.
    """
    inputs, preacts = trace
    da = np.asarray(loss_grad, dtype=np.float64)
    if da.ndim == 1:
        da = da[None, :]
    if da.shape != preacts[-1].shape:
        raise ShapeError(
            f"loss gradient shape {da.shape} does not match output {preacts[-1].shape}"
        )
    grads: list = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if layer.activation == "relu":
            dz = da * (preacts[i] > 0.0)
        else:
            dz = da
        grads[i] = (inputs[i].T @ dz, dz.sum(axis=0))
        da = dz @ layer.weights.T
    return grads, da


def backward(net: Network, x: np.ndarray, loss_grad: np.ndarray):
    """Parameter gradients of the forward computation at input x."""
    _, trace = forward_trace(net, x)
    grads, _ = backward_from_trace(net, trace, loss_grad)
    return grads


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Batch-mean squared distance and its gradient w.r.t. pred.

    loss = sum((pred - target)^2) / batch, grad = 2 (pred - target) / batch.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    batch = pred.shape[0] if pred.ndim > 1 else 1
    diff = pred - target
    return float(np.sum(diff * diff) / batch), 2.0 * diff / batch


def clone_parameters(src: Network) -> Network:
    """Deep copy; updates to either network never affect the other."""
    return Network(
        [Layer(l.weights.copy(), l.biases.copy(), l.activation) for l in src.layers]
    )


@dataclass
class OptimizerConfig:
    algo: str = "adam"
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8


class Optimizer:
    """Update state for one network. Adam moments are owned per instance."""

    def __init__(self, net: Network, config: OptimizerConfig | None = None):
        self.config = config or OptimizerConfig()
        if self.config.algo not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.config.algo!r}")
        self._m = [np.zeros_like(p) for p in net.parameter_arrays()]
        self._v = [np.zeros_like(p) for p in net.parameter_arrays()]
        self._t = 0


def optimizer_step(net: Network, grads, opt: Optimizer) -> Network:
    """Apply one in-place update; raises NumericError on non-finite gradients."""
    params = net.parameter_arrays()
    flat_grads = []
    for i, (dw, db) in enumerate(grads):
        if dw.shape != net.layers[i].weights.shape or db.shape != net.layers[i].biases.shape:
            raise ShapeError(f"gradient shape mismatch at layer {i}")
        flat_grads.append(dw)
        flat_grads.append(db)
    for i, g in enumerate(flat_grads):
        if not np.all(np.isfinite(g)):
            raise NumericError(
                f"non-finite gradient in parameter {i} "
                f"(min {np.nanmin(g)}, max {np.nanmax(g)}); halting training"
            )
    cfg = opt.config
    if cfg.algo == "sgd":
        for p, g in zip(params, flat_grads):
            p -= cfg.lr * g
        return net
    beta1, beta2 = cfg.betas
    opt._t += 1
    t = opt._t
    for p, g, m, v in zip(params, flat_grads, opt._m, opt._v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return net


def save_network(net: Network, path) -> None:
    """Checkpoint format: magic 'UXNN0001', uint32 layer count, then per
    layer a header (uint32 in_dim, uint32 out_dim, uint8 activation code
    0=relu 1=identity) followed by row-major float64 weights and biases,
    all little-endian.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(net.layers)))
        for layer in net.layers:
            fan_in, fan_out = layer.weights.shape
            fh.write(struct.pack("<IIB", fan_in, fan_out, _ACT_CODE[layer.activation]))
            fh.write(layer.weights.astype("<f8").tobytes(order="C"))
            fh.write(layer.biases.astype("<f8").tobytes(order="C"))


def load_network(path) -> Network:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ConfigError(f"{path}: not a network checkpoint (bad magic {magic!r})")
        (count,) = struct.unpack("<I", fh.read(4))
        layers = []
        for _ in range(count):
            fan_in, fan_out, code = struct.unpack("<IIB", fh.read(9))
            if code not in _ACT_NAME:
                raise ConfigError(f"{path}: unknown activation code {code}")
            w = np.frombuffer(fh.read(8 * fan_in * fan_out), dtype="<f8")
            w = w.reshape(fan_in, fan_out).astype(np.float64)
            b = np.frombuffer(fh.read(8 * fan_out), dtype="<f8").astype(np.float64)
            layers.append(Layer(w.copy(), b.copy(), _ACT_NAME[code]))
    return Network(layers)
