"""Feed-forward networks with dense, convolutional and pooling layers.

Weights of both dense and convolutional layers are stored as 2-D matrices of
shape ``(fan_in, units)``: column ``j`` holds the incoming weights of unit (or
filter) ``j``. Activations flow between layers as ``(batch, features)``
matrices; spatial layers reshape to ``(batch, channels, height, width)``
internally using C order.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

ACTIVATIONS = ("sigmoid", "tanh", "relu", "identity")


class SpecError(ValueError):
    """Raised when a network description is inconsistent."""


class ShapeError(ValueError):
    """Raised when an array does not match the network's shape chain."""


@dataclass(frozen=True)
class Dense:
    out: int
    activation: str = "sigmoid"


@dataclass(frozen=True)
class Conv:
    filters: int
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    activation: str = "relu"


@dataclass(frozen=True)
class Pool:
    """Non-overlapping pooling over ``region`` activations.

    ``window`` gives the (rows, cols) extent of one pooling region and must
    multiply out to ``region``. When omitted, a perfect-square region on a
    spatial map becomes a square window, otherwise the region runs along the
    last axis.
    """

    mode: str = "max"
    region: int = 2
    window: Optional[tuple[int, int]] = None

    @property
    def activation(self) -> str:
        return "identity"


LayerSpec = Union[Dense, Conv, Pool]


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    layers: tuple
    num_classes: int
    input_bound: float = 1.0
    use_bias: bool = True
    input_shape: Optional[tuple[int, int, int]] = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.input_shape is not None:
            object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        self.validate()

    @property
    def depth(self) -> int:
        """Number of weight layers (pooling layers are not counted)."""
        return sum(1 for layer in self.layers if not isinstance(layer, Pool))

    def validate(self) -> None:
        if self.num_classes < 2:
            raise SpecError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_dim < 1:
            raise SpecError("input_dim must be >= 1")
        if self.input_bound < 0:
            raise SpecError("input_bound must be >= 0")
        if not self.layers:
            raise SpecError("network needs at least one layer")
        if self.input_shape is not None and math.prod(self.input_shape) != self.input_dim:
            raise SpecError(f"input_shape {self.input_shape} does not flatten to input_dim={self.input_dim}")
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                if layer.out < 1:
                    raise SpecError(f"layer {i}: out_units must be >= 1")
                _check_activation(layer.activation, i)
            elif isinstance(layer, Conv):
                if layer.filters < 1 or min(layer.kernel) < 1 or layer.stride < 1:
                    raise SpecError(f"layer {i}: filters, kernel and stride must be >= 1")
                _check_activation(layer.activation, i)
            elif isinstance(layer, Pool):
                if layer.mode not in ("max", "avg"):
                    raise SpecError(f"layer {i}: pool mode must be 'max' or 'avg'")
                if layer.region < 1:
                    raise SpecError(f"layer {i}: pool region must be >= 1")
                if layer.window is not None and layer.window[0] * layer.window[1] != layer.region:
                    raise SpecError(f"layer {i}: pool window {layer.window} does not cover region {layer.region}")
            else:
                raise SpecError(f"layer {i}: unknown layer type {type(layer).__name__}")
        last = self.layers[-1]
        if not isinstance(last, Dense) or last.activation != "identity":
            raise SpecError("last layer must be Dense with identity activation")
        if last.out != self.num_classes:
            raise SpecError(f"last layer has {last.out} units but num_classes={self.num_classes}")
        self.shapes()

    def shapes(self) -> list[tuple[int, int, int]]:
        """Output shape ``(channels, height, width)`` of every layer."""
        shape = self.input_shape or (1, 1, self.input_dim)
        out = []
        for i, layer in enumerate(self.layers):
            c, h, w = shape
            if isinstance(layer, Dense):
                shape = (1, 1, layer.out)
            elif isinstance(layer, Conv):
                kh, kw = layer.kernel
                if kh > h or kw > w:
                    raise SpecError(f"layer {i}: kernel {layer.kernel} larger than input {h}x{w}")
                shape = (layer.filters, (h - kh) // layer.stride + 1, (w - kw) // layer.stride + 1)
            else:
                ph, pw = pool_window(layer, shape)
                if h % ph or w % pw:
                    raise SpecError(f"layer {i}: pool window {ph}x{pw} does not tile {h}x{w}")
                shape = (c, h // ph, w // pw)
            out.append(shape)
        return out

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            if isinstance(layer, Dense):
                layers.append({"kind": "dense", "out": layer.out, "activation": layer.activation})
            elif isinstance(layer, Conv):
                layers.append({"kind": "conv", "filters": layer.filters, "kernel": list(layer.kernel),
                               "stride": layer.stride, "activation": layer.activation})
            else:
                entry = {"kind": "pool", "mode": layer.mode, "region": layer.region}
                if layer.window is not None:
                    entry["window"] = list(layer.window)
                layers.append(entry)
        doc = {"input_dim": self.input_dim, "input_bound": self.input_bound, "use_bias": self.use_bias,
               "num_classes": self.num_classes, "layers": layers}
        if self.input_shape is not None:
            doc["input_shape"] = list(self.input_shape)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkSpec":
        try:
            layers = [_layer_from_dict(entry) for entry in doc["layers"]]
            shape = doc.get("input_shape")
            return cls(input_dim=int(doc["input_dim"]), layers=layers, num_classes=int(doc["num_classes"]),
                       input_bound=float(doc.get("input_bound", 1.0)), use_bias=bool(doc.get("use_bias", True)),
                       input_shape=tuple(shape) if shape is not None else None)
        except (KeyError, TypeError) as exc:
            raise SpecError(f"malformed network spec: {exc!r}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        return cls.from_dict(json.loads(text))


def _check_activation(name, index):
    if name not in ACTIVATIONS:
        raise SpecError(f"layer {index}: unknown activation {name!r}")


def _layer_from_dict(entry: dict) -> LayerSpec:
    kind = entry["kind"]
    if kind == "dense":
        return Dense(int(entry["out"]), entry.get("activation", "sigmoid"))
    if kind == "conv":
        kernel = entry.get("kernel", [3, 3])
        if isinstance(kernel, int):
            kernel = [kernel, kernel]
        return Conv(int(entry["filters"]), (int(kernel[0]), int(kernel[1])), int(entry.get("stride", 1)),
                    entry.get("activation", "relu"))
    if kind == "pool":
        window = entry.get("window")
        return Pool(entry.get("mode", "max"), int(entry["region"]),
                    (int(window[0]), int(window[1])) if window is not None else None)
    raise SpecError(f"unknown layer kind {kind!r}")


def pool_window(layer: Pool, in_shape: tuple[int, int, int]) -> tuple[int, int]:
    if layer.window is not None:
        return layer.window
    _, h, _ = in_shape
    root = math.isqrt(layer.region)
    if h > 1 and root * root == layer.region:
        return (root, root)
    return (1, layer.region)


def mlp_spec(input_dim, hidden, num_classes, activation="sigmoid", input_bound=1.0, use_bias=True) -> NetworkSpec:
    """Fully connected spec with the given hidden widths and a linear output layer."""
    layers = [Dense(int(n), activation) for n in hidden] + [Dense(num_classes, "identity")]
    return NetworkSpec(input_dim, layers, num_classes, input_bound=input_bound, use_bias=use_bias)


def allocate_units(total_hidden: int, depth: int) -> int:
    """Width of each hidden layer when ``total_hidden`` units are spread evenly over ``depth - 1`` layers."""
    if depth < 2:
        raise ValueError(f"depth must be >= 2, got {depth}")
    if total_hidden < depth - 1:
        raise ValueError(f"cannot give {depth - 1} hidden layers at least one unit from {total_hidden}")
    return total_hidden // (depth - 1)


@dataclass
class Network:
    spec: NetworkSpec
    weights: list  # per layer: (fan_in, units) array, or None for pooling
    biases: list  # per layer: (units,) array, or None

    def copy(self) -> "Network":
        return Network(self.spec,
                       [None if w is None else w.copy() for w in self.weights],
                       [None if b is None else b.copy() for b in self.biases])

    def parameters(self):
        """Yield ``(layer_index, name, array)`` in a fixed order."""
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w is not None:
                yield i, "weight", w
            if b is not None:
                yield i, "bias", b

    @property
    def n_parameters(self) -> int:
        return sum(p.size for _, _, p in self.parameters())

    def equals(self, other: "Network") -> bool:
        """Bit-for-bit equality of spec and parameters."""
        if self.spec != other.spec:
            return False
        mine, theirs = list(self.parameters()), list(other.parameters())
        return len(mine) == len(theirs) and all(
            a[:2] == b[:2] and np.array_equal(a[2], b[2]) for a, b in zip(mine, theirs))

    def save(self, path) -> None:
        arrays = {f"{name}_{i}": p for i, name, p in self.parameters()}
        np.savez(path, spec=np.array(self.spec.to_json()), **arrays)

    @classmethod
    def load(cls, path) -> "Network":
        with np.load(path) as f:
            spec = NetworkSpec.from_json(str(f["spec"]))
            weights = [f[f"weight_{i}"] if f"weight_{i}" in f else None for i in range(len(spec.layers))]
            biases = [f[f"bias_{i}"] if f"bias_{i}" in f else None for i in range(len(spec.layers))]
        return cls(spec, weights, biases)


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)
    argmax: list = field(default_factory=list)  # per layer; set only for max pooling

    def __len__(self):
        return len(self.post)


def build(spec: NetworkSpec, seed: int) -> Network:
    """Instantiate ``spec`` with Glorot-uniform weights and zero biases."""
    spec.validate()
    rng = np.random.default_rng(seed)
    shapes = spec.shapes()
    prev = spec.input_shape or (1, 1, spec.input_dim)
    weights, biases = [], []
    for layer, shape in zip(spec.layers, shapes):
        if isinstance(layer, Pool):
            weights.append(None)
            biases.append(None)
        else:
            if isinstance(layer, Dense):
                fan_in, units = math.prod(prev), layer.out
            else:
                fan_in, units = prev[0] * layer.kernel[0] * layer.kernel[1], layer.filters
            r = math.sqrt(6.0 / (fan_in + units))
            weights.append(rng.uniform(-r, r, size=(fan_in, units)))
            biases.append(np.zeros(units) if spec.use_bias else None)
        prev = shape
    return Network(spec, weights, biases)


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def activation_grad(name: str, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        return post * (1.0 - post)
    if name == "tanh":
        return 1.0 - post * post
    if name == "relu":
        # derivative at 0 taken as 0
        return (pre > 0).astype(pre.dtype)
    return np.ones_like(pre)


def _patches(x: np.ndarray, kernel, stride) -> np.ndarray:
    """im2col: ``(b, C, H, W)`` -> ``(b, OH, OW, C*kh*kw)``."""
    kh, kw = kernel
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, oh, ow = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh, ow, c * kh * kw)


def _pool_blocks(x4: np.ndarray, ph: int, pw: int) -> np.ndarray:
    b, c, h, w = x4.shape
    blocks = x4.reshape(b, c, h // ph, ph, w // pw, pw).transpose(0, 1, 2, 4, 3, 5)
    return blocks.reshape(b, c, h // ph, w // pw, ph * pw)


def _unpool_blocks(g5: np.ndarray, ph: int, pw: int) -> np.ndarray:
    b, c, oh, ow, _ = g5.shape
    g = g5.reshape(b, c, oh, ow, ph, pw).transpose(0, 1, 2, 4, 3, 5)
    return g.reshape(b, c, oh * ph, ow * pw)


def _as_batch(net: Network, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.spec.input_dim:
        raise ShapeError(f"expected batch of shape (b, {net.spec.input_dim}), got {x.shape}")
    return x


def forward(net: Network, batch) -> tuple[np.ndarray, ForwardTrace]:
    """Outputs ``(b, K)`` for a ``(b, d)`` batch, plus the trace needed by :func:`backward`."""
    x = _as_batch(net, batch)
    bound = net.spec.input_bound
    if x.size and np.max(np.abs(x)) > bound + 1e-9:
        warnings.warn(f"inputs exceed the declared bound M={bound}", RuntimeWarning, stacklevel=2)
    trace = ForwardTrace(inputs=x)
    shape = net.spec.input_shape or (1, 1, net.spec.input_dim)
    b = x.shape[0]
    h = x
    for layer, w, bias, out_shape in zip(net.spec.layers, net.weights, net.biases, net.spec.shapes()):
        arg = None
        if isinstance(layer, Dense):
            z = h @ w
            if bias is not None:
                z = z + bias
            a = activate(layer.activation, z)
        elif isinstance(layer, Conv):
            cols = _patches(h.reshape(b, *shape), layer.kernel, layer.stride)
            z4 = cols @ w
            if bias is not None:
                z4 = z4 + bias
            z = z4.transpose(0, 3, 1, 2).reshape(b, -1)
            a = activate(layer.activation, z)
        else:
            ph, pw = pool_window(layer, shape)
            blocks = _pool_blocks(h.reshape(b, *shape), ph, pw)
            if layer.mode == "max":
                arg = np.argmax(blocks, axis=-1)
                z = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0].reshape(b, -1)
            else:
                z = blocks.mean(axis=-1).reshape(b, -1)
            a = z
        if a.shape[1] != math.prod(out_shape):
            raise ShapeError(f"layer produced {a.shape[1]} features, expected {math.prod(out_shape)}")
        trace.pre.append(z)
        trace.post.append(a)
        trace.argmax.append(arg)
        h = a
        shape = out_shape
    return h, trace


def backward(net: Network, trace: ForwardTrace, output_grad) -> tuple[list, np.ndarray]:
    """Reverse-mode gradients of ``sum_i <output_grad_i, f(x_i)>``.

    Returns ``(param_grads, input_grad)`` where ``param_grads[l]`` is
    ``(weight_grad, bias_grad)`` for weight layers (``bias_grad`` is None
    without biases) and None for pooling layers.
    """
    layers = net.spec.layers
    g = np.asarray(output_grad, dtype=np.float64)
    b = trace.inputs.shape[0]
    if len(trace) != len(layers) or g.shape != trace.post[-1].shape:
        raise ShapeError("trace/output_grad do not match this network")
    shapes = net.spec.shapes()
    in_shapes = [net.spec.input_shape or (1, 1, net.spec.input_dim)] + shapes[:-1]
    grads: list = [None] * len(layers)
    for l in range(len(layers) - 1, -1, -1):
        layer, w, bias = layers[l], net.weights[l], net.biases[l]
        h_in = trace.post[l - 1] if l > 0 else trace.inputs
        if h_in.shape[1] != math.prod(in_shapes[l]):
            raise ShapeError(f"stale trace at layer {l}")
        if isinstance(layer, Dense):
            gz = g * activation_grad(layer.activation, trace.pre[l], trace.post[l])
            gw = h_in.T @ gz
            gb = gz.sum(axis=0) if bias is not None else None
            g = gz @ w.T
        elif isinstance(layer, Conv):
            c, hh, ww = in_shapes[l]
            f, oh, ow = shapes[l]
            kh, kw = layer.kernel
            s = layer.stride
            gz = g * activation_grad(layer.activation, trace.pre[l], trace.post[l])
            gz2 = gz.reshape(b, f, oh, ow).transpose(0, 2, 3, 1).reshape(-1, f)
            cols = _patches(h_in.reshape(b, c, hh, ww), layer.kernel, s).reshape(-1, c * kh * kw)
            gw = cols.T @ gz2
            gb = gz2.sum(axis=0) if bias is not None else None
            gcols = (gz2 @ w.T).reshape(b, oh, ow, c, kh, kw)
            gx = np.zeros((b, c, hh, ww))
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s] += \
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            g = gx.reshape(b, -1)
        else:
            c, hh, ww = in_shapes[l]
            _, oh, ow = shapes[l]
            ph, pw = pool_window(layer, in_shapes[l])
            g5 = np.zeros((b, c, oh, ow, ph * pw))
            g4 = g.reshape(b, c, oh, ow)
            if layer.mode == "max":
                np.put_along_axis(g5, trace.argmax[l][..., None], g4[..., None], axis=-1)
            else:
                g5[...] = (g4 / (ph * pw))[..., None]
            g = _unpool_blocks(g5, ph, pw).reshape(b, -1)
            grads[l] = None
            continue
        grads[l] = (gw, gb)
    return grads, g


def unit_l1_norms(net: Network) -> list:
    """Per weight layer, the L1 norm of each unit's incoming weights (None for pooling)."""
    return [None if w is None else np.abs(w).sum(axis=0) for w in net.weights]


def effective_weight_bound(net: Network) -> float:
    """Largest L1 norm of any unit's incoming weights; biases are not counted."""
    norms = [n.max() for n in unit_l1_norms(net) if n is not None and n.size]
    return float(max(norms)) if norms else 0.0


def weight_bound_report(net: Network) -> dict:
    norms = unit_l1_norms(net)
    return {"effective_A": effective_weight_bound(net),
            "per_layer_A": [None if n is None else float(n.max()) for n in norms]}
