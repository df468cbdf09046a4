"""Tiny feed-forward networks with hand-written backprop (Dense, Conv2D, ReLU, Tanh, Flatten).

Inputs are batch-first; images are NHWC and conv kernels are stored (h, w, n_in, n_out).
The softmax cross-entropy head always follows the last layer.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import log_softmax, softmax

from errors import ConfigError


class Init(str, Enum):
    KAIMING_UNIFORM = "kaiming_uniform"
    ORTHOGONAL = "orthogonal"


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class Conv2D:
    h: int
    w: int
    n_in: int
    n_out: int
    stride: int = 1


@dataclass(frozen=True)
class Activation:
    kind: str  # "relu" | "tanh"


@dataclass(frozen=True)
class Flatten:
    pass


def _layer_from_dict(d, where):
    kind = str(d.get("type", "")).lower()
    try:
        if kind == "dense":
            return Dense(int(d["in"]), int(d["out"]))
        if kind == "conv2d":
            return Conv2D(int(d["h"]), int(d["w"]), int(d["n_in"]), int(d["n_out"]), int(d.get("stride", 1)))
        if kind in ("relu", "tanh"):
            return Activation(kind)
        if kind == "flatten":
            return Flatten()
    except KeyError as e:
        raise ConfigError(where, f"missing key {e.args[0]!r}") from e
    raise ConfigError(where, f"unknown layer type {kind!r}")


def _layer_to_dict(layer):
    if isinstance(layer, Dense):
        return {"type": "dense", "in": layer.in_features, "out": layer.out_features}
    if isinstance(layer, Conv2D):
        return {"type": "conv2d", "h": layer.h, "w": layer.w, "n_in": layer.n_in,
                "n_out": layer.n_out, "stride": layer.stride}
    if isinstance(layer, Activation):
        return {"type": layer.kind}
    return {"type": "flatten"}


@dataclass
class NetworkSpec:
    input_shape: Tuple[int, ...]
    layers: List = field(default_factory=list)
    seed: int = 0
    init: Init = Init.KAIMING_UNIFORM
    init_scale: float = 1.0  # multiplies every initial weight

    @classmethod
    def from_dict(cls, d):
        layers = [entry for entry in d.get("layers", []) if str(entry.get("type", "")).lower() != "softmax_ce"]
        try:
            init = Init(d.get("init", Init.KAIMING_UNIFORM.value))
        except ValueError as e:
            raise ConfigError("network.init", f"unknown init {d.get('init')!r}") from e
        spec = cls(
            input_shape=tuple(int(v) for v in d.get("input_shape", ())),
            layers=[_layer_from_dict(entry, f"network.layers[{i}]") for i, entry in enumerate(layers)],
            seed=int(d.get("seed", 0)),
            init=init,
            init_scale=float(d.get("init_scale", 1.0)),
        )
        spec.validate()
        return spec

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "layers": [_layer_to_dict(layer) for layer in self.layers] + [{"type": "softmax_ce"}],
            "seed": self.seed,
            "init": self.init.value,
            "init_scale": self.init_scale,
        }

    def output_shapes(self):
        shapes, shape = [], tuple(self.input_shape)
        for i, layer in enumerate(self.layers):
            where = f"network.layers[{i}]"
            if isinstance(layer, Dense):
                if shape != (layer.in_features,):
                    raise ConfigError(where, f"dense expects ({layer.in_features},) input, got {shape}")
                shape = (layer.out_features,)
            elif isinstance(layer, Conv2D):
                if len(shape) != 3 or shape[2] != layer.n_in:
                    raise ConfigError(where, f"conv2d expects (H, W, {layer.n_in}) input, got {shape}")
                if shape[0] < layer.h or shape[1] < layer.w or layer.stride < 1:
                    raise ConfigError(where, f"kernel {layer.h}x{layer.w} does not fit input {shape}")
                shape = ((shape[0] - layer.h) // layer.stride + 1,
                         (shape[1] - layer.w) // layer.stride + 1, layer.n_out)
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, Activation):
                if layer.kind not in ("relu", "tanh"):
                    raise ConfigError(where, f"unknown activation {layer.kind!r}")
            shapes.append(shape)
        return shapes

    def validate(self):
        if not self.input_shape or min(self.input_shape) < 1:
            raise ConfigError("network.input_shape", "must be a non-empty list of positive integers")
        if not self.init_scale > 0.0:
            raise ConfigError("network.init_scale", f"must be > 0, got {self.init_scale}")
        if not any(isinstance(layer, (Dense, Conv2D)) for layer in self.layers):
            raise ConfigError("network.layers", "at least one dense or conv2d layer is required")
        shapes = self.output_shapes()
        if len(shapes[-1]) != 1:
            raise ConfigError("network.layers", f"the head needs a flat output, got {shapes[-1]}")

    @property
    def num_outputs(self):
        return self.output_shapes()[-1][0]


# --- Initialization ---
def _init_weight(rng, shape, fan_in, fan_out, init):
    if init is Init.ORTHOGONAL:
        a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
        q, r = np.linalg.qr(a)
        q = q * np.sign(np.diag(r))
        if fan_in < fan_out:
            q = q.T
        return q.reshape(shape)
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _im2col(x, layer):
    windows = sliding_window_view(x, (layer.h, layer.w), axis=(1, 2))
    windows = windows[:, ::layer.stride, ::layer.stride]
    n, oh, ow = windows.shape[:3]
    return windows.transpose(0, 1, 2, 4, 5, 3).reshape(n, oh, ow, layer.h * layer.w * layer.n_in)


class Network:
    def __init__(self, spec):
        spec.validate()
        self.spec = spec
        self.params = {}
        self.weight_names = []
        self._names = []
        rng = np.random.default_rng(spec.seed)
        counts = {}
        for layer in spec.layers:
            if isinstance(layer, (Dense, Conv2D)):
                kind = "dense" if isinstance(layer, Dense) else "conv"
                name = f"{kind}{counts.get(kind, 0)}"
                counts[kind] = counts.get(kind, 0) + 1
                if isinstance(layer, Dense):
                    shape, fan_in, fan_out = (layer.in_features, layer.out_features), layer.in_features, layer.out_features
                    n_out = layer.out_features
                else:
                    shape = (layer.h, layer.w, layer.n_in, layer.n_out)
                    fan_in, fan_out, n_out = layer.h * layer.w * layer.n_in, layer.n_out, layer.n_out
                self.params[f"{name}.weight"] = spec.init_scale * _init_weight(rng, shape, fan_in, fan_out, spec.init)
                self.params[f"{name}.bias"] = np.zeros(n_out, dtype=np.float64)
                self.weight_names.append(f"{name}.weight")
                self._names.append(name)
            else:
                self._names.append(None)

    @property
    def num_parameters(self):
        return int(sum(p.size for p in self.params.values()))

    def weights(self):
        return {name: self.params[name].copy() for name in self.weight_names}

    def forward(self, x):
        cache = []
        out = np.asarray(x, dtype=np.float64)
        for layer, name in zip(self.spec.layers, self._names):
            if isinstance(layer, Dense):
                cache.append(out)
                out = out @ self.params[f"{name}.weight"] + self.params[f"{name}.bias"]
            elif isinstance(layer, Conv2D):
                cols = _im2col(out, layer)
                cache.append((cols, out.shape))
                kernel = self.params[f"{name}.weight"].reshape(-1, layer.n_out)
                out = cols @ kernel + self.params[f"{name}.bias"]
            elif isinstance(layer, Flatten):
                cache.append(out.shape)
                out = out.reshape(out.shape[0], -1)
            elif layer.kind == "relu":
                cache.append(out)
                out = np.maximum(out, 0.0)
            else:
                out = np.tanh(out)
                cache.append(out)
        return out, cache

    def backward(self, dout, cache):
        grads = {}
        for layer, name, saved in reversed(list(zip(self.spec.layers, self._names, cache))):
            if isinstance(layer, Dense):
                grads[f"{name}.weight"] = saved.T @ dout
                grads[f"{name}.bias"] = dout.sum(axis=0)
                dout = dout @ self.params[f"{name}.weight"].T
            elif isinstance(layer, Conv2D):
                cols, in_shape = saved
                kernel = self.params[f"{name}.weight"].reshape(-1, layer.n_out)
                grads[f"{name}.weight"] = (cols.reshape(-1, cols.shape[-1]).T @ dout.reshape(-1, layer.n_out)
                                           ).reshape(self.params[f"{name}.weight"].shape)
                grads[f"{name}.bias"] = dout.sum(axis=(0, 1, 2))
                dcols = (dout @ kernel.T).reshape(*dout.shape[:3], layer.h, layer.w, layer.n_in)
                dx = np.zeros(in_shape, dtype=np.float64)
                oh, ow = dout.shape[1], dout.shape[2]
                s = layer.stride
                for i in range(layer.h):
                    for j in range(layer.w):
                        dx[:, i:i + s * oh:s, j:j + s * ow:s, :] += dcols[:, :, :, i, j, :]
                dout = dx
            elif isinstance(layer, Flatten):
                dout = dout.reshape(saved)
            elif layer.kind == "relu":
                dout = dout * (saved > 0.0)
            else:
                dout = dout * (1.0 - saved ** 2)
        return {name: grads[name] for name in self.params}

    def loss_and_grads(self, x, y):
        """Mean softmax cross-entropy over the batch, its parameter gradients and the logits."""
        logits, cache = self.forward(x)
        y = np.asarray(y, dtype=np.int64)
        n = logits.shape[0]
        logp = log_softmax(logits, axis=1)
        loss = float(-np.mean(logp[np.arange(n), y]))
        dlogits = softmax(logits, axis=1)
        dlogits[np.arange(n), y] -= 1.0
        grads = self.backward(dlogits / n, cache)
        return loss, grads, logits

    def loss(self, x, y):
        logits, _ = self.forward(x)
        y = np.asarray(y, dtype=np.int64)
        return float(-np.mean(log_softmax(logits, axis=1)[np.arange(logits.shape[0]), y]))

    def predict(self, x):
        logits, _ = self.forward(x)
        return np.argmax(logits, axis=1)

    def accuracy(self, x, y):
        return float(np.mean(self.predict(x) == np.asarray(y)))
