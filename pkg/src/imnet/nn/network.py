"""Sequential networks assembled from layer descriptors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import functional as F


@dataclass(frozen=True)
class LayerSpec:
    """One layer.

    ``kind`` is ``"conv"`` (3x3, same padding), ``"maxpool"`` (2x2),
    ``"dense"`` or ``"residual"`` (output = the leading channels of the network
    input minus the previous layer's output). ``units`` is the filter / unit count.
    """

    kind: str
    units: int = 0
    activation: str = "linear"

    def __post_init__(self):
        if self.kind not in ("conv", "maxpool", "dense", "residual"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in F.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind in ("conv", "dense") and self.units < 1:
            raise ValueError(f"{self.kind} layer needs a positive unit count")

    def describe(self) -> str:
        if self.kind in ("conv", "dense"):
            return f"{self.kind},{self.units},{self.activation}"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "LayerSpec":
        parts = text.split(",")
        if len(parts) == 3:
            return cls(parts[0], int(parts[1]), parts[2])
        return cls(parts[0])


def conv(units, activation="relu"):
    return LayerSpec("conv", units, activation)


def dense(units, activation="relu"):
    return LayerSpec("dense", units, activation)


MAXPOOL = LayerSpec("maxpool")
RESIDUAL = LayerSpec("residual")


def _output_shape(spec: LayerSpec, shape: tuple) -> tuple:
    if spec.kind == "conv":
        if len(shape) != 3:
            raise ValueError("conv layer cannot follow a dense layer")
        return (spec.units,) + shape[1:]
    if spec.kind == "maxpool":
        if len(shape) != 3:
            raise ValueError("maxpool layer cannot follow a dense layer")
        c, h, w = shape
        return (c, h // 2 if h >= 2 else 1, w // 2 if w >= 2 else 1)
    if spec.kind == "dense":
        return (spec.units,)
    return shape


class Network:
    """A fixed-topology feed-forward network with float64 parameters.

    Parameters are kept in ``self.params`` under names ``"<layer>.kernel"`` and
    ``"<layer>.bias"``; ``self.meta`` carries free-form string metadata that is
    persisted with the weights.
    """

    def __init__(self, layers: Sequence[LayerSpec], input_shape: Sequence[int], meta=None):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.meta = dict(meta or {})
        self.shapes = [self.input_shape]
        for spec in self.layers:
            self.shapes.append(_output_shape(spec, self.shapes[-1]))
        if self.layers and self.layers[-1].kind == "residual":
            out = self.shapes[-1]
            if len(out) != 3 or out[1:] != self.input_shape[1:] or out[0] > self.input_shape[0]:
                raise ValueError(f"residual output {out} does not fit input {self.input_shape}")
        self.params: dict[str, np.ndarray] = {}
        for i, spec in enumerate(self.layers):
            prev = self.shapes[i]
            if spec.kind == "conv":
                self.params[f"{i}.kernel"] = np.zeros((spec.units, prev[0], 3, 3))
                self.params[f"{i}.bias"] = np.zeros(spec.units)
            elif spec.kind == "dense":
                self.params[f"{i}.kernel"] = np.zeros((int(np.prod(prev)), spec.units))
                self.params[f"{i}.bias"] = np.zeros(spec.units)
        self._cache = None

    @property
    def output_shape(self):
        return self.shapes[-1]

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def init(self, rng: np.random.Generator) -> "Network":
        """Glorot-uniform kernels, zero biases."""
        for i, spec in enumerate(self.layers):
            if spec.kind not in ("conv", "dense"):
                continue
            k = self.params[f"{i}.kernel"]
            if spec.kind == "conv":
                fan_in, fan_out = k.shape[1] * 9, k.shape[0] * 9
            else:
                fan_in, fan_out = k.shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.params[f"{i}.kernel"] = rng.uniform(-limit, limit, size=k.shape)
            self.params[f"{i}.bias"] = np.zeros_like(self.params[f"{i}.bias"])
        return self

    def copy(self) -> "Network":
        other = Network(self.layers, self.input_shape, self.meta)
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    def forward(self, x: np.ndarray, keep: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"network expects input {self.input_shape}, got {x.shape[1:]}")
        net_in = x
        cache = []
        for i, spec in enumerate(self.layers):
            entry = {}
            if spec.kind == "conv":
                cols = F.im2col(x)
                entry.update(x=x, cols=cols)
                z = F.conv2d(x, self.params[f"{i}.kernel"], self.params[f"{i}.bias"], cols=cols)
            elif spec.kind == "maxpool":
                z, arg = F.maxpool2(x)
                entry.update(shape=x.shape, arg=arg)
            elif spec.kind == "dense":
                flat = x.reshape(len(x), -1)
                entry.update(x=flat, shape=x.shape)
                z = F.dense(flat, self.params[f"{i}.kernel"], self.params[f"{i}.bias"])
            else:
                z = net_in[:, : x.shape[1]] - x
            act, _ = F.ACTIVATIONS[spec.activation]
            out = act(z)
            entry.update(z=z, out=out)
            cache.append(entry)
            x = out
        self._cache = cache if keep else None
        return x

    __call__ = forward

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Backpropagate ``grad`` through the last ``forward(keep=True)`` pass.

        Returns the input gradient and a dict of parameter gradients.
        """
        if self._cache is None:
            raise RuntimeError("backward() needs a preceding forward(..., keep=True)")
        grads = {}
        residual_grad = None
        for i in range(len(self.layers) - 1, -1, -1):
            spec, entry = self.layers[i], self._cache[i]
            _, act_back = F.ACTIVATIONS[spec.activation]
            grad = act_back(grad, entry["z"], entry["out"])
            if spec.kind == "conv":
                grad, dk, db = F.conv2d_backward(
                    grad, entry["x"], self.params[f"{i}.kernel"], cols=entry["cols"]
                )
                grads[f"{i}.kernel"], grads[f"{i}.bias"] = dk, db
            elif spec.kind == "maxpool":
                grad = F.maxpool2_backward(grad, entry["shape"], entry["arg"])
            elif spec.kind == "dense":
                grad, dk, db = F.dense_backward(grad, entry["x"], self.params[f"{i}.kernel"])
                grads[f"{i}.kernel"], grads[f"{i}.bias"] = dk, db
                grad = grad.reshape(entry["shape"])
            else:
                residual_grad = grad
                grad = -grad
        if residual_grad is not None:
            grad = grad.copy()
            grad[:, : residual_grad.shape[1]] += residual_grad
        return grad, grads

    def describe(self) -> list[str]:
        return [spec.describe() for spec in self.layers]


def ad_layers(n_tx: int) -> list[LayerSpec]:
    """Antenna detector: two conv/pool stages, a hidden dense layer, sigmoid head."""
    return [conv(64), MAXPOOL, conv(128), MAXPOOL, dense(128), dense(n_tx, "sigmoid")]


def sd_layers(depth: int = 4, width: int = 64) -> list[LayerSpec]:
    """Residual denoiser: conv stack predicting the noise, subtracted from the input."""
    body = [conv(width) for _ in range(depth + 1)]
    return body + [conv(2, "linear"), RESIDUAL]


def zero_like(net: Network) -> Network:
    other = net.copy()
    for v in other.params.values():
        v[...] = 0.0
    return other


def pack_complex(z: np.ndarray) -> np.ndarray:
    """``(B, H, W)`` complex -> ``(B, 2, H, W)`` real/imag channels."""
    return np.stack([z.real, z.imag], axis=1)


def unpack_complex(t: np.ndarray) -> np.ndarray:
    return t[:, 0] + 1j * t[:, 1]


def batched(fn, x: np.ndarray, batch: Optional[int] = 4096) -> np.ndarray:
    """Evaluate ``fn`` in slices along the first axis to bound memory."""
    if batch is None or len(x) <= batch:
        return fn(x)
    return np.concatenate([fn(x[i : i + batch]) for i in range(0, len(x), batch)])
