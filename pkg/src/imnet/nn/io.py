"""Binary weight files.

Layout: ``b"IMNW"``, uint16 version, uint32 header length, UTF-8 header, then
little-endian float32 parameters in header order. Header lines starting with
``@`` describe the network (``@input=``, ``@layer=``, ``@meta.<key>=``); every
other line is a ``name:shape`` tensor entry.
"""

import struct
from pathlib import Path

import numpy as np

from .network import LayerSpec, Network

MAGIC = b"IMNW"
VERSION = 1


class WeightFileError(ValueError):
    pass


def _shape_str(shape):
    return "x".join(str(s) for s in shape) if shape else "scalar"


def _parse_shape(text):
    return () if text == "scalar" else tuple(int(s) for s in text.split("x"))


def save_weights(net: Network, path) -> None:
    lines = [f"@input={_shape_str(net.input_shape)}"]
    lines += [f"@layer={d}" for d in net.describe()]
    lines += [f"@meta.{k}={v}" for k, v in sorted(net.meta.items())]
    lines += [f"{name}:{_shape_str(p.shape)}" for name, p in net.params.items()]
    header = "\n".join(lines).encode("utf-8")
    body = b"".join(p.astype("<f4").tobytes() for p in net.params.values())
    Path(path).write_bytes(MAGIC + struct.pack("<HI", VERSION, len(header)) + header + body)


def load_weights(path) -> Network:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise WeightFileError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 10:
        raise WeightFileError(f"{path}: truncated header")
    version, hlen = struct.unpack("<HI", raw[4:10])
    if version != VERSION:
        raise WeightFileError(f"{path}: unsupported version {version}")
    if len(raw) < 10 + hlen:
        raise WeightFileError(f"{path}: truncated header")
    header = raw[10 : 10 + hlen].decode("utf-8").splitlines()

    input_shape, layers, meta, tensors = None, [], {}, []
    for line in header:
        if line.startswith("@input="):
            input_shape = _parse_shape(line[len("@input=") :])
        elif line.startswith("@layer="):
            layers.append(LayerSpec.parse(line[len("@layer=") :]))
        elif line.startswith("@meta."):
            key, _, value = line[len("@meta.") :].partition("=")
            meta[key] = value
        else:
            name, _, shape = line.partition(":")
            tensors.append((name, _parse_shape(shape)))
    if input_shape is None:
        raise WeightFileError(f"{path}: header has no input shape")

    net = Network(layers, input_shape, meta)
    pos = 10 + hlen
    expected = pos + 4 * sum(int(np.prod(s)) for _, s in tensors)
    if len(raw) != expected:
        raise WeightFileError(f"{path}: expected {expected} bytes, found {len(raw)}")
    for name, shape in tensors:
        if name not in net.params or net.params[name].shape != shape:
            raise WeightFileError(f"{path}: tensor {name}{shape} does not fit the layer list")
        n = int(np.prod(shape))
        net.params[name] = np.frombuffer(raw, "<f4", n, pos).astype(float).reshape(shape)
        pos += 4 * n
    return net
