"""Binary checkpoint container.

Layout::

    b"ONHW1"
    uint32 LE  length of the JSON architecture block
    JSON (utf-8, sorted keys)
    uint32 LE  tensor count
    per tensor: uint32 LE ndim, ndim x uint32 LE dims, float64 LE data
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ModelError
from .layers import LayerParams
from .tensor import Tensor

MAGIC = b"ONHW1"


def layer_arrays(layers: list[LayerParams]) -> list[np.ndarray]:
    """Parameter and running-stat arrays in declaration order."""
    out = []
    for lp in layers:
        out += [lp.weight.data, lp.bias.data]
        if lp.bn is not None:
            out += [lp.bn.gamma.data, lp.bn.beta.data, lp.bn.running_mean, lp.bn.running_var]
    return out


def assign_layer_arrays(layers: list[LayerParams], arrays: list[np.ndarray]) -> None:
    it = iter(arrays)

    def take(shape):
        try:
            a = np.array(next(it), dtype=np.float64)
        except StopIteration:
            raise ModelError("checkpoint holds too few tensors for this architecture") from None
        if a.shape != tuple(shape):
            raise ModelError(f"checkpoint tensor shape {a.shape} does not match {tuple(shape)}")
        a.flags.writeable = False
        return a

    for lp in layers:
        lp.weight.data = take(lp.weight.shape)
        lp.bias.data = take(lp.bias.shape)
        if lp.bn is not None:
            lp.bn.gamma.data = take(lp.bn.gamma.shape)
            lp.bn.beta.data = take(lp.bn.beta.shape)
            lp.bn.running_mean = np.array(take(lp.bn.running_mean.shape))
            lp.bn.running_var = np.array(take(lp.bn.running_var.shape))
    if next(it, None) is not None:
        raise ModelError("checkpoint holds more tensors than this architecture")


def encode(config: dict, arrays: list[np.ndarray]) -> bytes:
    header = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<I", len(header)), header, struct.pack("<I", len(arrays))]
    for a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8")
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> tuple[dict, list[np.ndarray]]:
    if not blob.startswith(MAGIC):
        raise ModelError("not an ONHW1 checkpoint")
    try:
        pos = len(MAGIC)
        (hlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        config = json.loads(blob[pos:pos + hlen].decode())
        pos += hlen
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        arrays = []
        for _ in range(count):
            (ndim,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            a = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * n
            arrays.append(a)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise ModelError(f"corrupt checkpoint: {exc}") from exc
    if pos != len(blob):
        raise ModelError("trailing bytes in checkpoint")
    return config, arrays


def save(path: str | Path, config: dict, layers: list[LayerParams]) -> str:
    """Write the checkpoint and return its sha256 hex digest."""
    blob = encode(config, layer_arrays(layers))
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load(path: str | Path) -> tuple[dict, list[np.ndarray]]:
    return decode(Path(path).read_bytes())


def parameters_of(layers: list[LayerParams]) -> list[Tensor]:
    return [p for lp in layers for p in lp.parameters()]
