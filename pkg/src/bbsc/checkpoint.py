"""Binary checkpoint formats.

The decoder+optimizer section is self-contained: magic "BBPC", a u32
format version, a little-endian layer table, then the raw little-endian
f64 parameter and moment arrays in declaration order. A full training
checkpoint wraps that section together with the other state blocks behind
a JSON manifest header (magic "BBPM") that records section names and byte
lengths.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from bbsc.nn import Activation, AdamState, DecoderNetwork, DenseLayer

NET_MAGIC = b"BBPC"
MANIFEST_MAGIC = b"BBPM"
FORMAT_VERSION = 1


def _write_f64(fh, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_f64(fh, shape) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ValueError("truncated checkpoint: f64 block ended early")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def write_network(fh, net: DecoderNetwork, adam: AdamState | None = None) -> None:
    """Serialize a decoder (and optionally its ADAM state) in the BBPC format."""
    fh.write(NET_MAGIC)
    fh.write(struct.pack("<I", FORMAT_VERSION))
    fh.write(struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        fh.write(struct.pack("<III", layer.out_dim, layer.in_dim, int(layer.activation)))
    for layer in net.layers:
        _write_f64(fh, layer.weight)
        _write_f64(fh, layer.bias)
    fh.write(struct.pack("<I", 1 if adam is not None else 0))
    if adam is not None:
        fh.write(struct.pack("<Q", adam.t))
        fh.write(struct.pack("<dddd", adam.rho, adam.beta1, adam.beta2, adam.eps))
        for group in (adam.m, adam.v):
            for arr in group:
                _write_f64(fh, arr)


def read_network(fh) -> tuple[DecoderNetwork, AdamState | None]:
    magic = fh.read(4)
    if magic != NET_MAGIC:
        raise ValueError(f"bad network magic {magic!r}")
    (version,) = struct.unpack("<I", fh.read(4))
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported network format version {version}")
    (n_layers,) = struct.unpack("<I", fh.read(4))
    dims = [struct.unpack("<III", fh.read(12)) for _ in range(n_layers)]
    layers = []
    for out_dim, in_dim, act in dims:
        W = _read_f64(fh, (out_dim, in_dim))
        b = _read_f64(fh, (out_dim,))
        layers.append(DenseLayer(W, b, Activation(act)))
    net = DecoderNetwork(layers)
    (has_adam,) = struct.unpack("<I", fh.read(4))
    adam = None
    if has_adam:
        (t,) = struct.unpack("<Q", fh.read(8))
        rho, beta1, beta2, eps = struct.unpack("<dddd", fh.read(32))
        m = []
        v = []
        for group in (m, v):
            for out_dim, in_dim, _ in dims:
                group.append(_read_f64(fh, (out_dim, in_dim)))
                group.append(_read_f64(fh, (out_dim,)))
        adam = AdamState(m=m, v=v, t=t, rho=rho, beta1=beta1, beta2=beta2, eps=eps)
    return net, adam


def network_bytes(net: DecoderNetwork, adam: AdamState | None = None) -> bytes:
    buf = io.BytesIO()
    write_network(buf, net, adam)
    return buf.getvalue()


def network_from_bytes(raw: bytes) -> tuple[DecoderNetwork, AdamState | None]:
    return read_network(io.BytesIO(raw))


def write_manifest_file(path: str, manifest: dict, sections: list[tuple[str, bytes]]) -> None:
    """Write a manifest-headed container; section lengths go into the manifest."""
    manifest = dict(manifest)
    manifest["sections"] = [{"name": name, "length": len(blob)} for name, blob in sections]
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MANIFEST_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for _, blob in sections:
            fh.write(blob)


def read_manifest_file(path: str) -> tuple[dict, dict[str, bytes]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MANIFEST_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (length,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(length).decode("utf-8"))
        sections = {}
        for entry in manifest["sections"]:
            blob = fh.read(entry["length"])
            if len(blob) != entry["length"]:
                raise ValueError(f"truncated checkpoint section {entry['name']}")
            sections[entry["name"]] = blob
    return manifest, sections
