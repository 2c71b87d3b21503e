"""NTW1 weight file format.

Layout: magic bytes ``NTW1`` followed by repeated records of
``{u32 name length, UTF-8 name, u32 rank, u32 dims[rank], f32 payload}``.
All integers and floats are little-endian. Names are hierarchical with dot
separators (for example ``fpn.coarse.conv1.weight``). The reader rejects
duplicate names and truncated payloads.
"""

from __future__ import annotations

import struct
from typing import Mapping

import numpy as np

from .errors import FormatError, ShapeError

MAGIC = b"NTW1"


def write_weights(path, store: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        for name in sorted(store):
            arr = np.ascontiguousarray(store[name], dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def read_weights(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: not an NTW1 weight file (magic {data[:4]!r})")
    store: dict[str, np.ndarray] = {}
    pos = 4
    total = len(data)

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > total:
            raise FormatError(f"{path}: truncated while reading {what}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    while pos < total:
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        if name in store:
            raise FormatError(f"{path}: duplicate weight name {name!r}")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        count = 1
        for d in dims:
            count *= d
        payload = take(4 * count, f"payload of {name!r}")
        store[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    return store


def mlp_layers(store: Mapping[str, np.ndarray], prefix: str) -> list[tuple[np.ndarray, np.ndarray]]:
    """Collect (weight, bias) pairs named ``{prefix}.l{i}.weight`` / ``.bias``."""
    layers = []
    i = 0
    while f"{prefix}.l{i}.weight" in store:
        w = store[f"{prefix}.l{i}.weight"]
        key = f"{prefix}.l{i}.bias"
        if key not in store:
            raise ShapeError(f"missing bias {key!r} alongside its weight")
        layers.append((w, store[key]))
        i += 1
    if not layers:
        raise ShapeError(f"no layers found under prefix {prefix!r}")
    return layers


def init_mlp(rng, prefix: str, widths: tuple[int, ...]) -> dict[str, np.ndarray]:
    """Seeded uniform init for an MLP; biases start at zero."""
    store: dict[str, np.ndarray] = {}
    for i in range(len(widths) - 1):
        d_in, d_out = widths[i], widths[i + 1]
        store[f"{prefix}.l{i}.weight"] = rng.uniform_init(f"{prefix}.l{i}.weight", (d_out, d_in), d_in)
        store[f"{prefix}.l{i}.bias"] = np.zeros(d_out, dtype=np.float32)
    return store
