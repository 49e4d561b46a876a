"""Binary weight files.

Layout (all integers little-endian)::

    b"SARGAN01"
    u64  record count
    per record:
        u32  name length, UTF-8 name
        u32  rank, rank × u64 extents
        float64 values, C order
    u64  trailer length, UTF-8 JSON trailer (length 0 for plain weight files)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .nets import Network

MAGIC = b"SARGAN01"


class FormatError(ValueError):
    """File is not a weight file or does not fit the expected networks."""


def dump_arrays(arrays: Mapping[str, np.ndarray], trailer: dict | None = None) -> bytes:
    parts = [MAGIC, struct.pack("<Q", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    meta = b"" if trailer is None else json.dumps(trailer, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<Q", len(meta)))
    parts.append(meta)
    return b"".join(parts)


def parse_arrays(blob: bytes) -> tuple[dict[str, np.ndarray], dict | None]:
    if blob[:8] != MAGIC:
        raise FormatError("unknown magic; not a SARGAN01 weight file")
    pos = 8

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise FormatError("truncated weight file")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    (count,) = take("<Q")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = take("<I")
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = take("<I")
        shape = take(f"<{rank}Q") if rank else ()
        n = int(np.prod(shape)) if rank else 1
        if pos + 8 * n > len(blob):
            raise FormatError("truncated weight file")
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    (tlen,) = take("<Q")
    trailer = json.loads(blob[pos:pos + tlen].decode("utf-8")) if tlen else None
    return arrays, trailer


def save_arrays(path, arrays: Mapping[str, np.ndarray], trailer: dict | None = None) -> None:
    Path(path).write_bytes(dump_arrays(arrays, trailer))


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict | None]:
    return parse_arrays(Path(path).read_bytes())


def network_arrays(net: Network, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: v for k, v in net.state.arrays().items()}


def load_network(net: Network, arrays: Mapping[str, np.ndarray], prefix: str = "") -> None:
    """Copy stored values into ``net`` after checking names and shapes."""
    expected = dict(net.spec.param_shapes())
    expected.update(net.spec.buffer_shapes())
    for name, shape in expected.items():
        key = prefix + name
        if key not in arrays:
            raise FormatError(f"missing tensor {key!r} for {net.spec.name}")
        if tuple(arrays[key].shape) != tuple(shape):
            raise FormatError(f"{key}: stored shape {arrays[key].shape} != network shape {shape}")
    for name, p in net.state.params.items():
        p.data = np.ascontiguousarray(arrays[prefix + name], dtype=p.data.dtype)
        p.grad = None
    for name, stats in net.state.stats.items():
        stats.mean = arrays[f"{prefix}{name}.running_mean"].copy()
        stats.var = arrays[f"{prefix}{name}.running_var"].copy()


def save_network(path, net: Network) -> None:
    save_arrays(path, network_arrays(net), {"kind": "weights", "network": net.spec.name})


def load_network_file(path, net: Network) -> None:
    arrays, _ = load_arrays(path)
    load_network(net, arrays)
