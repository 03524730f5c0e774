"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic        4 bytes   b"RQCK"
    version      uint32
    header_len   uint64
    header       header_len bytes of UTF-8 JSON:
                 {"spec": NetworkSpec, "tensors": [{"name", "shape", "dtype"}], "meta": {...}}
    payload      tensors concatenated in header order, little-endian
                 (float32 for parameters, int64 for batch-norm counters)
    crc32        uint32 over every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError, CheckpointVersionError
from .model import Network, NetworkSpec

MAGIC = b"RQCK"
FORMAT_VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


def save_checkpoint(net: Network, path, meta: dict | None = None) -> None:
    tensors = []
    blobs = []
    for name, value in net.state_dict().items():
        arr = value.detach().cpu().numpy()
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise CheckpointError(f"cannot store tensor {name} of dtype {dtype}")
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        blobs.append(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())
    header = json.dumps(
        {"spec": net.spec.to_dict(), "tensors": tensors, "meta": meta or {}},
        sort_keys=True,
    ).encode("utf-8")
    body = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header)) + header + b"".join(blobs)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read_checkpoint(path) -> tuple[NetworkSpec, dict[str, np.ndarray], dict]:
    """Parse a checkpoint file into ``(spec, arrays, meta)`` without building a network."""
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack_from("<IQ", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupt)")
    try:
        header = json.loads(body[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    offset = 16 + header_len
    arrays = {}
    for t in header["tensors"]:
        dt = np.dtype(_DTYPES[t["dtype"]])
        count = int(np.prod(t["shape"], dtype=np.int64))
        end = offset + count * dt.itemsize
        if end > len(body):
            raise CheckpointError(f"{path}: payload shorter than header declares")
        arrays[t["name"]] = np.frombuffer(body[offset:end], dtype=dt).reshape(t["shape"]).astype(t["dtype"])
        offset = end
    if offset != len(body):
        raise CheckpointError(f"{path}: {len(body) - offset} trailing bytes")
    return NetworkSpec.from_dict(header["spec"]), arrays, header.get("meta", {})


def load_checkpoint(path) -> Network:
    """Rebuild the network stored at ``path``; its spec is ``net.spec``."""
    spec, arrays, meta = read_checkpoint(path)
    net = Network(spec)
    state = {k: torch.from_numpy(v.copy()) for k, v in arrays.items()}
    try:
        net.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: parameters do not match spec ({exc})") from exc
    net.meta = meta
    net.eval()
    return net
