"""Binary model archive.

Layout (little-endian)::

    b"DSL1"  u32 version
    u32 input_dim, hidden1, hidden2, dense, n_classes
    n_classes x (u32 byte length, UTF-8 name)
    3 x f64 dropout rates, i64 seed
    u32 n_tensors
    n_tensors x (u16 name length, name, u8 rank, rank x u32 dim, u64 offset)
    float32 row-major payload at the recorded absolute offsets
"""

from __future__ import annotations

import struct

import numpy as np

from .model import ModelParams, tensor_shapes

MAGIC = b"DSL1"
VERSION = 1


class ArchiveError(Exception):
    pass


def save_model(params: ModelParams, path):
    head = bytearray(MAGIC)
    head += struct.pack("<6I", VERSION, params.input_dim, params.hidden1, params.hidden2,
                        params.dense, params.n_classes)
    for c in params.classes:
        b = str(c).encode("utf-8")
        head += struct.pack("<I", len(b)) + b
    head += struct.pack("<3dq", *map(float, params.dropout_rates), int(params.seed))
    head += struct.pack("<I", len(params.tensors))
    entries = []
    index_size = 0
    for name, arr in params.tensors.items():
        nb = name.encode("ascii")
        entries.append((nb, arr))
        index_size += 2 + len(nb) + 1 + 4 * arr.ndim + 8
    offset = len(head) + index_size
    payload = bytearray()
    for nb, arr in entries:
        head += struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
        head += struct.pack(f"<{arr.ndim}I", *arr.shape)
        head += struct.pack("<Q", offset + len(payload))
        payload += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(head))
        fh.write(bytes(payload))


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ArchiveError("archive is truncated")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def raw(self, n):
        if self.pos + n > len(self.data):
            raise ArchiveError("archive is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out


def load_model(path) -> ModelParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ArchiveError("not a model archive (bad magic)")
    r = _Reader(data)
    r.pos = 4
    version, d_in, h1, h2, dense, n_cls = r.take("<6I")
    if version != VERSION:
        raise ArchiveError(f"unsupported archive version {version}")
    try:
        classes = [r.raw(r.take("<I")[0]).decode("utf-8") for _ in range(n_cls)]
    except UnicodeDecodeError as exc:
        raise ArchiveError("corrupt class table") from exc
    *rates, seed = r.take("<3dq")
    (n_tensors,) = r.take("<I")
    expected = tensor_shapes(d_in, h1, h2, dense, n_cls)
    tensors = {}
    for _ in range(n_tensors):
        name = r.raw(r.take("<H")[0]).decode("ascii", errors="replace")
        (rank,) = r.take("<B")
        shape = r.take(f"<{rank}I") if rank else ()
        (offset,) = r.take("<Q")
        if name not in expected:
            raise ArchiveError(f"unexpected tensor {name!r}")
        if tuple(shape) != expected[name]:
            raise ArchiveError(f"{name}: shape {tuple(shape)} does not match the header "
                               f"dimensions {expected[name]}")
        count = int(np.prod(shape, dtype=np.int64))
        if offset + 4 * count > len(data):
            raise ArchiveError("archive is truncated")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        tensors[name] = arr.astype(np.float64).reshape(shape)
    if set(tensors) != set(expected):
        raise ArchiveError("archive is missing tensors")
    tensors = {k: tensors[k] for k in expected}
    return ModelParams(tensors, classes, d_in, h1, h2, dense, tuple(rates), int(seed))
