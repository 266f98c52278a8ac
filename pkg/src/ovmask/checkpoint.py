"""Flat binary weight checkpoints.

Layout (all little-endian):

    bytes 0..3   magic b"OVWT"
    byte  4      version (currently 1)
    bytes 5..8   u32 record count
    per record:
        u16  name length, then that many UTF-8 bytes
        u8   ndim, then ndim x u32 dimension sizes
        f32  payload, row-major, prod(dims) values

Round-trips are byte-exact: loading and re-saving a checkpoint reproduces
the file, and reloaded parameters reproduce forward passes bitwise.
"""

import struct

import numpy as np

from .autodiff import Tensor
from .errors import FormatError

MAGIC = b"OVWT"
VERSION = 1


def save_checkpoint(params, path):
    """Write an ordered mapping of name -> Tensor/ndarray as float32 records."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<I", len(params)))
        for name, value in params.items():
            arr = value.data if isinstance(value, Tensor) else np.asarray(value)
            arr = np.asarray(arr, dtype="<f4")  # ascontiguousarray would promote 0-d
            if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
                arr = np.ascontiguousarray(arr)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.offset = 0

    def take(self, n, what):
        if self.offset + n > len(self.blob):
            raise FormatError(f"truncated checkpoint while reading {what}", self.offset)
        piece = self.blob[self.offset : self.offset + n]
        self.offset += n
        return piece

    def unpack(self, fmt, what):
        (value,) = struct.unpack(fmt, self.take(struct.calcsize(fmt), what))
        return value


def load_checkpoint(path):
    """Read a checkpoint into an ordered dict of name -> float32 ndarray."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    if r.unpack("<B", "version") != VERSION:
        raise FormatError("unsupported checkpoint version", 4)
    count = r.unpack("<I", "record count")
    out = {}
    for _ in range(count):
        name_len = r.unpack("<H", "name length")
        name = r.take(name_len, "name").decode("utf-8")
        ndim = r.unpack("<B", "ndim")
        shape = tuple(r.unpack("<I", "dimension") for _ in range(ndim))
        n = int(np.prod(shape)) if shape else 1
        payload = r.take(4 * n, f"payload of {name}")
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    if r.offset != len(blob):
        raise FormatError("trailing bytes after last record", r.offset)
    return out


def weight_hash(params):
    """Stable digest of a parameter mapping, for frozen-backbone assertions."""
    import hashlib

    h = hashlib.sha256()
    for name in sorted(params):
        value = params[name]
        arr = np.asarray(value.data if isinstance(value, Tensor) else value, dtype="<f4")
        h.update(name.encode("utf-8"))
        h.update(arr.tobytes())
    return h.hexdigest()
