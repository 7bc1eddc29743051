"""Flat tensor container: magic 'SPKF', a directory, then raw little-endian data.

Layout:
    bytes 0:4    magic b"SPKF"
    u32          format version (1)
    u32          tensor count
    per tensor   u16 name length, utf-8 name, u8 dtype code, u8 ndim,
                 u32 per dim, u64 absolute data offset
    data region  raw arrays, little endian, packed in directory order
"""

import struct

import numpy as np

MAGIC = b"SPKF"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("<i4"): 2,
    np.dtype("<i8"): 3,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class BlobFormatError(ValueError):
    pass


def _entry_size(name: str, ndim: int) -> int:
    return 2 + len(name.encode("utf-8")) + 1 + 1 + 4 * ndim + 8


def write_blob(path, tensors: dict) -> dict:
    """Write named arrays to path; returns {name: absolute data offset}."""
    arrays = {}
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr)
        if a.dtype.newbyteorder("<") not in _DTYPE_CODES:
            raise BlobFormatError(f"unsupported dtype {a.dtype} for tensor '{name}'")
        arrays[name] = a.astype(a.dtype.newbyteorder("<"), copy=False)

    header_size = 4 + 4 + 4 + sum(_entry_size(n, a.ndim) for n, a in arrays.items())
    offsets = {}
    off = header_size
    for name, a in arrays.items():
        offsets[name] = off
        off += a.nbytes

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(arrays)))
        for name, a in arrays.items():
            enc = name.encode("utf-8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<BB", _DTYPE_CODES[a.dtype.newbyteorder("<")], a.ndim))
            fh.write(struct.pack("<" + "I" * a.ndim, *a.shape))
            fh.write(struct.pack("<Q", offsets[name]))
        for a in arrays.values():
            fh.write(a.tobytes())
    return offsets


def read_directory(path) -> dict:
    """Directory only: {name: (dtype, shape, offset)}."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise BlobFormatError(f"{path}: bad magic, not a SPKF container")
        version, count = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise BlobFormatError(f"{path}: unsupported container version {version}")
        directory = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            code, ndim = struct.unpack("<BB", fh.read(2))
            shape = struct.unpack("<" + "I" * ndim, fh.read(4 * ndim))
            (offset,) = struct.unpack("<Q", fh.read(8))
            if code not in _CODE_DTYPES:
                raise BlobFormatError(f"{path}: unknown dtype code {code} for '{name}'")
            directory[name] = (_CODE_DTYPES[code], shape, offset)
    return directory


def read_blob(path) -> dict:
    """Read every tensor: {name: ndarray}."""
    directory = read_directory(path)
    out = {}
    with open(path, "rb") as fh:
        data = fh.read()
    for name, (dtype, shape, offset) in directory.items():
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(data, dtype=dtype, count=n, offset=offset)
        out[name] = arr.reshape(shape).copy()
    return out
