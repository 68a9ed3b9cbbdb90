"""Flat binary export of complex tensors for cross-language debugging.

Layout (all little-endian): magic b"CTNS", uint32 version, uint32 ndim,
ndim x uint64 dims, then the entries as interleaved (re, im) float64 in
C order.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = ["write_tensor", "read_tensor"]

MAGIC = b"CTNS"
VERSION = 1


def write_tensor(path, tensor: np.ndarray) -> None:
    arr = np.ascontiguousarray(tensor, dtype=complex)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        inter = np.empty(arr.size * 2, dtype="<f8")
        inter[0::2] = arr.real.ravel()
        inter[1::2] = arr.imag.ravel()
        fh.write(inter.tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError("not a tensor file")
        version, ndim = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"unsupported tensor file version {version}")
        shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
        flat = np.frombuffer(fh.read(), dtype="<f8")
    data = flat[0::2] + 1j * flat[1::2]
    return data.reshape(shape)
