"""Binary tensor and measurement files.

Tensor file (little-endian)::

    8 bytes   magic  b"E3DTVT01"
    3 x u32   h, w, s
    4 bytes   dtype tag b"<f8\\0"
    h*w*s f64 payload in mode-3 unfolding order (column-major over (i, j), band by band)
    u64       checksum of the payload bytes

Measurement file (little-endian)::

    8 bytes   magic  b"E3DTVM01"
    u64       operator seed
    3 x u32   h, w, s
    u64       n_pad
    f64       sampling ratio
    u64       m
    m f64     measurements
    u64       checksum of every byte after the magic and before the checksum

The checksum is the 8-byte BLAKE2b digest read as an unsigned integer.
"""

import hashlib
import os
import struct
import tempfile

import numpy as np

from .cs import build_operator
from .tensor_core import as_hsi

__all__ = [
    "FormatError",
    "write_tensor",
    "read_tensor",
    "write_measurements",
    "read_measurements",
    "tensor_bytes",
    "measurement_bytes",
]

TENSOR_MAGIC = b"E3DTVT01"
MEAS_MAGIC = b"E3DTVM01"
DTYPE_TAG = b"<f8\x00"
_TENSOR_HEADER = struct.Struct("<8s3I4s")
_MEAS_HEADER = struct.Struct("<8sQ3IQdQ")
_CHECKSUM = struct.Struct("<Q")


class FormatError(ValueError):
    """A file is truncated, has a bad header or fails its checksum."""


def _checksum(data):
    return _CHECKSUM.unpack(hashlib.blake2b(data, digest_size=8).digest())[0]


def _atomic_write(path, data):
    # write to a sibling temp file first so a failure never leaves a partial file
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def tensor_bytes(x):
    x = as_hsi(x)
    h, w, s = x.shape
    payload = x.ravel(order="F").astype("<f8").tobytes()
    return _TENSOR_HEADER.pack(TENSOR_MAGIC, h, w, s, DTYPE_TAG) + payload \
        + _CHECKSUM.pack(_checksum(payload))


def write_tensor(path, x):
    _atomic_write(path, tensor_bytes(x))


def read_tensor(path):
    with open(path, "rb") as fh:
        data = fh.read()
    hsz = _TENSOR_HEADER.size
    if len(data) < hsz + _CHECKSUM.size:
        raise FormatError(f"{path}: file too short for a tensor header")
    magic, h, w, s, tag = _TENSOR_HEADER.unpack_from(data)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if tag != DTYPE_TAG:
        raise FormatError(f"{path}: unsupported dtype tag {tag!r}")
    nbytes = 8 * h * w * s
    if len(data) != hsz + nbytes + _CHECKSUM.size:
        raise FormatError(f"{path}: declared size {h}x{w}x{s} does not match payload length")
    payload = data[hsz:hsz + nbytes]
    (stored,) = _CHECKSUM.unpack_from(data, hsz + nbytes)
    if stored != _checksum(payload):
        raise FormatError(f"{path}: checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return np.reshape(flat, (h, w, s), order="F")


def measurement_bytes(y, op):
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (op.m,):
        raise ValueError(f"expected {op.m} measurements, got {y.shape}")
    body = _MEAS_HEADER.pack(MEAS_MAGIC, op.seed, op.h, op.w, op.s, op.n_pad, op.ratio, op.m)
    body += y.astype("<f8").tobytes()
    return body + _CHECKSUM.pack(_checksum(body[len(MEAS_MAGIC):]))


def write_measurements(path, y, op):
    _atomic_write(path, measurement_bytes(y, op))


def read_measurements(path):
    """Return ``(y, op)`` with the operator rebuilt from the stored descriptor."""
    with open(path, "rb") as fh:
        data = fh.read()
    hsz = _MEAS_HEADER.size
    if len(data) < hsz + _CHECKSUM.size:
        raise FormatError(f"{path}: file too short for a measurement header")
    magic, seed, h, w, s, n_pad, ratio, m = _MEAS_HEADER.unpack_from(data)
    if magic != MEAS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if len(data) != hsz + 8 * m + _CHECKSUM.size:
        raise FormatError(f"{path}: declared m={m} does not match payload length")
    (stored,) = _CHECKSUM.unpack_from(data, hsz + 8 * m)
    if stored != _checksum(data[len(MEAS_MAGIC):hsz + 8 * m]):
        raise FormatError(f"{path}: checksum mismatch")
    try:
        op = build_operator(h, w, s, ratio, seed)
    except ValueError as exc:
        raise FormatError(f"{path}: invalid operator descriptor ({exc})") from exc
    if op.n_pad != n_pad or op.m != m:
        raise FormatError(f"{path}: descriptor does not reproduce the stored operator")
    y = np.frombuffer(data, dtype="<f8", count=m, offset=hsz).astype(np.float64)
    return y, op
