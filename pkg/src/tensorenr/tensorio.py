"""Binary file formats for dense tensors and observation masks.

Tensor file layout (version 1):

    4 bytes  magic b"TNSR"
    1 byte   format version (1)
    u32 LE   order d
    d * u32  dimensions
    f64 LE   entries, first index fastest (Fortran order)

Mask files share the header with magic b"MASK", then store the number of
observed entries as u64 LE followed by that many u64 LE linear offsets in
strictly ascending order.
"""

from __future__ import annotations

import struct

import numpy as np

from .core import ObservationMask, check_shape

TENSOR_MAGIC = b"TNSR"
MASK_MAGIC = b"MASK"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Raised when a file does not conform to the expected layout."""


def _pack_header(magic, shape):
    parts = [magic, struct.pack("<B", FORMAT_VERSION), struct.pack("<I", len(shape))]
    parts.extend(struct.pack("<I", n) for n in shape)
    return b"".join(parts)


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def _read_header(fh, magic):
    got = _read_exact(fh, 4, "magic")
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<B", _read_exact(fh, 1, "version"))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    (order,) = struct.unpack("<I", _read_exact(fh, 4, "order"))
    if not 1 <= order <= 16:
        raise FormatError(f"implausible tensor order {order}")
    dims = struct.unpack(f"<{order}I", _read_exact(fh, 4 * order, "dimensions"))
    try:
        return check_shape(dims)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def write_tensor(path, tensor):
    """Write a dense float64 tensor to `path` in TNSR1 layout."""
    t = np.asarray(tensor, dtype=np.float64)
    shape = check_shape(t.shape)
    if not np.all(np.isfinite(t)):
        raise FormatError("refusing to write non-finite tensor entries")
    with open(path, "wb") as fh:
        fh.write(_pack_header(TENSOR_MAGIC, shape))
        fh.write(np.ravel(t, order="F").astype("<f8").tobytes())


def read_tensor(path):
    """Read a TNSR1 file back into a numpy array."""
    with open(path, "rb") as fh:
        shape = _read_header(fh, TENSOR_MAGIC)
        total = int(np.prod(shape, dtype=np.int64))
        payload = _read_exact(fh, 8 * total, "tensor payload")
        if fh.read(1):
            raise FormatError("trailing bytes after tensor payload")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(flat)):
        raise FormatError("tensor payload contains non-finite values")
    return np.reshape(flat, shape, order="F")


def write_mask(path, mask):
    """Write an :class:`ObservationMask` to `path` in MASK layout."""
    with open(path, "wb") as fh:
        fh.write(_pack_header(MASK_MAGIC, mask.shape))
        fh.write(struct.pack("<Q", mask.count))
        fh.write(mask.linear_indices.astype("<u8").tobytes())


def read_mask(path):
    """Read a MASK file back into an :class:`ObservationMask`."""
    with open(path, "rb") as fh:
        shape = _read_header(fh, MASK_MAGIC)
        (count,) = struct.unpack("<Q", _read_exact(fh, 8, "mask count"))
        total = int(np.prod(shape, dtype=np.int64))
        if count > total:
            raise FormatError(f"mask count {count} exceeds tensor size {total}")
        payload = _read_exact(fh, 8 * count, "mask offsets")
        if fh.read(1):
            raise FormatError("trailing bytes after mask offsets")
    idx = np.frombuffer(payload, dtype="<u8").astype(np.int64)
    try:
        return ObservationMask(shape, idx)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
