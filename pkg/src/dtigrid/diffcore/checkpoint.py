"""Binary model checkpoints.

Container: magic "TGRD", format version u32, then per parameter:
u32 name length, UTF-8 name, u32 rank, u32 dims, float64 payload.
All integers and floats little-endian.  Writes are atomic
(temp file + rename).
"""

import os
import struct
import tempfile

import numpy as np

from ..errors import FormatError

MAGIC = b"TGRD"
VERSION = 1


def save_checkpoint(path, named_arrays):
    """named_arrays: iterable of (name, float array); order is preserved."""
    path = os.fspath(path)
    dirname = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", VERSION))
            for name, arr in named_arrays:
                arr = np.asarray(arr, dtype=np.float64)
                nb = name.encode("utf-8")
                f.write(struct.pack("<I", len(nb)))
                f.write(nb)
                f.write(struct.pack("<I", arr.ndim))
                for d in arr.shape:
                    f.write(struct.pack("<I", d))
                f.write(arr.astype("<f8").tobytes(order="C"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Returns an ordered dict name -> float64 array."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise FormatError("bad checkpoint magic")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    off = 8
    out = {}
    try:
        while off < len(data):
            (nlen,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", data, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", data, off)
            off += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            if off + 8 * count > len(data):
                raise FormatError("truncated checkpoint payload")
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=off)
            off += 8 * count
            out[name] = arr.reshape(dims).astype(np.float64)
    except struct.error as exc:
        raise FormatError(f"truncated checkpoint: {exc}") from exc
    return out
