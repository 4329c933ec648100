"""Weight checkpoint container.

Self-describing binary file: magic header ``MSCC1``, a JSON metadata blob,
then named entries of shape + raw little-endian float64 values. Network
parameters, batch-norm running statistics, and optimizer state all travel
as entries; frontends stash architecture info in the metadata.
"""

import json
import struct

import numpy as np

MAGIC = b"MSCC1\x00"


def save_checkpoint(path, arrays, meta=None):
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.astype("<f8", copy=False).tobytes())


def load_checkpoint(path):
    """Returns (arrays dict, metadata dict); rejects foreign or truncated files."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    off = len(MAGIC)

    def take(n):
        nonlocal off
        if off + n > len(blob):
            raise ValueError(f"{path}: truncated checkpoint")
        out = blob[off:off + n]
        off += n
        return out

    meta_len = struct.unpack("<I", take(4))[0]
    meta = json.loads(take(meta_len).decode("utf-8"))
    count = struct.unpack("<I", take(4))[0]
    arrays = {}
    for _ in range(count):
        name_len = struct.unpack("<H", take(2))[0]
        name = take(name_len).decode("utf-8")
        ndim = struct.unpack("<B", take(1))[0]
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(ndim))
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(take(8 * n), dtype="<f8").reshape(shape).copy()
    if off != len(blob):
        raise ValueError(f"{path}: trailing bytes after last entry")
    return arrays, meta
