"""Byte-stable array container: a JSON header followed by raw array data.

Used for embedding and model checkpoints. Unlike ``np.savez`` (whose zip
entries embed timestamps), writing the same arrays twice produces
bitwise-identical files, which the CLI determinism contract requires.
"""

import json
from pathlib import Path

import numpy as np

_MAGIC = b"ENCOARR1\n"


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named arrays plus JSON metadata to ``path``."""
    path = Path(path)
    header = {"meta": meta or {}, "arrays": []}
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        header["arrays"].append(
            {"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)}
        )
        blobs.append(arr.tobytes())
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(len(header_bytes).to_bytes(8, "little"))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def load_arrays(path) -> tuple[dict, dict]:
    """Read back ``(arrays, meta)`` written by :func:`save_arrays`."""
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not an array container file")
        size = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(size).decode("utf-8"))
        arrays = {}
        for spec in header["arrays"]:
            dtype = np.dtype(spec["dtype"])
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            data = f.read(count * dtype.itemsize)
            arrays[spec["name"]] = np.frombuffer(data, dtype=dtype).reshape(
                spec["shape"]
            ).copy()
    return arrays, header["meta"]
