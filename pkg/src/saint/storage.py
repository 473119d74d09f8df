"""Raw little-endian array files described by a JSON offset table."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_arrays(path, arrays: dict[str, np.ndarray]) -> dict:
    """Concatenate ``arrays`` into one file; returns name -> {offset, shape, dtype}."""
    table, offset = {}, 0
    with open(path, "wb") as fh:
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
            raw = arr.astype(dtype, copy=False).tobytes()
            fh.write(raw)
            table[name] = {"offset": offset, "shape": list(arr.shape), "dtype": dtype.str}
            offset += len(raw)
    table["__total_bytes__"] = offset
    return table


class ArrayFileError(IOError):
    pass


def read_arrays(path, table: dict) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    expected = table.get("__total_bytes__")
    if expected is not None and expected != len(blob):
        raise ArrayFileError(f"{path}: expected {expected} bytes, found {len(blob)}")
    out = {}
    for name, entry in table.items():
        if name == "__total_bytes__":
            continue
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        end = entry["offset"] + count * dtype.itemsize
        if end > len(blob):
            raise ArrayFileError(f"{path}: array {name!r} runs past end of file")
        out[name] = np.frombuffer(blob, dtype=dtype, count=count, offset=entry["offset"]).reshape(
            entry["shape"]).copy()
    return out
