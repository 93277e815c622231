"""Array store: a text manifest plus one raw little-endian buffer.

Manifest lines are ``name<TAB>shape<TAB>dtype<TAB>offset`` with the shape as
comma-separated extents (empty for scalars). Round trips are bit-exact.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

MAGIC = "# wavesep-arrays v1"


def save_arrays(arrays: dict[str, np.ndarray], manifest_path, buffer_path) -> None:
    manifest_path, buffer_path = Path(manifest_path), Path(buffer_path)
    lines = [MAGIC]
    offset = 0
    with open(buffer_path, "wb") as buf:
        for name, arr in arrays.items():
            if any(ch.isspace() for ch in name):
                raise ValueError(f"array name {name!r} contains whitespace")
            arr = np.asarray(arr)  # tobytes() below is C-ordered; keeps 0-d shapes
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            shape = ",".join(str(d) for d in arr.shape)
            lines.append(f"{name}\t{shape}\t{arr.dtype.name}\t{offset}")
            raw = le.tobytes()
            buf.write(raw)
            offset += len(raw)
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_arrays(manifest_path, buffer_path) -> dict[str, np.ndarray]:
    manifest_path, buffer_path = Path(manifest_path), Path(buffer_path)
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MAGIC:
        raise ValueError(f"{manifest_path}: not a wavesep array manifest")
    raw = buffer_path.read_bytes()
    out: dict[str, np.ndarray] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        name, shape_text, dtype_name, offset_text = line.split("\t")
        shape = tuple(int(d) for d in shape_text.split(",")) if shape_text else ()
        dtype = np.dtype(dtype_name).newbyteorder("<")
        count = int(np.prod(shape, dtype=np.int64))
        offset = int(offset_text)
        end = offset + count * dtype.itemsize
        if end > len(raw):
            raise ValueError(f"{buffer_path}: truncated buffer for {name}")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape)
        out[name] = arr.astype(dtype.newbyteorder("="), copy=True)
    return out
