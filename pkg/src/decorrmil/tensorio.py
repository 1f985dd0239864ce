"""Single-file tensor container: one JSON header line, then raw payload.

The header is a compact JSON object terminated by a newline, listing the
format version, free-form metadata, and the tensor directory (name,
shape, dtype) in payload order. Tensors follow as raw little-endian
bytes with no padding. Float tensors default to float32; callers may
request float64 per tensor where bit-exact round trips matter.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError

FORMAT_VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


def save_tensors(path, meta: dict, tensors: dict, dtypes: dict | None = None) -> None:
    """Write ``tensors`` (name -> ndarray) to ``path`` with ``meta`` in the header.

    ``dtypes`` maps tensor names to "<f4" or "<f8"; unnamed tensors are
    stored as "<f4".
    """
    dtypes = dtypes or {}
    directory = []
    payload = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = dtypes.get(name, "<f4")
        if code not in _DTYPES:
            raise ValueError(f"unsupported tensor dtype {code!r}")
        directory.append({"name": name, "shape": list(arr.shape), "dtype": code})
        payload.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    header = {"format_version": FORMAT_VERSION, "meta": meta, "tensors": directory}
    line = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(line + b"\n")
        for chunk in payload:
            fh.write(chunk)


def load_tensors(path) -> tuple[dict, dict]:
    """Read a container written by :func:`save_tensors`.

    Returns ``(meta, tensors)`` with arrays in their stored dtype.
    """
    path = Path(path)
    if not path.exists():
        raise DataError("missing_file", f"no such file: {path}")
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError("bad_header", f"{path}: not a tensor container ({exc})")
        if header.get("format_version") != FORMAT_VERSION:
            raise DataError("bad_header", f"{path}: unsupported format version")
        tensors = {}
        for entry in header["tensors"]:
            dtype = _DTYPES.get(entry["dtype"])
            if dtype is None:
                raise DataError("bad_header", f"{path}: unknown dtype {entry['dtype']!r}")
            shape = tuple(int(s) for s in entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise DataError("truncated", f"{path}: payload shorter than header declares")
            tensors[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        if fh.read(1):
            raise DataError("bad_header", f"{path}: trailing bytes after declared payload")
    return header["meta"], tensors
