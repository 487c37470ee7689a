"""Self-describing parameter container.

Layout::

    8 bytes   magic  b"MOBCKPT1"
    8 bytes   little-endian uint64 header length N
    N bytes   UTF-8 JSON header; ``tensors`` lists name/rows/cols/offset
    ...       concatenated little-endian float64 payloads
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"MOBCKPT1"


class ContainerError(ValueError):
    pass


def write_container(path, header: dict, arrays: "dict[str, np.ndarray]") -> None:
    entries = []
    offset = 0
    payload = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        if arr.ndim != 2:
            raise ContainerError(f"{name}: only 2-d arrays are stored")
        rows, cols = arr.shape
        entries.append({"name": name, "rows": rows, "cols": cols, "offset": offset})
        raw = np.ascontiguousarray(arr).tobytes()
        payload.append(raw)
        offset += len(raw)
    head = dict(header)
    head["tensors"] = entries
    blob = json.dumps(head, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for raw in payload:
            fh.write(raw)


def read_container(path) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ContainerError(f"{path}: not a checkpoint container")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + n].decode("utf-8"))
    base = 16 + n
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for e in header.get("tensors", []):
        start = base + e["offset"]
        count = e["rows"] * e["cols"]
        end = start + 8 * count
        if end > len(data):
            raise ContainerError(f"{path}: truncated payload for {e['name']}")
        arrays[e["name"]] = np.frombuffer(data[start:end], dtype="<f8").reshape(
            e["rows"], e["cols"]).astype(np.float64)
    return header, arrays
