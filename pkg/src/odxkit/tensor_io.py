"""Binary tensor dumps shared by rasters, LiDAR grids, features and weights.

Single tensor layout (little-endian)::

    8 bytes   magic  b"BEVG0001"
    uint32    ndim
    uint32    dims[ndim]
    float32   data, row-major

A bundle is a directory holding ``manifest.json`` (``{"format": "BEVG0001",
"tensors": [{"name", "file", "shape"}]}``) and one dump per tensor.
"""

from __future__ import annotations

import json
import re
import struct
from pathlib import Path
from typing import Dict

import numpy as np

MAGIC = b"BEVG0001"


def tensor_bytes(array) -> bytes:
    arr = np.array(array, dtype="<f4", order="C")  # ascontiguousarray would promote 0-d to 1-d
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def write_tensor(path, array) -> None:
    Path(path).write_bytes(tensor_bytes(array))


def parse_tensor(blob: bytes) -> np.ndarray:
    if blob[:8] != MAGIC:
        raise ValueError("not a BEVG0001 tensor dump")
    (ndim,) = struct.unpack_from("<I", blob, 8)
    dims = struct.unpack_from(f"<{ndim}I", blob, 12)
    offset = 12 + 4 * ndim
    count = int(np.prod(dims)) if dims else 1
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    if offset + 4 * count != len(blob):
        raise ValueError("tensor dump size does not match header")
    return data.reshape(dims).astype(np.float32)


def read_tensor(path) -> np.ndarray:
    return parse_tensor(Path(path).read_bytes())


def write_bundle(directory, tensors: Dict[str, np.ndarray]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in sorted(tensors):
        fname = f"{name}.bevg"
        write_tensor(directory / fname, tensors[name])
        entries.append({"name": name, "file": fname, "shape": list(np.shape(tensors[name]))})
    manifest = {"format": MAGIC.decode(), "tensors": entries}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def read_bundle(directory) -> Dict[str, np.ndarray]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    out = {}
    for entry in manifest["tensors"]:
        arr = read_tensor(directory / entry["file"])
        if list(arr.shape) != entry["shape"]:
            raise ValueError(f"tensor {entry['name']} shape mismatch")
        out[entry["name"]] = arr
    return out


def pgm_bytes(image: np.ndarray, scale: float | None = None) -> bytes:
    """8-bit binary graymap.  Values are multiplied by ``scale`` (default
    255 / max, or 0 for an empty image) and clipped to [0, 255]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM export needs a 2-D image")
    if scale is None:
        peak = img.max() if img.size else 0.0
        scale = 255.0 / peak if peak > 0 else 0.0
    data = np.clip(np.rint(img * scale), 0, 255).astype(np.uint8)
    h, w = data.shape
    return f"P5\n{w} {h}\n255\n".encode() + data.tobytes()


def write_pgm(path, image, scale: float | None = None) -> None:
    Path(path).write_bytes(pgm_bytes(image, scale))


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    # magic, width, height, maxval, then exactly one whitespace byte before the raster
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", blob)
    if not m:
        raise ValueError("not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval > 255:
        raise ValueError("16-bit PGM not supported")
    data = blob[m.end():]
    if len(data) < w * h:
        raise ValueError("PGM raster is truncated")
    return np.frombuffer(data[: w * h], dtype=np.uint8).reshape(h, w)
