"""Volume and checkpoint files.

Both formats are one JSON header line followed by raw little-endian float64
values. Volumes store ``nx*ny*nz`` values with x fastest. Checkpoints store a
list of named arrays, each flattened in C order, concatenated in header order.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import VolumeFormatError
from .grid import GridSpec, Volume3D

VOLUME_MAGIC = "QSMV1"
CHECKPOINT_MAGIC = "QSMCK1"
_LE_F64 = np.dtype("<f8")


def _atomic_write(path: Path, header: dict, payload: bytes):
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(payload)
    os.replace(tmp, path)


def _read_header(path: Path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise VolumeFormatError(f"cannot read {path}: {exc}") from exc
    nl = raw.find(b"\n")
    if nl < 0:
        raise VolumeFormatError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise VolumeFormatError(f"{path}: header is not valid JSON") from exc
    if not isinstance(header, dict):
        raise VolumeFormatError(f"{path}: header must be a JSON object")
    return header, raw[nl + 1:]


def write_volume(path, vol: Volume3D):
    header = {
        "magic": VOLUME_MAGIC,
        "dims": list(vol.grid.dims),
        "voxel_size": list(vol.grid.voxel_size),
        "dtype": "f64",
        "order": "x-fastest",
    }
    payload = vol.data.ravel(order="F").astype(_LE_F64).tobytes()
    _atomic_write(path, header, payload)


def read_volume(path) -> Volume3D:
    header, payload = _read_header(path)
    if header.get("magic") != VOLUME_MAGIC:
        raise VolumeFormatError(f"{path}: bad magic {header.get('magic')!r}")
    if header.get("dtype") != "f64" or header.get("order") != "x-fastest":
        raise VolumeFormatError(f"{path}: unsupported dtype/order")
    try:
        grid = GridSpec(tuple(header["dims"]), tuple(header["voxel_size"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise VolumeFormatError(f"{path}: invalid grid in header ({exc})") from exc
    if len(payload) != 8 * grid.size:
        raise VolumeFormatError(
            f"{path}: payload has {len(payload)} bytes, expected {8 * grid.size}"
        )
    data = np.frombuffer(payload, dtype=_LE_F64).astype(np.float64)
    data = data.reshape(grid.dims, order="F")
    try:
        return Volume3D(grid, data)
    except ValueError as exc:
        raise VolumeFormatError(f"{path}: {exc}") from exc


def write_checkpoint(path, arrays: dict, meta: dict):
    """``arrays`` maps names to float arrays; ``meta`` is stored verbatim in the header."""
    entries = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    header = {"magic": CHECKPOINT_MAGIC, "dtype": "f64", "arrays": entries, "meta": meta}
    payload = b"".join(
        np.ascontiguousarray(v, dtype=np.float64).astype(_LE_F64).tobytes()
        for v in arrays.values()
    )
    _atomic_write(path, header, payload)


def read_checkpoint(path):
    header, payload = _read_header(path)
    if header.get("magic") != CHECKPOINT_MAGIC:
        raise VolumeFormatError(f"{path}: not a checkpoint file")
    arrays = {}
    offset = 0
    for entry in header.get("arrays", []):
        try:
            name, shape = entry["name"], tuple(int(n) for n in entry["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise VolumeFormatError(f"{path}: malformed array entry {entry!r}") from exc
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(payload):
            raise VolumeFormatError(f"{path}: truncated payload")
        arrays[name] = np.frombuffer(
            payload[offset:offset + nbytes], dtype=_LE_F64
        ).astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(payload):
        raise VolumeFormatError(f"{path}: trailing bytes after payload")
    return arrays, header.get("meta", {})


def write_mask(path, grid: GridSpec, mask: np.ndarray):
    write_volume(path, Volume3D(grid, np.asarray(mask, dtype=np.float64)))


def read_mask(path) -> tuple[GridSpec, np.ndarray]:
    v = read_volume(path)
    return v.grid, v.data != 0
