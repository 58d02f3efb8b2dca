"""Forest files: versioned little-endian binary, plus a JSON debug dump.

Layout: b"DRFU", <u4 version, <u8 header length, UTF-8 JSON header, then a
sequence of arrays, each written as <u8 element count followed by the raw
little-endian elements (<f8 floats, <i8 integers).
"""

import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .forest import ForestConfig, ForestGroup, GroupedForest, Tree
from .kernel import Bandwidth

MAGIC = b"DRFU"
VERSION = 1
_F8 = np.dtype("<f8")
_I8 = np.dtype("<i8")
_TREE_FIELDS = (
    ("feature", _I8), ("threshold", _F8), ("left", _I8), ("right", _I8),
    ("leaf_start", _I8), ("leaf_stop", _I8), ("populate_rows", _I8), ("build_rows", _I8),
)


def _write_array(out, arr, dtype) -> None:
    data = np.ascontiguousarray(np.asarray(arr).reshape(-1), dtype=dtype)
    out.write(struct.pack("<Q", data.size))
    out.write(data.tobytes())


def _read_exact(src, size: int) -> bytes:
    chunk = src.read(size)
    if len(chunk) != size:
        raise DataError("Forest file is truncated")
    return chunk


def _read_array(src, dtype) -> np.ndarray:
    (count,) = struct.unpack("<Q", _read_exact(src, 8))
    return np.frombuffer(_read_exact(src, count * dtype.itemsize), dtype=dtype).astype(dtype.newbyteorder("="))


def forest_to_bytes(forest: GroupedForest) -> bytes:
    header = {
        "config": forest.config.model_dump(),
        "n": forest.n, "p": forest.p, "d": forest.d,
        "y_columns": int(forest.Y.shape[1]),
        "x_names": forest.x_names, "y_names": forest.y_names, "w_name": forest.w_name,
        "has_treatment": forest.W is not None,
        "trees_per_group": [len(g.trees) for g in forest.groups],
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))
    out.write(struct.pack("<Q", len(raw)))
    out.write(raw)
    _write_array(out, [forest.bandwidth.sigma], _F8)
    _write_array(out, forest.Y, _F8)
    if forest.W is not None:
        _write_array(out, forest.W, _F8)
    for group in forest.groups:
        _write_array(out, group.half_sample, _I8)
        for tree in group.trees:
            for name, dtype in _TREE_FIELDS:
                _write_array(out, getattr(tree, name), dtype)
    return out.getvalue()


def forest_from_bytes(blob: bytes) -> GroupedForest:
    src = io.BytesIO(blob)
    if _read_exact(src, 4) != MAGIC:
        raise DataError("Not a forest file (bad magic)")
    (version,) = struct.unpack("<I", _read_exact(src, 4))
    if version != VERSION:
        raise DataError(f"Unsupported forest file version {version}")
    (length,) = struct.unpack("<Q", _read_exact(src, 8))
    try:
        header = json.loads(_read_exact(src, length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"Corrupt forest header: {e}")
    sigma = float(_read_array(src, _F8)[0])
    Y = _read_array(src, _F8).reshape(header["n"], header["y_columns"])
    W = _read_array(src, _F8) if header["has_treatment"] else None
    groups = []
    for count in header["trees_per_group"]:
        half_sample = _read_array(src, _I8)
        trees = [Tree(**{name: _read_array(src, dtype) for name, dtype in _TREE_FIELDS}) for _ in range(count)]
        groups.append(ForestGroup(half_sample, trees))
    if src.read(1):
        raise DataError("Trailing bytes after forest data")
    return GroupedForest(
        groups=groups, bandwidth=Bandwidth(sigma), n=header["n"], p=header["p"], d=header["d"],
        config=ForestConfig(**header["config"]), Y=Y, W=W, x_names=header["x_names"],
        y_names=header["y_names"], w_name=header["w_name"],
    )


def save_forest(forest: GroupedForest, path) -> None:
    Path(path).write_bytes(forest_to_bytes(forest))


def load_forest(path) -> GroupedForest:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"Cannot read forest file {path}: {e}")
    return forest_from_bytes(blob)


def dump_forest_json(forest: GroupedForest) -> str:
    return json.dumps({
        "version": VERSION,
        "config": forest.config.model_dump(),
        "bandwidth": forest.bandwidth.sigma,
        "n": forest.n, "p": forest.p, "d": forest.d,
        "x_names": forest.x_names, "y_names": forest.y_names, "w_name": forest.w_name,
        "groups": [
            {
                "half_sample": g.half_sample.tolist(),
                "trees": [{name: getattr(t, name).tolist() for name, _ in _TREE_FIELDS} for t in g.trees],
            }
            for g in forest.groups
        ],
    }, indent=2)
