"""Array <-> JSON packing with integrity checksums.

Arrays are stored as explicit little-endian bytes in base64 plus a sha256;
round-trips are bit-exact regardless of platform endianness.
"""

from __future__ import annotations

import base64
import hashlib
import json

import numpy as np

_LE = {"float64": "<f8", "int64": "<i8", "int8": "|i1", "uint8": "|u1"}


def pack_array(arr: np.ndarray) -> dict:
    arr = np.asarray(arr)
    if arr.dtype.name not in _LE:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    code = _LE[arr.dtype.name]
    raw = np.ascontiguousarray(arr.astype(code)).tobytes()
    return {
        "dtype": code,
        "shape": list(arr.shape),
        "sha256": hashlib.sha256(raw).hexdigest(),
        "data": base64.b64encode(raw).decode("ascii"),
    }


def unpack_array(blob: dict) -> np.ndarray:
    raw = base64.b64decode(blob["data"])
    digest = hashlib.sha256(raw).hexdigest()
    if digest != blob["sha256"]:
        raise ValueError("checksum mismatch: stored array is corrupt")
    arr = np.frombuffer(raw, dtype=np.dtype(blob["dtype"]))
    return arr.reshape(blob["shape"]).copy()


def config_digest(obj) -> str:
    """Stable sha256 of a JSON-serializable config."""
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
